mod common;

use std::sync::Arc;

use chrono::{TimeZone, Utc};
use common::*;
use oss_ethics::classifier::{
    cache_key, ChatError, ChatRequest, Classifier, ClassifyError, FnChat, MemoryCache, ModelConfig, Script,
    ScriptedChat, ScriptedReply, Transcript,
};
use oss_ethics::clock::ManualClock;
use oss_ethics::corpus::{Contribution, ContributionKind, Source};
use oss_ethics::metrics::{consistency, ItemConsistency};
use oss_ethics::prompting::{default_spec, render_body};
use oss_ethics::taxonomy::{validate_flag_set, FlagSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn items(n: usize) -> Vec<Contribution> {
    (0..n)
        .map(|i| Contribution {
            id: format!("item-{i:02}"),
            repo: "fixture/clf".into(),
            kind: ContributionKind::Issue,
            body: format!("<<body {i:02}>>"),
            created_at: Utc.with_ymd_and_hms(2024, 4, 1, 0, 0, 0).unwrap(),
            url: None,
            author_key: "k".into(),
            source: Source::Mined,
            target_flags: None,
        })
        .collect()
}

fn config() -> ModelConfig {
    ModelConfig {
        cache: true,
        ..ModelConfig::default()
    }
}

fn verdict(flags: &[&str]) -> String {
    serde_json::json!({ "flags": flags }).to_string()
}

fn quiet_clock() -> Arc<ManualClock> {
    Arc::new(ManualClock::new(Utc::now()))
}

#[test]
fn batch_output_keeps_input_order_under_random_latency() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sets: Vec<RawSet> = random_sets(&mut rng, 16);
    let scripts = sets
        .iter()
        .enumerate()
        .map(|(i, s)| Script {
            pattern: format!("<<body {i:02}>>"),
            replies: vec![ScriptedReply::Delayed {
                text: serde_json::json!({ "flags": s.iter().map(|n| format!("F{n}")).collect::<Vec<_>>() }).to_string(),
                delay_ms: rng.random_range(0..15),
            }],
        })
        .collect();
    let chat = Arc::new(ScriptedChat::new(Transcript { scripts, default: None }));
    let clf = Classifier::new(chat, config());
    let out = clf.classify_batch(&items(16), &default_spec(), 4).unwrap();
    assert!(out.failures.is_empty());
    for (i, r) in out.records.iter().enumerate() {
        assert_eq!(r.contribution_id, format!("item-{i:02}"));
        assert_eq!(from_flagset(&r.labels), sets[i]);
        assert!(validate_flag_set(&r.labels.to_set()).is_ok());
    }
}

#[test]
fn second_batch_is_served_from_cache() {
    let chat = Arc::new(FnChat::new(|_: &_| Ok(verdict(&["F3"]))));
    let cache = Arc::new(MemoryCache::new());
    let clf = Classifier::new(chat.clone(), config()).with_cache(cache.clone());
    let first = clf.classify_batch(&items(5), &default_spec(), 2).unwrap();
    assert_eq!(chat.calls(), 5);
    let again = Classifier::new(chat.clone(), config()).with_cache(cache);
    let second = again.classify_batch(&items(5), &default_spec(), 2).unwrap();
    assert_eq!(chat.calls(), 5, "no model calls on the second pass");
    assert_eq!(again.stats().cache_hits, 5);
    for (a, b) in first.records.iter().zip(&second.records) {
        assert!(a.same_verdict(b));
    }
}

#[test]
fn permanent_failures_are_reported_not_fatal() {
    let chat = Arc::new(FnChat::new(|req: &ChatRequest| {
        if req.messages.iter().any(|m| m.content.contains("<<body 04>>")) {
            Err(ChatError::Fatal("model refused".into()))
        } else {
            Ok(verdict(&["F1"]))
        }
    }));
    let clf = Classifier::new(chat, config()).with_clock(quiet_clock());
    let out = clf.classify_batch(&items(10), &default_spec(), 3).unwrap();
    assert_eq!(out.records.len(), 9);
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].contribution_id, "item-04");
}

#[test]
fn transient_errors_are_retried() {
    let transcript = Transcript {
        scripts: vec![Script {
            pattern: "<<body 00>>".into(),
            replies: vec![
                ScriptedReply::Error { error: "503".into() },
                ScriptedReply::Text(verdict(&["F2"])),
            ],
        }],
        default: None,
    };
    let clock = quiet_clock();
    let clf = Classifier::new(Arc::new(ScriptedChat::new(transcript)), config()).with_clock(clock.clone());
    let r = clf.classify_one(&items(1)[0], &default_spec()).unwrap();
    assert_eq!(r.labels, FlagSet::parse(["F2"]).unwrap());
    assert_eq!(clock.sleeps().len(), 1);
}

#[test]
fn deterministic_stub_runs_agree_and_scripted_divergence_is_seen() {
    let spec = default_spec();
    let steady = Arc::new(FnChat::new(|_: &_| Ok(verdict(&["F6", "F7"]))));
    let runs = Classifier::new(steady, config())
        .run_consistency(&items(4), &spec, 3, 2)
        .unwrap();
    runs.check().unwrap();
    let c = consistency(&runs).unwrap();
    assert_eq!((c.exact_match_pct, c.flag_match_pct), (100.0, 100.0));

    // Item 2 answers differently on its second run only.
    let transcript = Transcript {
        scripts: vec![Script {
            pattern: "<<body 02>>".into(),
            replies: vec![
                ScriptedReply::Text(verdict(&["F1"])),
                ScriptedReply::Text(verdict(&["F4"])),
            ],
        }],
        default: Some(ScriptedReply::Text(verdict(&["F11"]))),
    };
    let runs = Classifier::new(Arc::new(ScriptedChat::new(transcript)), config())
        .run_consistency(&items(4), &spec, 2, 2)
        .unwrap();
    let c = consistency(&runs).unwrap();
    assert_eq!(c.exact_match_pct, 75.0);
    assert_eq!(c.flag_match_pct, 75.0);
    let diverged: Vec<_> = c
        .per_contribution
        .iter()
        .filter(|(_, v)| **v == ItemConsistency::Disjoint)
        .collect();
    assert_eq!(diverged.len(), 1);
}

#[test]
fn a_single_run_is_not_a_consistency_study() {
    let chat = Arc::new(FnChat::new(|_: &_| Ok(verdict(&["F1"]))));
    let err = Classifier::new(chat, config())
        .run_consistency(&items(2), &default_spec(), 1, 1)
        .unwrap_err();
    assert!(matches!(err, ClassifyError::Precondition(_)));
}

#[test]
fn every_reply_shape_ends_in_a_valid_set() {
    let replies = [
        "{\"flags\": []}",
        "{\"flags\": [\"F10\"]}",
        "{\"flags\": [\"F1\", \"F6\"]}",
        "{\"flags\": [\"F1\", \"F2\", \"F6\"]}",
        "{\"flags\": [\"F11\", \"F9\"]}",
        "{\"flags\": [\"F99\", \"F3\"]}",
        "no json here",
        "```json\n{\"flags\":[\"F5\"]}\n```",
    ];
    for reply in replies {
        let chat = Arc::new(FnChat::new(move |_: &_| Ok(reply.to_string())));
        let r = Classifier::new(chat, config())
            .classify_one(&items(1)[0], &default_spec())
            .unwrap();
        assert!(oracle_valid(&from_flagset(&r.labels)), "{reply} → {}", r.labels);
        assert!(validate_flag_set(&r.labels.to_set()).is_ok());
    }
}

proptest! {
    #[test]
    fn cache_keys_separate_inputs(a in ".{1,40}", b in ".{1,40}", t in 0.0f64..2.0) {
        let spec = default_spec();
        let ra = render_body(&spec, &a).unwrap();
        let rb = render_body(&spec, &b).unwrap();
        if a != b {
            prop_assert_ne!(&ra.content_hash, &rb.content_hash);
        }
        let base = cache_key(&ra.content_hash, "m", t);
        prop_assert_ne!(&base, &cache_key(&ra.content_hash, "m2", t));
        prop_assert_ne!(&base, &cache_key(&ra.content_hash, "m", t + 0.5));
        prop_assert_eq!(&base, &cache_key(&ra.content_hash, "m", t));
    }
}
