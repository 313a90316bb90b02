mod common;

use chrono::{TimeZone, Utc};
use common::*;
use oss_ethics::corpus::{
    load_dataset, parse_dataset, sample_contributions, save_dataset, AnnotationRecord, Contribution, ContributionKind,
    DatasetRecord, Source,
};
use proptest::prelude::*;

fn contribution_strategy() -> impl Strategy<Value = Contribution> {
    (
        0u32..10_000,
        "[^\u{0}]{1,60}",
        any::<bool>(),
        any::<bool>(),
        valid_set(),
        0i64..100_000_000,
    )
        .prop_map(|(n, body, issue, synthetic, target, secs)| Contribution {
            id: format!("o/r#{n}"),
            repo: "o/r".into(),
            kind: if issue {
                ContributionKind::Issue
            } else {
                ContributionKind::Comment
            },
            body: format!("b{body}"),
            created_at: Utc.timestamp_opt(1_600_000_000 + secs, 0).unwrap(),
            url: (!synthetic).then(|| format!("https://example.test/{n}")),
            author_key: format!("{n:08x}"),
            source: if synthetic { Source::Synthetic } else { Source::Mined },
            target_flags: synthetic.then(|| to_flagset(&target)),
        })
}

fn records_strategy() -> impl Strategy<Value = Vec<DatasetRecord>> {
    proptest::collection::vec(
        prop_oneof![
            contribution_strategy().prop_map(DatasetRecord::Contribution),
            (0u32..100, valid_set()).prop_map(|(n, set)| DatasetRecord::Annotation(AnnotationRecord {
                contribution_id: format!("o/r#{n}"),
                annotator_id: "a".into(),
                labels: to_flagset(&set),
                annotated_at: Utc.timestamp_opt(1_700_000_000, 0).unwrap(),
            })),
        ],
        0..20,
    )
    .prop_map(|records| {
        let mut seen = std::collections::BTreeSet::new();
        records
            .into_iter()
            .filter(|r| {
                seen.insert(match r {
                    DatasetRecord::Contribution(c) => format!("c {}", c.id),
                    DatasetRecord::Annotation(a) => format!("a {} {}", a.contribution_id, a.annotator_id),
                    DatasetRecord::GroundTruth(g) => format!("g {}", g.contribution_id),
                })
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn save_then_load_is_identity(records in records_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&records, &path).unwrap();
        prop_assert_eq!(load_dataset(&path).unwrap(), records);
    }

    #[test]
    fn sampling_is_seeded_and_duplicate_free(
        pool in proptest::collection::btree_map(0u32..500, contribution_strategy(), 1..40),
        seed in any::<u64>(),
    ) {
        let pool: Vec<Contribution> = pool.into_iter().map(|(n, mut c)| { c.id = format!("o/r#{n}"); c }).collect();
        let n = pool.len() / 2;
        let a = sample_contributions(&pool, n, seed).unwrap();
        let b = sample_contributions(&pool, n, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), n);
        let mut ids: Vec<_> = a.iter().map(|c| &c.id).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
    }
}

#[test]
fn duplicate_ids_are_not_saved() {
    let record = |n| {
        DatasetRecord::Annotation(AnnotationRecord {
            contribution_id: "o/r#1".into(),
            annotator_id: "a".into(),
            labels: to_flagset(&raw(&[n])),
            annotated_at: Utc.timestamp_opt(1_700_000_000, 0).unwrap(),
        })
    };
    let dir = tempfile::tempdir().unwrap();
    assert!(save_dataset(&[record(1), record(2)], dir.path().join("d.jsonl")).is_err());
}

#[test]
fn oversized_sample_is_an_error() {
    let pool: Vec<Contribution> = Vec::new();
    assert!(sample_contributions(&pool, 1, 0).is_err());
}

#[test]
fn malformed_lines_are_rejected_with_position() {
    let err = parse_dataset("{\"record\":\"contribution\"}\n").unwrap_err();
    assert!(err.to_string().contains("line 1"), "{err}");
}
