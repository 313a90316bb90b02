//! LLM-backed flag classification.
//!
//! Each contribution is rendered with the prompt spec and sent to a chat
//! model. Replies that cannot be parsed or break the label-set rules are
//! sent back with a one-line correction, up to `max_retries` times; what is
//! still invalid afterwards is repaired deterministically and recorded as
//! such.

mod cache;
mod parse;
mod transport;

pub use cache::{cache_key, CachedVerdict, FileCache, MemoryCache, VerdictCache};
pub use parse::{parse_model_output, ParseFailure, ParsedOutput};
pub use transport::{
    ChatError, ChatMessage, ChatRequest, ChatTransport, FnChat, OpenAiChat, Role, Script, ScriptedChat, ScriptedReply,
    Transcript, API_KEY_ENV,
};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::clock::{Clock, SystemClock};
use crate::corpus::Contribution;
use crate::prompting::{render_body, validate_spec, PromptError, PromptRendering, PromptSpec};
use crate::taxonomy::{repair_flag_set, validate_flag_set, FlagId, FlagSet, RepairPolicy};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("model call failed for {contribution_id}: {source}")]
    Transport {
        contribution_id: String,
        #[source]
        source: ChatError,
    },
    #[error("every one of {0} classifications failed")]
    AllFailed(usize),
    #[error("run {run} is incomplete: {} failed", failed.join(", "))]
    IncompleteRun { run: u32, failed: Vec<String> },
    #[error("invalid argument: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_retries: u32,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    #[serde(with = "duration_secs")]
    pub retry_backoff: Duration,
    pub cache: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            temperature: 0.0,
            max_tokens: 512,
            max_retries: 2,
            timeout: Duration::from_secs(60),
            retry_backoff: Duration::from_millis(500),
            cache: true,
        }
    }
}

impl ModelConfig {
    pub fn check(&self) -> Result<(), ClassifyError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ClassifyError::Precondition(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.model.trim().is_empty() {
            return Err(ClassifyError::Precondition("model id is empty".into()));
        }
        Ok(())
    }
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// One validated model verdict for one contribution in one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub contribution_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repo: Option<String>,
    pub run_id: u32,
    pub labels: FlagSet,
    #[serde(default)]
    pub rationale: BTreeMap<FlagId, String>,
    pub raw_output: String,
    pub spec_version: String,
    pub model: String,
    pub repaired: bool,
    pub needs_review: bool,
    #[serde(default)]
    pub retries: u32,
    #[serde(default)]
    pub notes: Vec<String>,
    pub latency_ms: u64,
}

impl PredictionRecord {
    /// Equality ignoring timing.
    pub fn same_verdict(&self, other: &PredictionRecord) -> bool {
        let mut a = self.clone();
        a.latency_ms = other.latency_ms;
        &a == other
    }
}

/// Records from `k` complete runs over the same contributions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSet {
    pub k: u32,
    pub records: Vec<PredictionRecord>,
}

impl RunSet {
    /// Checks that every contribution appears exactly once in every run
    /// `1..=k`.
    pub fn check(&self) -> Result<(), String> {
        if self.k < 2 {
            return Err(format!("a run set needs at least 2 runs, got {}", self.k));
        }
        let mut per_run: BTreeMap<u32, BTreeSet<&str>> = BTreeMap::new();
        for r in &self.records {
            if r.run_id < 1 || r.run_id > self.k {
                return Err(format!("run id {} outside 1..={}", r.run_id, self.k));
            }
            if !per_run.entry(r.run_id).or_default().insert(&r.contribution_id) {
                return Err(format!("{} appears twice in run {}", r.contribution_id, r.run_id));
            }
        }
        let first = per_run.get(&1).cloned().unwrap_or_default();
        for run in 1..=self.k {
            let ids = per_run.get(&run).cloned().unwrap_or_default();
            if ids != first {
                let diff: Vec<&str> = ids.symmetric_difference(&first).copied().collect();
                return Err(format!("run {run} differs from run 1 on {}", diff.join(", ")));
            }
        }
        Ok(())
    }

    /// Labels per run (index 0 is run 1), keyed by contribution id.
    pub fn runs(&self) -> Vec<BTreeMap<String, FlagSet>> {
        let mut out = vec![BTreeMap::new(); self.k as usize];
        for r in &self.records {
            if let Some(run) = out.get_mut(r.run_id as usize - 1) {
                run.insert(r.contribution_id.clone(), r.labels);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub contribution_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchOutcome {
    /// Successful records in input order.
    pub records: Vec<PredictionRecord>,
    pub failures: Vec<BatchFailure>,
}

const PARSE_CORRECTION: &str =
    "Your previous answer did not contain a JSON object with a \"flags\" array of flag ids; reply again with only that JSON object.";

fn constraint_correction(problem: &str) -> String {
    format!(
        "Your previous answer broke the flag rules ({problem}); reply again with one JSON object whose \"flags\" follow the classification constraints."
    )
}

enum Attempt {
    Valid(FlagSet, ParsedOutput),
    Invalid(ParsedOutput, String),
    Unparseable,
}

fn judge(raw: &str) -> Attempt {
    let parsed = match parse_model_output(raw) {
        Ok(p) => p,
        Err(_) => return Attempt::Unparseable,
    };
    let mut known = BTreeSet::new();
    let mut unknown = Vec::new();
    for token in &parsed.flags {
        match token.parse::<FlagId>() {
            Ok(id) => {
                known.insert(id);
            }
            Err(_) => unknown.push(token.clone()),
        }
    }
    if !unknown.is_empty() {
        let msg = format!("unknown flag ids {}", unknown.join(", "));
        return Attempt::Invalid(parsed, msg);
    }
    match validate_flag_set(&known) {
        Ok(set) => Attempt::Valid(set, parsed),
        Err(v) => Attempt::Invalid(parsed, v.to_string()),
    }
}

pub struct Classifier {
    transport: Arc<dyn ChatTransport>,
    config: ModelConfig,
    cache: Option<Arc<dyn VerdictCache>>,
    policy: RepairPolicy,
    clock: Arc<dyn Clock>,
    stats: Counters,
}

#[derive(Default)]
struct Counters {
    model_calls: AtomicUsize,
    cache_hits: AtomicUsize,
}

/// Call and cache counters since construction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierStats {
    pub model_calls: usize,
    pub cache_hits: usize,
}

impl Classifier {
    pub fn new(transport: Arc<dyn ChatTransport>, config: ModelConfig) -> Self {
        Classifier {
            transport,
            config,
            cache: None,
            policy: RepairPolicy::default(),
            clock: Arc::new(SystemClock),
            stats: Counters::default(),
        }
    }

    pub fn stats(&self) -> ClassifierStats {
        ClassifierStats {
            model_calls: self.stats.model_calls.load(Ordering::SeqCst),
            cache_hits: self.stats.cache_hits.load(Ordering::SeqCst),
        }
    }

    pub fn with_cache(mut self, cache: Arc<dyn VerdictCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_repair_policy(mut self, policy: RepairPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn call(&self, contribution_id: &str, messages: &[ChatMessage]) -> Result<String, ClassifyError> {
        let request = ChatRequest {
            model: self.config.model.clone(),
            messages: messages.to_vec(),
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let mut failures = 0u32;
        loop {
            self.stats.model_calls.fetch_add(1, Ordering::SeqCst);
            match self.transport.complete(&request) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_retryable() && failures < self.config.max_retries => {
                    failures += 1;
                    warn!(contribution_id, error = %e, failures, "model call failed; retrying");
                    self.clock.sleep(self.config.retry_backoff * (1 << (failures - 1)));
                }
                Err(source) => {
                    return Err(ClassifyError::Transport {
                        contribution_id: contribution_id.to_string(),
                        source,
                    })
                }
            }
        }
    }

    fn ask(&self, contribution_id: &str, rendering: &PromptRendering) -> Result<CachedVerdict, ClassifyError> {
        let mut messages = vec![
            ChatMessage::system(&rendering.system_text),
            ChatMessage::user(&rendering.user_text),
        ];
        let started = Instant::now();
        let mut last_parsed: Option<(ParsedOutput, String)> = None;
        let mut last_raw = String::new();
        let mut retries = 0;
        for attempt in 0..=self.config.max_retries {
            let raw = self.call(contribution_id, &messages)?;
            let correction = match judge(&raw) {
                Attempt::Valid(labels, parsed) => {
                    let mut notes = Vec::new();
                    let rationale = keep_rationale(&parsed, labels, &mut notes);
                    return Ok(CachedVerdict {
                        labels,
                        rationale,
                        raw_output: raw,
                        repaired: false,
                        needs_review: false,
                        retries,
                        notes,
                        latency_ms: started.elapsed().as_millis() as u64,
                    });
                }
                Attempt::Invalid(parsed, problem) => {
                    debug!(contribution_id, attempt, problem, "constraint violation");
                    last_parsed = Some((parsed, raw.clone()));
                    constraint_correction(&problem)
                }
                Attempt::Unparseable => {
                    debug!(contribution_id, attempt, "unparseable reply");
                    PARSE_CORRECTION.to_string()
                }
            };
            last_raw = raw.clone();
            if attempt < self.config.max_retries {
                retries += 1;
                messages.push(ChatMessage::assistant(raw));
                messages.push(ChatMessage::user(correction));
            }
        }

        let latency_ms = started.elapsed().as_millis() as u64;
        match last_parsed {
            Some((parsed, raw)) => {
                let mut notes = Vec::new();
                let mut known = BTreeSet::new();
                for token in &parsed.flags {
                    match token.parse::<FlagId>() {
                        Ok(id) => {
                            known.insert(id);
                        }
                        Err(_) => notes.push(format!("dropped unknown flag {token:?}")),
                    }
                }
                let repair = repair_flag_set(&known, self.policy);
                notes.extend(repair.notes.iter().cloned());
                let rationale = keep_rationale(&parsed, repair.flags, &mut notes);
                Ok(CachedVerdict {
                    labels: repair.flags,
                    rationale,
                    raw_output: raw,
                    repaired: true,
                    needs_review: repair.needs_review,
                    retries,
                    notes,
                    latency_ms,
                })
            }
            None => Ok(CachedVerdict {
                labels: FlagSet::neutral(),
                rationale: BTreeMap::new(),
                raw_output: last_raw,
                repaired: false,
                needs_review: true,
                retries,
                notes: vec![format!(
                    "no parseable output after {} attempts; defaulted to F11",
                    self.config.max_retries + 1
                )],
                latency_ms,
            }),
        }
    }

    fn classify_rendered(
        &self,
        contribution: &Contribution,
        rendering: &PromptRendering,
        run_id: u32,
        use_cache: bool,
    ) -> Result<PredictionRecord, ClassifyError> {
        let cache = self.cache.as_ref().filter(|_| use_cache && self.config.cache);
        let key = cache_key(&rendering.content_hash, &self.config.model, self.config.temperature);
        let verdict = match cache.and_then(|c| c.get(&key)) {
            Some(hit) => {
                self.stats.cache_hits.fetch_add(1, Ordering::SeqCst);
                hit
            }
            None => {
                let verdict = self.ask(&contribution.id, rendering)?;
                if let Some(c) = cache {
                    c.put(&key, &verdict);
                }
                verdict
            }
        };
        Ok(PredictionRecord {
            contribution_id: contribution.id.clone(),
            repo: Some(contribution.repo.clone()),
            run_id,
            labels: verdict.labels,
            rationale: verdict.rationale,
            raw_output: verdict.raw_output,
            spec_version: rendering.spec_version.clone(),
            model: self.config.model.clone(),
            repaired: verdict.repaired,
            needs_review: verdict.needs_review,
            retries: verdict.retries,
            notes: verdict.notes,
            latency_ms: verdict.latency_ms,
        })
    }

    pub fn classify_one(
        &self,
        contribution: &Contribution,
        spec: &PromptSpec,
    ) -> Result<PredictionRecord, ClassifyError> {
        self.config.check()?;
        let rendering = render_body(spec, &contribution.body)?;
        self.classify_rendered(contribution, &rendering, 1, true)
    }

    fn batch(
        &self,
        contributions: &[Contribution],
        spec: &PromptSpec,
        parallelism: usize,
        run_id: u32,
        use_cache: bool,
    ) -> Result<BatchOutcome, ClassifyError> {
        if parallelism == 0 {
            return Err(ClassifyError::Precondition("parallelism must be at least 1".into()));
        }
        self.config.check()?;
        let defects = validate_spec(spec);
        if !defects.is_empty() {
            return Err(PromptError::InvalidSpec(defects).into());
        }
        let slots: Vec<Mutex<Option<Result<PredictionRecord, ClassifyError>>>> =
            contributions.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = parallelism.min(contributions.len()).max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(c) = contributions.get(i) else { break };
                    let result = render_body(spec, &c.body)
                        .map_err(ClassifyError::from)
                        .and_then(|r| self.classify_rendered(c, &r, run_id, use_cache));
                    *slots[i].lock().unwrap() = Some(result);
                });
            }
        });
        let mut outcome = BatchOutcome {
            records: Vec::with_capacity(contributions.len()),
            failures: Vec::new(),
        };
        for (c, slot) in contributions.iter().zip(slots) {
            match slot.into_inner().unwrap().expect("every slot filled") {
                Ok(r) => outcome.records.push(r),
                Err(e) => outcome.failures.push(BatchFailure {
                    contribution_id: c.id.clone(),
                    error: e.to_string(),
                }),
            }
        }
        if !contributions.is_empty() && outcome.records.is_empty() {
            return Err(ClassifyError::AllFailed(contributions.len()));
        }
        Ok(outcome)
    }

    /// Classifies many contributions with at most `parallelism` requests in
    /// flight. Output order matches input order; individual failures are
    /// reported without aborting the batch.
    pub fn classify_batch(
        &self,
        contributions: &[Contribution],
        spec: &PromptSpec,
        parallelism: usize,
    ) -> Result<BatchOutcome, ClassifyError> {
        self.batch(contributions, spec, parallelism, 1, true)
    }

    /// Runs `k` independent batches (cache bypassed) for consistency analysis.
    pub fn run_consistency(
        &self,
        contributions: &[Contribution],
        spec: &PromptSpec,
        k: u32,
        parallelism: usize,
    ) -> Result<RunSet, ClassifyError> {
        if k < 2 {
            return Err(ClassifyError::Precondition(format!(
                "consistency needs at least 2 runs, got {k}"
            )));
        }
        let mut records = Vec::with_capacity(contributions.len() * k as usize);
        for run in 1..=k {
            let outcome = self.batch(contributions, spec, parallelism, run, false)?;
            if !outcome.failures.is_empty() {
                return Err(ClassifyError::IncompleteRun {
                    run,
                    failed: outcome.failures.into_iter().map(|f| f.contribution_id).collect(),
                });
            }
            records.extend(outcome.records);
        }
        Ok(RunSet { k, records })
    }
}

fn keep_rationale(parsed: &ParsedOutput, labels: FlagSet, notes: &mut Vec<String>) -> BTreeMap<FlagId, String> {
    let mut out = BTreeMap::new();
    for (key, text) in &parsed.rationale {
        match key.parse::<FlagId>() {
            Ok(id) if labels.contains(id) => {
                out.insert(id, text.clone());
            }
            _ => notes.push(format!("dropped rationale for {key}")),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ContributionKind, Source};
    use crate::prompting::default_spec;
    use chrono::Utc;

    fn contribution(id: &str, body: &str) -> Contribution {
        Contribution {
            id: id.into(),
            repo: "o/r".into(),
            kind: ContributionKind::Comment,
            body: body.into(),
            created_at: Utc::now(),
            url: None,
            author_key: "u".into(),
            source: Source::Mined,
            target_flags: None,
        }
    }

    fn scripted(json: &str) -> Arc<ScriptedChat> {
        Arc::new(ScriptedChat::new(serde_json::from_str(json).unwrap()))
    }

    fn config() -> ModelConfig {
        ModelConfig {
            retry_backoff: Duration::ZERO,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn happy_path() {
        let chat = scripted(r#"{"default": "{\"flags\":[\"F1\"],\"rationale\":{\"F1\":\"thanks\"}}"}"#);
        let clf = Classifier::new(chat.clone(), config());
        let r = clf
            .classify_one(&contribution("a", "thanks!"), &default_spec())
            .unwrap();
        assert_eq!(r.labels, FlagSet::parse(["F1"]).unwrap());
        assert!(!r.repaired && !r.needs_review);
        assert_eq!(r.retries, 0);
        assert_eq!(r.rationale[&FlagId::F1], "thanks");
        assert_eq!(chat.calls(), 1);
    }

    #[test]
    fn self_correction_on_retry() {
        let chat = scripted(
            r#"{"scripts":[{"match":"body","replies":["{\"flags\":[\"F11\",\"F2\"]}","{\"flags\":[\"F2\"]}"]}]}"#,
        );
        let clf = Classifier::new(chat.clone(), config());
        let r = clf.classify_one(&contribution("a", "body"), &default_spec()).unwrap();
        assert_eq!(r.labels, FlagSet::parse(["F2"]).unwrap());
        assert!(!r.repaired);
        assert_eq!(r.retries, 1);
        assert_eq!(chat.calls(), 2);
    }

    #[test]
    fn persistent_violation_is_repaired() {
        let chat = scripted(r#"{"default": "{\"flags\":[\"F1\",\"F7\"],\"rationale\":{\"F1\":\"a\",\"F7\":\"b\"}}"}"#);
        let clf = Classifier::new(chat.clone(), config());
        let r = clf.classify_one(&contribution("a", "x"), &default_spec()).unwrap();
        assert_eq!(r.labels, FlagSet::parse(["F7"]).unwrap());
        assert!(r.repaired && r.needs_review);
        assert_eq!(r.rationale.keys().copied().collect::<Vec<_>>(), vec![FlagId::F7]);
        assert!(r.notes.iter().any(|n| n == "dropped rationale for F1"));
        assert_eq!(chat.calls(), 3);
    }

    #[test]
    fn garbage_falls_back_to_neutral_for_review() {
        let chat = scripted(r#"{"default": "I cannot help with that."}"#);
        let clf = Classifier::new(chat.clone(), config());
        let r = clf.classify_one(&contribution("a", "x"), &default_spec()).unwrap();
        assert_eq!(r.labels, FlagSet::neutral());
        assert!(r.needs_review && !r.repaired);
        assert_eq!(r.raw_output, "I cannot help with that.");
        assert_eq!(chat.calls(), 3);
    }

    #[test]
    fn unknown_flags_are_dropped_after_retries() {
        let chat = scripted(r#"{"default": "{\"flags\":[\"F3\",\"F42\"]}"}"#);
        let clf = Classifier::new(chat, config());
        let r = clf.classify_one(&contribution("a", "x"), &default_spec()).unwrap();
        assert_eq!(r.labels, FlagSet::parse(["F3"]).unwrap());
        assert!(r.repaired && !r.needs_review);
    }

    #[test]
    fn correction_messages_are_appended() {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        let chat = Arc::new(FnChat::new(move |req: &ChatRequest| {
            log.lock().unwrap().push(req.messages.len());
            Ok(if req.messages.len() == 2 {
                "nope"
            } else {
                r#"{"flags":["F4"]}"#
            }
            .to_string())
        }));
        let clf = Classifier::new(chat, config());
        let r = clf.classify_one(&contribution("a", "x"), &default_spec()).unwrap();
        assert_eq!(r.labels, FlagSet::parse(["F4"]).unwrap());
        assert_eq!(*seen.lock().unwrap(), vec![2, 4]);
    }

    #[test]
    fn transport_failure_carries_contribution_id() {
        let chat = scripted(r#"{"default": {"error": "connection reset"}}"#);
        let clf = Classifier::new(chat.clone(), config());
        let err = clf
            .classify_one(&contribution("c-9", "x"), &default_spec())
            .unwrap_err();
        assert!(matches!(err, ClassifyError::Transport { ref contribution_id, .. } if contribution_id == "c-9"));
        assert_eq!(chat.calls(), 3);
    }

    #[test]
    fn consistency_requires_two_runs() {
        let chat = scripted(r#"{"default": "{\"flags\":[\"F11\"]}"}"#);
        let clf = Classifier::new(chat, config());
        let err = clf
            .run_consistency(&[contribution("a", "x")], &default_spec(), 1, 1)
            .unwrap_err();
        assert!(matches!(err, ClassifyError::Precondition(_)));
    }

    #[test]
    fn negative_temperature_is_rejected() {
        let chat = scripted(r#"{"default": "{\"flags\":[\"F11\"]}"}"#);
        let clf = Classifier::new(
            chat,
            ModelConfig {
                temperature: -0.5,
                ..config()
            },
        );
        assert!(clf.classify_one(&contribution("a", "x"), &default_spec()).is_err());
    }
}
