//! Annotation workflow: blind label queues, validated submissions, live
//! agreement and review of flagged classifier output.
//!
//! [`AnnotationService`] holds the state and is synchronous; [`router`]
//! exposes it over HTTP. Every accepted submission rewrites the dataset file
//! atomically, so restarting from that file restores the same state.

mod http;

pub use http::{router, serve};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::classifier::PredictionRecord;
use crate::clock::{Clock, SystemClock};
use crate::corpus::{
    build_ground_truth, load_dataset, save_dataset, Agreement, AnnotationRecord, Contribution, CorpusError, Dataset,
    GroundTruthEntry,
};
use crate::metrics::{cohen_kappa, AgreementReport, Labels};
use crate::taxonomy::{validate_flag_set, FlagId, FlagSet};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown annotator {0}")]
    UnknownAnnotator(String),
    #[error("unknown contribution {0}")]
    UnknownContribution(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceConfig {
    /// Independent annotators whose unanimous labels form the ground truth.
    pub annotators: Vec<String>,
    /// Optional reviewer who triages flagged predictions and, when
    /// `adjudicate` is set, settles disagreements.
    #[serde(default)]
    pub reviewer: Option<String>,
    /// Keep disagreements settled by the reviewer instead of dropping them.
    #[serde(default)]
    pub adjudicate: bool,
}

impl ServiceConfig {
    pub fn new<S: Into<String>>(annotators: impl IntoIterator<Item = S>) -> Self {
        ServiceConfig {
            annotators: annotators.into_iter().map(Into::into).collect(),
            reviewer: None,
            adjudicate: false,
        }
    }

    fn check(&self) -> Result<(), ServiceError> {
        if self.annotators.is_empty() {
            return Err(ServiceError::Config("at least one annotator is required".into()));
        }
        let unique: BTreeSet<&String> = self.annotators.iter().collect();
        if unique.len() != self.annotators.len() {
            return Err(ServiceError::Config("annotator ids must be distinct".into()));
        }
        if let Some(r) = &self.reviewer {
            if unique.contains(r) {
                return Err(ServiceError::Config(format!(
                    "{r} cannot be both annotator and reviewer"
                )));
            }
        }
        if self.adjudicate && self.reviewer.is_none() {
            return Err(ServiceError::Config("adjudication needs a reviewer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueMode {
    /// Blind annotation: no suggestions, no other labels.
    #[default]
    Annotate,
    /// Classifier suggestion attached when one exists.
    Review,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub labels: FlagSet,
    pub rationale: BTreeMap<FlagId, String>,
    pub raw_output: String,
    pub repaired: bool,
    pub needs_review: bool,
    pub notes: Vec<String>,
}

impl From<&PredictionRecord> for Suggestion {
    fn from(r: &PredictionRecord) -> Self {
        Suggestion {
            labels: r.labels,
            rationale: r.rationale.clone(),
            raw_output: r.raw_output.clone(),
            repaired: r.repaired,
            needs_review: r.needs_review,
            notes: r.notes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueItem {
    pub contribution: Contribution,
    /// Annotators who have not labeled this item yet.
    pub pending_annotators: Vec<String>,
    /// Labels by others; only filled for the reviewer.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub other_labels: BTreeMap<String, FlagSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestion: Option<Suggestion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub annotator_id: String,
    pub labeled: usize,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextItem {
    pub item: Option<QueueItem>,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SubmitOutcome {
    Accepted {
        /// The item is now fully labeled and the ground truth was refreshed.
        completed: bool,
    },
    Rejected {
        reasons: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disagreement {
    pub contribution_id: String,
    pub labels: BTreeMap<String, FlagSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjudicated: Option<FlagSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub annotators: [String; 2],
    pub report: AgreementReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementSnapshot {
    /// Items labeled by every annotator.
    pub complete_items: usize,
    /// `None` until at least one item is complete.
    pub unanimity_pct: Option<f64>,
    pub pairs: Vec<PairAgreement>,
    pub disagreements: Vec<Disagreement>,
    pub ground_truth: usize,
}

impl AgreementSnapshot {
    pub fn is_empty(&self) -> bool {
        self.complete_items == 0
    }

    /// Kappa report of the first annotator pair.
    pub fn kappa(&self) -> Option<&AgreementReport> {
        self.pairs.first().map(|p| &p.report)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub contribution: Contribution,
    pub prediction: PredictionRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewed: Option<FlagSet>,
}

struct State {
    dataset: Dataset,
    /// contribution id → annotator → labels
    labels: BTreeMap<String, BTreeMap<String, FlagSet>>,
}

pub struct AnnotationService {
    config: ServiceConfig,
    path: Option<PathBuf>,
    predictions: BTreeMap<String, PredictionRecord>,
    clock: Arc<dyn Clock>,
    state: RwLock<State>,
}

impl AnnotationService {
    /// In-memory service; nothing is persisted.
    pub fn new(dataset: Dataset, config: ServiceConfig) -> Result<Self, ServiceError> {
        config.check()?;
        let mut labels: BTreeMap<String, BTreeMap<String, FlagSet>> = BTreeMap::new();
        for a in &dataset.annotations {
            if dataset.contribution(&a.contribution_id).is_none() {
                return Err(ServiceError::UnknownContribution(a.contribution_id.clone()));
            }
            if !config.annotators.contains(&a.annotator_id) && config.reviewer.as_ref() != Some(&a.annotator_id) {
                return Err(ServiceError::UnknownAnnotator(a.annotator_id.clone()));
            }
            labels
                .entry(a.contribution_id.clone())
                .or_default()
                .insert(a.annotator_id.clone(), a.labels);
        }
        let mut dataset = dataset;
        dataset.contributions.sort_by(|a, b| a.id.cmp(&b.id));
        let service = AnnotationService {
            config,
            path: None,
            predictions: BTreeMap::new(),
            clock: Arc::new(SystemClock),
            state: RwLock::new(State { dataset, labels }),
        };
        {
            let mut st = service.state.write().unwrap();
            let gt = service.derive_ground_truth(&st)?;
            st.dataset.ground_truth = gt;
        }
        Ok(service)
    }

    /// Service persisting to `path`, which must hold a dataset file.
    pub fn open(path: impl AsRef<Path>, config: ServiceConfig) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let dataset = Dataset::from_records(load_dataset(path)?);
        let mut service = Self::new(dataset, config)?;
        service.path = Some(path.to_path_buf());
        Ok(service)
    }

    pub fn with_predictions(mut self, records: Vec<PredictionRecord>) -> Self {
        self.predictions = records.into_iter().map(|r| (r.contribution_id.clone(), r)).collect();
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn is_reviewer(&self, who: &str) -> bool {
        self.config.reviewer.as_deref() == Some(who)
    }

    fn check_known(&self, who: &str) -> Result<(), ServiceError> {
        if self.config.annotators.iter().any(|a| a == who) || self.is_reviewer(who) {
            Ok(())
        } else {
            Err(ServiceError::UnknownAnnotator(who.to_string()))
        }
    }

    fn annotator_labels<'a>(&self, st: &'a State, id: &str) -> BTreeMap<&'a str, FlagSet> {
        st.labels
            .get(id)
            .map(|m| {
                m.iter()
                    .filter(|(who, _)| !self.is_reviewer(who))
                    .map(|(who, l)| (who.as_str(), *l))
                    .collect()
            })
            .unwrap_or_default()
    }

    fn is_complete(&self, st: &State, id: &str) -> bool {
        self.annotator_labels(st, id).len() == self.config.annotators.len()
    }

    fn is_disagreement(&self, st: &State, id: &str) -> bool {
        let labels = self.annotator_labels(st, id);
        labels.len() == self.config.annotators.len() && labels.values().collect::<BTreeSet<_>>().len() > 1
    }

    fn reviewer_label(&self, st: &State, id: &str) -> Option<FlagSet> {
        let reviewer = self.config.reviewer.as_ref()?;
        st.labels.get(id)?.get(reviewer).copied()
    }

    /// Items the reviewer should look at: disagreements when adjudicating,
    /// then flagged predictions.
    fn review_ids(&self, st: &State) -> Vec<String> {
        let mut ids = BTreeSet::new();
        if self.config.adjudicate {
            ids.extend(
                st.dataset
                    .contributions
                    .iter()
                    .filter(|c| self.is_disagreement(st, &c.id))
                    .map(|c| c.id.clone()),
            );
        }
        ids.extend(
            self.predictions
                .values()
                .filter(|p| p.needs_review || p.repaired)
                .filter(|p| st.dataset.contribution(&p.contribution_id).is_some())
                .map(|p| p.contribution_id.clone()),
        );
        ids.into_iter().collect()
    }

    fn derive_ground_truth(&self, st: &State) -> Result<Vec<GroundTruthEntry>, ServiceError> {
        let complete: Vec<AnnotationRecord> = st
            .dataset
            .annotations
            .iter()
            .filter(|a| !self.is_reviewer(&a.annotator_id) && self.is_complete(st, &a.contribution_id))
            .cloned()
            .collect();
        let build = build_ground_truth(&complete, &self.config.annotators)?;
        let mut entries = build.entries;
        if self.config.adjudicate {
            for id in &build.dropped {
                if let Some(labels) = self.reviewer_label(st, id) {
                    entries.push(GroundTruthEntry {
                        contribution_id: id.clone(),
                        labels,
                        agreement: Agreement::Adjudicated,
                    });
                }
            }
            entries.sort_by(|a, b| a.contribution_id.cmp(&b.contribution_id));
        }
        Ok(entries)
    }

    /// Lowest-id item the annotator has not labeled yet.
    pub fn next_item(&self, annotator: &str, mode: QueueMode) -> Result<NextItem, ServiceError> {
        self.check_known(annotator)?;
        let st = self.state.read().unwrap();
        let done = |id: &str| st.labels.get(id).is_some_and(|m| m.contains_key(annotator));
        let candidates: Vec<String> = if self.is_reviewer(annotator) {
            self.review_ids(&st)
        } else {
            st.dataset.contributions.iter().map(|c| c.id.clone()).collect()
        };
        let labeled = candidates.iter().filter(|id| done(id)).count();
        let next = candidates.iter().find(|id| !done(id));
        let item = next.map(|id| {
            let contribution = st.dataset.contribution(id).expect("known id").clone();
            let mine = self.annotator_labels(&st, id);
            let pending_annotators = self
                .config
                .annotators
                .iter()
                .filter(|a| !mine.contains_key(a.as_str()))
                .cloned()
                .collect();
            let reviewer = self.is_reviewer(annotator);
            QueueItem {
                contribution,
                pending_annotators,
                other_labels: if reviewer {
                    mine.iter().map(|(k, v)| (k.to_string(), *v)).collect()
                } else {
                    BTreeMap::new()
                },
                suggestion: (reviewer || mode == QueueMode::Review)
                    .then(|| self.predictions.get(id).map(Suggestion::from))
                    .flatten(),
            }
        });
        Ok(NextItem {
            progress: Progress {
                annotator_id: annotator.to_string(),
                labeled,
                remaining: candidates.len() - labeled,
            },
            item,
        })
    }

    /// Validates and stores one verdict. Rejections carry the reasons; only
    /// storage failures are errors.
    pub fn submit(
        &self,
        annotator: &str,
        contribution_id: &str,
        flags: &[String],
    ) -> Result<SubmitOutcome, ServiceError> {
        self.check_known(annotator)?;
        let mut st = self.state.write().unwrap();
        if st.dataset.contribution(contribution_id).is_none() {
            return Err(ServiceError::UnknownContribution(contribution_id.to_string()));
        }
        let reject = |reasons: Vec<String>| Ok(SubmitOutcome::Rejected { reasons });
        if st
            .labels
            .get(contribution_id)
            .is_some_and(|m| m.contains_key(annotator))
        {
            return reject(vec!["already labeled".into()]);
        }
        if self.is_reviewer(annotator) && !self.review_ids(&st).iter().any(|id| id == contribution_id) {
            return reject(vec!["item is not awaiting review".into()]);
        }
        let mut ids = BTreeSet::new();
        let mut unknown = Vec::new();
        for token in flags {
            match token.parse::<FlagId>() {
                Ok(id) => {
                    ids.insert(id);
                }
                Err(_) => unknown.push(format!("unknown flag {token}")),
            }
        }
        if !unknown.is_empty() {
            return reject(unknown);
        }
        let labels = match validate_flag_set(&ids) {
            Ok(set) => set,
            Err(v) => return reject(v.iter().map(|x| x.to_string()).collect()),
        };

        let record = AnnotationRecord {
            contribution_id: contribution_id.to_string(),
            annotator_id: annotator.to_string(),
            labels,
            annotated_at: self.clock.now(),
        };
        st.dataset.annotations.push(record);
        st.labels
            .entry(contribution_id.to_string())
            .or_default()
            .insert(annotator.to_string(), labels);
        let completed = if self.is_reviewer(annotator) {
            self.config.adjudicate && self.is_disagreement(&st, contribution_id)
        } else {
            self.is_complete(&st, contribution_id)
        };
        let previous_gt = if completed {
            let gt = self.derive_ground_truth(&st)?;
            Some(std::mem::replace(&mut st.dataset.ground_truth, gt))
        } else {
            None
        };
        if let Some(path) = &self.path {
            if let Err(e) = save_dataset(&st.dataset.to_records(), path) {
                // keep memory and disk in step
                st.dataset.annotations.pop();
                if let Some(m) = st.labels.get_mut(contribution_id) {
                    m.remove(annotator);
                }
                if let Some(gt) = previous_gt {
                    st.dataset.ground_truth = gt;
                }
                return Err(e.into());
            }
        }
        info!(annotator, contribution_id, %labels, completed, "label accepted");
        Ok(SubmitOutcome::Accepted { completed })
    }

    pub fn agreement_stats(&self) -> AgreementSnapshot {
        let st = self.state.read().unwrap();
        let complete: Vec<&String> = st.labels.keys().filter(|id| self.is_complete(&st, id)).collect();
        let mut disagreements = Vec::new();
        for id in &complete {
            if self.is_disagreement(&st, id) {
                disagreements.push(Disagreement {
                    contribution_id: id.to_string(),
                    labels: self
                        .annotator_labels(&st, id)
                        .into_iter()
                        .map(|(k, v)| (k.to_string(), v))
                        .collect(),
                    adjudicated: self.reviewer_label(&st, id).filter(|_| self.config.adjudicate),
                });
            }
        }
        let mut pairs = Vec::new();
        if !complete.is_empty() {
            let per_annotator =
                |who: &str| -> Labels { complete.iter().map(|id| ((*id).clone(), st.labels[*id][who])).collect() };
            let names = &self.config.annotators;
            for i in 0..names.len() {
                for j in i + 1..names.len() {
                    let report = cohen_kappa(&per_annotator(&names[i]), &per_annotator(&names[j]))
                        .expect("aligned non-empty label maps");
                    pairs.push(PairAgreement {
                        annotators: [names[i].clone(), names[j].clone()],
                        report,
                    });
                }
            }
        }
        let n = complete.len();
        AgreementSnapshot {
            complete_items: n,
            unanimity_pct: (n > 0).then(|| 100.0 * (n - disagreements.len()) as f64 / n as f64),
            pairs,
            disagreements,
            ground_truth: st.dataset.ground_truth.len(),
        }
    }

    /// Flagged predictions with their contributions, in id order.
    pub fn review_queue(&self) -> Vec<ReviewItem> {
        let st = self.state.read().unwrap();
        self.predictions
            .values()
            .filter(|p| p.needs_review || p.repaired)
            .filter_map(|p| {
                Some(ReviewItem {
                    contribution: st.dataset.contribution(&p.contribution_id)?.clone(),
                    prediction: p.clone(),
                    reviewed: self.reviewer_label(&st, &p.contribution_id),
                })
            })
            .collect()
    }

    pub fn ground_truth(&self) -> Vec<GroundTruthEntry> {
        self.state.read().unwrap().dataset.ground_truth.clone()
    }

    pub fn dataset(&self) -> Dataset {
        self.state.read().unwrap().dataset.clone()
    }
}
