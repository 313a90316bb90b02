//! Classification, agreement and consistency metrics.
//!
//! Labels are keyed by contribution id. Only the ten active flags are
//! scored. A precision or recall with a zero denominator counts as 0 and is
//! listed in the report's `zero_denominators`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::classifier::{PredictionRecord, RunSet};
use crate::corpus::GroundTruthEntry;
use crate::taxonomy::{FlagId, FlagSet};

/// Flag sets keyed by contribution id.
pub type Labels = BTreeMap<String, FlagSet>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("id sets differ (only in first: [{}], only in second: [{}])", only_left.join(", "), only_right.join(", "))]
    IdMismatch {
        only_left: Vec<String>,
        only_right: Vec<String>,
    },
    #[error("nothing to evaluate")]
    Empty,
    #[error("flag subset is empty")]
    EmptySubset,
    #[error("{0} appears more than once")]
    DuplicateId(String),
    #[error("consistency needs at least 2 runs, got {0}")]
    TooFewRuns(usize),
    #[error("incomplete run set: {0}")]
    IncompleteRuns(String),
    #[error("unknown metric selector {0:?}")]
    BadSelector(String),
    #[error("metric {0} not present in report")]
    MissingMetric(String),
}

/// Labels of one run of prediction records.
pub fn prediction_labels(records: &[PredictionRecord]) -> Result<Labels, MetricsError> {
    let mut out = Labels::new();
    for r in records {
        if out.insert(r.contribution_id.clone(), r.labels).is_some() {
            return Err(MetricsError::DuplicateId(r.contribution_id.clone()));
        }
    }
    Ok(out)
}

pub fn truth_labels(entries: &[GroundTruthEntry]) -> Result<Labels, MetricsError> {
    let mut out = Labels::new();
    for e in entries {
        if out.insert(e.contribution_id.clone(), e.labels).is_some() {
            return Err(MetricsError::DuplicateId(e.contribution_id.clone()));
        }
    }
    Ok(out)
}

fn check_aligned(left: &Labels, right: &Labels) -> Result<(), MetricsError> {
    if left.len() == right.len() && left.keys().eq(right.keys()) {
        return Ok(());
    }
    let l: BTreeSet<&String> = left.keys().collect();
    let r: BTreeSet<&String> = right.keys().collect();
    Err(MetricsError::IdMismatch {
        only_left: l.difference(&r).map(|s| s.to_string()).collect(),
        only_right: r.difference(&l).map(|s| s.to_string()).collect(),
    })
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `None` when nothing was predicted.
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `None` when the flag never occurs in the truth.
    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagCounts {
    pub items: u64,
    pub per_flag: BTreeMap<FlagId, Confusion>,
}

impl FlagCounts {
    pub fn get(&self, flag: FlagId) -> Confusion {
        self.per_flag.get(&flag).copied().unwrap_or_default()
    }
}

pub fn per_flag_counts(predictions: &Labels, truth: &Labels) -> Result<FlagCounts, MetricsError> {
    check_aligned(predictions, truth)?;
    let mut per_flag: BTreeMap<FlagId, Confusion> = FlagId::ACTIVE.iter().map(|&f| (f, Confusion::default())).collect();
    for (id, pred) in predictions {
        let gold = &truth[id];
        for (flag, c) in per_flag.iter_mut() {
            match (pred.contains(*flag), gold.contains(*flag)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    Ok(FlagCounts {
        items: predictions.len() as u64,
        per_flag,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// F1–F5 and F11.
    PositiveNeutral,
    /// F6–F9.
    Negative,
    /// All active flags.
    Overall,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::PositiveNeutral, Scope::Negative, Scope::Overall];

    pub fn flags(self) -> Vec<FlagId> {
        match self {
            Scope::PositiveNeutral => FlagId::POSITIVE.iter().copied().chain([FlagId::F11]).collect(),
            Scope::Negative => FlagId::NEGATIVE.to_vec(),
            Scope::Overall => FlagId::ACTIVE.to_vec(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scope::PositiveNeutral => "positive_neutral",
            Scope::Negative => "negative",
            Scope::Overall => "overall",
        }
    }

    /// Row label used in the tabular export.
    pub fn label(self) -> &'static str {
        match self {
            Scope::PositiveNeutral => "F1-F5, F11",
            Scope::Negative => "F6-F9",
            Scope::Overall => "Overall",
        }
    }
}

impl FromStr for Scope {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive_neutral" | "positive" => Ok(Scope::PositiveNeutral),
            "negative" => Ok(Scope::Negative),
            "overall" | "all" => Ok(Scope::Overall),
            _ => Err(MetricsError::BadSelector(s.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    Micro,
    Macro,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Aggregated P/R/F1 plus the flags whose precision or recall fell back to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scores: Prf,
    pub zero_denominators: Vec<String>,
}

/// Micro pools the subset's counts; macro averages per-flag P, R and F1.
pub fn aggregate(counts: &FlagCounts, subset: &[FlagId], mode: Averaging) -> Result<Aggregate, MetricsError> {
    if subset.is_empty() {
        return Err(MetricsError::EmptySubset);
    }
    let mut zero = Vec::new();
    let scores = match mode {
        Averaging::Micro => {
            let mut pooled = Confusion::default();
            for &f in subset {
                pooled.add(&counts.get(f));
            }
            let p = pooled.precision().unwrap_or_else(|| {
                zero.push("micro precision".to_string());
                0.0
            });
            let r = pooled.recall().unwrap_or_else(|| {
                zero.push("micro recall".to_string());
                0.0
            });
            Prf {
                precision: p,
                recall: r,
                f1: f1_score(p, r),
            }
        }
        Averaging::Macro => {
            let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
            for &f in subset {
                let s = flag_score(f, counts.get(f));
                if !s.precision_defined {
                    zero.push(format!("{f} precision"));
                }
                if !s.recall_defined {
                    zero.push(format!("{f} recall"));
                }
                sp += s.precision;
                sr += s.recall;
                sf += s.f1;
            }
            let n = subset.len() as f64;
            Prf {
                precision: sp / n,
                recall: sr / n,
                f1: sf / n,
            }
        }
    };
    if !zero.is_empty() {
        debug!(?mode, zero = ?zero, "zero denominators counted as 0");
    }
    Ok(Aggregate {
        scores,
        zero_denominators: zero,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagScore {
    pub flag: FlagId,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Confusion,
    pub precision_defined: bool,
    pub recall_defined: bool,
}

fn flag_score(flag: FlagId, counts: Confusion) -> FlagScore {
    let p = counts.precision();
    let r = counts.recall();
    let (precision, recall) = (p.unwrap_or(0.0), r.unwrap_or(0.0));
    FlagScore {
        flag,
        precision,
        recall,
        f1: f1_score(precision, recall),
        counts,
        precision_defined: p.is_some(),
        recall_defined: r.is_some(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeScores {
    pub scope: Scope,
    pub micro: Prf,
    #[serde(rename = "macro")]
    pub macro_: Prf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelMetrics {
    pub subset_accuracy: f64,
    /// Per-item precision, recall and F1 averaged over items.
    pub example_based: Prf,
}

pub fn multilabel_metrics(predictions: &Labels, truth: &Labels) -> Result<MultiLabelMetrics, MetricsError> {
    check_aligned(predictions, truth)?;
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut exact = 0usize;
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for (id, pred) in predictions {
        let gold = &truth[id];
        if pred == gold {
            exact += 1;
        }
        let common = pred.intersection_len(gold) as f64;
        let p = if pred.is_empty() {
            0.0
        } else {
            common / pred.len() as f64
        };
        let r = if gold.is_empty() {
            0.0
        } else {
            common / gold.len() as f64
        };
        sp += p;
        sr += r;
        sf += f1_score(p, r);
    }
    let n = predictions.len() as f64;
    Ok(MultiLabelMetrics {
        subset_accuracy: exact as f64 / n,
        example_based: Prf {
            precision: sp / n,
            recall: sr / n,
            f1: sf / n,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub evaluated: u64,
    pub per_flag: Vec<FlagScore>,
    pub scopes: Vec<ScopeScores>,
    pub subset_accuracy: f64,
    pub example_based: Prf,
    pub zero_denominators: Vec<String>,
}

impl EvaluationReport {
    pub fn scope(&self, scope: Scope) -> Option<&ScopeScores> {
        self.scopes.iter().find(|s| s.scope == scope)
    }

    pub fn scope_mut(&mut self, scope: Scope) -> Option<&mut ScopeScores> {
        self.scopes.iter_mut().find(|s| s.scope == scope)
    }

    pub fn flag(&self, flag: FlagId) -> Option<&FlagScore> {
        self.per_flag.iter().find(|s| s.flag == flag)
    }

    pub fn value(&self, selector: MetricSelector) -> Option<f64> {
        match selector {
            MetricSelector::Scoped {
                measure,
                averaging,
                scope,
            } => {
                let s = self.scope(scope)?;
                let prf = match averaging {
                    Averaging::Micro => s.micro,
                    Averaging::Macro => s.macro_,
                };
                Some(measure.pick(prf))
            }
            MetricSelector::SubsetAccuracy => Some(self.subset_accuracy),
            MetricSelector::Example(measure) => Some(measure.pick(self.example_based)),
        }
    }

    /// Scope rows with micro/macro columns for P, R and F1.
    pub fn table_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "flags",
            "precision_micro",
            "precision_macro",
            "recall_micro",
            "recall_macro",
            "f1_micro",
            "f1_macro",
        ])
        .expect("in-memory write");
        for s in &self.scopes {
            w.write_record([
                s.scope.label().to_string(),
                fmt4(s.micro.precision),
                fmt4(s.macro_.precision),
                fmt4(s.micro.recall),
                fmt4(s.macro_.recall),
                fmt4(s.micro.f1),
                fmt4(s.macro_.f1),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// One row per flag, for heatmap rendering.
    pub fn flag_matrix_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["flag", "precision", "recall", "f1", "tp", "fp", "fn", "tn"])
            .expect("in-memory write");
        for s in &self.per_flag {
            w.write_record([
                s.flag.to_string(),
                fmt4(s.precision),
                fmt4(s.recall),
                fmt4(s.f1),
                s.counts.tp.to_string(),
                s.counts.fp.to_string(),
                s.counts.fn_.to_string(),
                s.counts.tn.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Per-flag matrix as JSON: `{"flags": [...], "metrics": [...], "values": [[p, r, f1], ...]}`.
    pub fn flag_matrix_json(&self) -> serde_json::Value {
        serde_json::json!({
            "flags": self.per_flag.iter().map(|s| s.flag.as_str()).collect::<Vec<_>>(),
            "metrics": ["precision", "recall", "f1"],
            "values": self.per_flag.iter().map(|s| [s.precision, s.recall, s.f1]).collect::<Vec<_>>(),
        })
    }
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

/// The full report: per-flag scores, three scopes in both averaging modes,
/// subset accuracy and example-based scores.
pub fn evaluate(predictions: &Labels, truth: &Labels) -> Result<EvaluationReport, MetricsError> {
    let counts = per_flag_counts(predictions, truth)?;
    let ml = multilabel_metrics(predictions, truth)?;
    let per_flag: Vec<FlagScore> = FlagId::ACTIVE.iter().map(|&f| flag_score(f, counts.get(f))).collect();
    let mut zero = Vec::new();
    for s in &per_flag {
        if !s.precision_defined {
            zero.push(format!("{} precision", s.flag));
        }
        if !s.recall_defined {
            zero.push(format!("{} recall", s.flag));
        }
    }
    let mut scopes = Vec::new();
    for scope in Scope::ALL {
        let flags = scope.flags();
        let micro = aggregate(&counts, &flags, Averaging::Micro)?;
        let macro_ = aggregate(&counts, &flags, Averaging::Macro)?;
        for z in micro.zero_denominators {
            zero.push(format!("{} {z}", scope.as_str()));
        }
        scopes.push(ScopeScores {
            scope,
            micro: micro.scores,
            macro_: macro_.scores,
        });
    }
    Ok(EvaluationReport {
        evaluated: counts.items,
        per_flag,
        scopes,
        subset_accuracy: ml.subset_accuracy,
        example_based: ml.example_based,
        zero_denominators: zero,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagKappa {
    pub flag: FlagId,
    pub observed: f64,
    pub expected: f64,
    /// `None` when expected agreement is 1.
    pub kappa: Option<f64>,
    /// Whether either annotator used the flag.
    pub used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub items: u64,
    pub per_flag: Vec<FlagKappa>,
    /// Mean kappa over used flags with a defined kappa.
    pub macro_kappa: Option<f64>,
}

impl AgreementReport {
    pub fn flag(&self, flag: FlagId) -> Option<&FlagKappa> {
        self.per_flag.iter().find(|k| k.flag == flag)
    }
}

/// Per-flag binary Cohen's kappa between two annotators.
pub fn cohen_kappa(a: &Labels, b: &Labels) -> Result<AgreementReport, MetricsError> {
    check_aligned(a, b)?;
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = a.len() as f64;
    let mut per_flag = Vec::new();
    let (mut sum, mut used_defined) = (0.0, 0usize);
    for &flag in &FlagId::ACTIVE {
        // cells[x][y]: annotator a says x, b says y
        let mut cells = [[0u64; 2]; 2];
        for (id, la) in a {
            let x = la.contains(flag) as usize;
            let y = b[id].contains(flag) as usize;
            cells[x][y] += 1;
        }
        let observed = (cells[0][0] + cells[1][1]) as f64 / n;
        let a1 = (cells[1][0] + cells[1][1]) as f64 / n;
        let b1 = (cells[0][1] + cells[1][1]) as f64 / n;
        let expected = a1 * b1 + (1.0 - a1) * (1.0 - b1);
        let kappa = (expected < 1.0).then(|| (observed - expected) / (1.0 - expected));
        let used = cells[0][1] + cells[1][0] + cells[1][1] > 0;
        if let (true, Some(k)) = (used, kappa) {
            sum += k;
            used_defined += 1;
        }
        per_flag.push(FlagKappa {
            flag,
            observed,
            expected,
            kappa,
            used,
        });
    }
    Ok(AgreementReport {
        items: a.len() as u64,
        per_flag,
        macro_kappa: (used_defined > 0).then(|| sum / used_defined as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemConsistency {
    /// Same set in every run.
    Identical,
    /// Sets differ but share at least one flag across all runs.
    Overlapping,
    /// No flag common to all runs.
    Disjoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub k: u32,
    pub items: u64,
    pub exact_match_pct: f64,
    pub flag_match_pct: f64,
    /// Same statistics averaged over run pairs.
    pub pairwise_exact_match_pct: f64,
    pub pairwise_flag_match_pct: f64,
    pub per_contribution: BTreeMap<String, ItemConsistency>,
}

pub fn consistency(runset: &RunSet) -> Result<ConsistencyReport, MetricsError> {
    runset.check().map_err(MetricsError::IncompleteRuns)?;
    consistency_of_runs(&runset.runs())
}

/// Consistency over `runs[r][id]`. Every run must cover the same ids.
pub fn consistency_of_runs(runs: &[Labels]) -> Result<ConsistencyReport, MetricsError> {
    if runs.len() < 2 {
        return Err(MetricsError::TooFewRuns(runs.len()));
    }
    for run in &runs[1..] {
        check_aligned(&runs[0], run).map_err(|e| MetricsError::IncompleteRuns(e.to_string()))?;
    }
    if runs[0].is_empty() {
        return Err(MetricsError::Empty);
    }
    let pairs = runs.len() * (runs.len() - 1) / 2;
    let (mut exact, mut flag, mut pair_exact, mut pair_flag) = (0usize, 0usize, 0.0, 0.0);
    let mut per_contribution = BTreeMap::new();
    for id in runs[0].keys() {
        let sets: Vec<FlagSet> = runs.iter().map(|r| r[id]).collect();
        let identical = sets.iter().all(|s| *s == sets[0]);
        let common = FlagId::ACTIVE.iter().any(|&f| sets.iter().all(|s| s.contains(f)));
        let (mut same, mut shared) = (0usize, 0usize);
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                same += (sets[i] == sets[j]) as usize;
                shared += (sets[i].intersection_len(&sets[j]) > 0) as usize;
            }
        }
        pair_exact += same as f64 / pairs as f64;
        pair_flag += shared as f64 / pairs as f64;
        exact += identical as usize;
        flag += common as usize;
        let detail = if identical {
            ItemConsistency::Identical
        } else if common {
            ItemConsistency::Overlapping
        } else {
            ItemConsistency::Disjoint
        };
        per_contribution.insert(id.clone(), detail);
    }
    let n = runs[0].len() as f64;
    Ok(ConsistencyReport {
        k: runs.len() as u32,
        items: runs[0].len() as u64,
        exact_match_pct: 100.0 * exact as f64 / n,
        flag_match_pct: 100.0 * flag as f64 / n,
        pairwise_exact_match_pct: 100.0 * pair_exact / n,
        pairwise_flag_match_pct: 100.0 * pair_flag / n,
        per_contribution,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Precision,
    Recall,
    F1,
}

impl Measure {
    fn pick(self, prf: Prf) -> f64 {
        match self {
            Measure::Precision => prf.precision,
            Measure::Recall => prf.recall,
            Measure::F1 => prf.f1,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Measure::Precision => "precision",
            Measure::Recall => "recall",
            Measure::F1 => "f1",
        }
    }
}

/// Which report value a gate checks. Text form: `macro-precision`,
/// `micro-f1:negative`, `subset-accuracy`, `example-recall`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricSelector {
    Scoped {
        measure: Measure,
        averaging: Averaging,
        scope: Scope,
    },
    SubsetAccuracy,
    Example(Measure),
}

impl Default for MetricSelector {
    fn default() -> Self {
        MetricSelector::Scoped {
            measure: Measure::Precision,
            averaging: Averaging::Macro,
            scope: Scope::Overall,
        }
    }
}

impl fmt::Display for MetricSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSelector::Scoped {
                measure,
                averaging,
                scope,
            } => {
                let avg = match averaging {
                    Averaging::Micro => "micro",
                    Averaging::Macro => "macro",
                };
                write!(f, "{avg}-{}", measure.as_str())?;
                if *scope != Scope::Overall {
                    write!(f, ":{}", scope.as_str())?;
                }
                Ok(())
            }
            MetricSelector::SubsetAccuracy => f.write_str("subset-accuracy"),
            MetricSelector::Example(m) => write!(f, "example-{}", m.as_str()),
        }
    }
}

impl FromStr for MetricSelector {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MetricsError::BadSelector(s.to_string());
        let text = s.trim().to_ascii_lowercase();
        if text == "subset-accuracy" {
            return Ok(MetricSelector::SubsetAccuracy);
        }
        let (head, scope) = match text.split_once(':') {
            Some((h, sc)) => (h, sc.parse::<Scope>().map_err(|_| bad())?),
            None => (text.as_str(), Scope::Overall),
        };
        let (prefix, measure) = head.split_once('-').ok_or_else(bad)?;
        let measure = match measure {
            "precision" => Measure::Precision,
            "recall" => Measure::Recall,
            "f1" => Measure::F1,
            _ => return Err(bad()),
        };
        match prefix {
            "micro" => Ok(MetricSelector::Scoped {
                measure,
                averaging: Averaging::Micro,
                scope,
            }),
            "macro" => Ok(MetricSelector::Scoped {
                measure,
                averaging: Averaging::Macro,
                scope,
            }),
            "example" if text.split_once(':').is_none() => Ok(MetricSelector::Example(measure)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for MetricSelector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MetricSelector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub selector: MetricSelector,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
    /// `value - threshold`.
    pub margin: f64,
}

pub fn threshold_gate(
    report: &EvaluationReport,
    selector: MetricSelector,
    threshold: f64,
) -> Result<GateOutcome, MetricsError> {
    let value = report
        .value(selector)
        .ok_or_else(|| MetricsError::MissingMetric(selector.to_string()))?;
    Ok(GateOutcome {
        selector,
        value,
        threshold,
        passed: value >= threshold,
        margin: value - threshold,
    })
}
