//! Contributions, annotations and ground truth, persisted as line-delimited
//! JSON with a sibling manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use hmac::{Hmac, KeyInit, Mac};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::taxonomy::{FlagId, FlagSet};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{message} at line {line}")]
    Line { line: usize, message: String },
    #[error("duplicate ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),
    #[error("contributions missing annotators: {}", .0.join(", "))]
    MissingAnnotators(Vec<String>),
    #[error("annotation from unregistered annotator {annotator:?} on {contribution_id}")]
    UnknownAnnotator { contribution_id: String, annotator: String },
    #[error("cannot sample {requested} from a pool of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("invalid contribution {id}: {reason}")]
    InvalidContribution { id: String, reason: String },
    #[error("manifest does not match records: {0}")]
    ManifestMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContributionKind {
    Issue,
    Comment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Mined,
    Synthetic,
}

/// Half-open UTC time range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl DateRange {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Option<Self> {
        (start <= end).then_some(DateRange { start, end })
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t < self.end
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }
}

/// One non-coding contribution: an issue (title and body) or an issue comment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contribution {
    pub id: String,
    pub repo: String,
    pub kind: ContributionKind,
    pub body: String,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    pub author_key: String,
    pub source: Source,
    /// Flags a synthetic contribution was written to exhibit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_flags: Option<FlagSet>,
}

impl Contribution {
    pub fn check(&self) -> Result<(), CorpusError> {
        let fail = |reason: &str| {
            Err(CorpusError::InvalidContribution {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.id.trim().is_empty() {
            return fail("empty id");
        }
        if self.body.trim().is_empty() {
            return fail("empty body");
        }
        match self.source {
            Source::Synthetic if self.target_flags.is_none() => fail("synthetic without target_flags"),
            Source::Synthetic if self.url.is_some() => fail("synthetic with a source url"),
            Source::Mined if self.target_flags.is_some() => fail("mined with target_flags"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub contribution_id: String,
    pub annotator_id: String,
    pub labels: FlagSet,
    pub annotated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agreement {
    /// Every annotator chose the same set.
    Full,
    /// Settled by an adjudicator after a disagreement.
    Adjudicated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub contribution_id: String,
    pub labels: FlagSet,
    pub agreement: Agreement,
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum DatasetRecord {
    Contribution(Contribution),
    Annotation(AnnotationRecord),
    GroundTruth(GroundTruthEntry),
}

/// Dataset records grouped by type.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub contributions: Vec<Contribution>,
    pub annotations: Vec<AnnotationRecord>,
    pub ground_truth: Vec<GroundTruthEntry>,
}

impl Dataset {
    pub fn from_records(records: Vec<DatasetRecord>) -> Self {
        let mut ds = Dataset::default();
        for r in records {
            match r {
                DatasetRecord::Contribution(c) => ds.contributions.push(c),
                DatasetRecord::Annotation(a) => ds.annotations.push(a),
                DatasetRecord::GroundTruth(g) => ds.ground_truth.push(g),
            }
        }
        ds
    }

    pub fn to_records(&self) -> Vec<DatasetRecord> {
        self.contributions
            .iter()
            .cloned()
            .map(DatasetRecord::Contribution)
            .chain(self.annotations.iter().cloned().map(DatasetRecord::Annotation))
            .chain(self.ground_truth.iter().cloned().map(DatasetRecord::GroundTruth))
            .collect()
    }

    pub fn contribution(&self, id: &str) -> Option<&Contribution> {
        self.contributions.iter().find(|c| c.id == id)
    }
}

fn strip_position(message: String) -> String {
    match message.rfind(" at line ") {
        Some(pos) if message[pos..].contains(" column ") => message[..pos].to_string(),
        _ => message,
    }
}

fn parse_typed<T: DeserializeOwned>(value: serde_json::Value, line: usize) -> Result<T, CorpusError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = strip_position(e.into_inner().to_string());
        CorpusError::Line {
            line,
            message: if path == "." {
                inner
            } else {
                format!("field `{path}`: {inner}")
            },
        }
    })
}

fn parse_record(text: &str, line: usize) -> Result<DatasetRecord, CorpusError> {
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| CorpusError::Line {
        line,
        message: format!("malformed JSON: {}", strip_position(e.to_string())),
    })?;
    let tag = value
        .as_object_mut()
        .and_then(|o| o.remove("record"))
        .and_then(|t| t.as_str().map(str::to_string))
        .ok_or_else(|| CorpusError::Line {
            line,
            message: "field `record`: missing record type".to_string(),
        })?;
    let record = match tag.as_str() {
        "contribution" => {
            let c: Contribution = parse_typed(value, line)?;
            c.check().map_err(|e| CorpusError::Line {
                line,
                message: e.to_string(),
            })?;
            DatasetRecord::Contribution(c)
        }
        "annotation" => DatasetRecord::Annotation(parse_typed(value, line)?),
        "ground_truth" => DatasetRecord::GroundTruth(parse_typed(value, line)?),
        other => {
            return Err(CorpusError::Line {
                line,
                message: format!("field `record`: unknown record type {other:?}"),
            })
        }
    };
    Ok(record)
}

fn check_unique(records: &[DatasetRecord]) -> Result<(), CorpusError> {
    let mut seen = BTreeSet::new();
    let mut dups = BTreeSet::new();
    for r in records {
        let key = match r {
            DatasetRecord::Contribution(c) => format!("contribution {}", c.id),
            DatasetRecord::Annotation(a) => {
                format!("annotation {}/{}", a.contribution_id, a.annotator_id)
            }
            DatasetRecord::GroundTruth(g) => format!("ground_truth {}", g.contribution_id),
        };
        if !seen.insert(key.clone()) {
            dups.insert(key);
        }
    }
    if dups.is_empty() {
        Ok(())
    } else {
        Err(CorpusError::DuplicateIds(dups.into_iter().collect()))
    }
}

fn write_atomically(path: &Path, contents: &[u8]) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    file.write_all(contents).map_err(io_err(&tmp))?;
    file.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Writes any serializable records as one JSON document per line.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    write_atomically(path, &out)
}

/// Reads one JSON document per line; blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, CorpusError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| CorpusError::Line {
            line: i + 1,
            message: format!("malformed JSON: {}", strip_position(e.to_string())),
        })?;
        out.push(parse_typed(value, i + 1)?);
    }
    Ok(out)
}

pub fn save_dataset(records: &[DatasetRecord], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    check_unique(records)?;
    write_jsonl(path, records)
}

/// Loads a dataset file, rejecting the first line that fails schema or flag
/// validation, and any duplicated id.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let records = parse_dataset(&text)?;
    Ok(records)
}

pub fn parse_dataset(text: &str) -> Result<Vec<DatasetRecord>, CorpusError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record(line, i + 1)?);
    }
    check_unique(&records)?;
    Ok(records)
}

/// Path of the manifest stored next to a dataset file.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("manifest.json")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub contributions: usize,
    pub by_source: BTreeMap<Source, usize>,
    pub by_kind: BTreeMap<ContributionKind, usize>,
    pub annotations: usize,
    pub ground_truth: usize,
    /// Flag occurrences over ground-truth entries.
    pub by_flag: BTreeMap<FlagId, usize>,
}

impl ManifestCounts {
    pub fn compute(records: &[DatasetRecord]) -> Self {
        let mut counts = ManifestCounts::default();
        for r in records {
            match r {
                DatasetRecord::Contribution(c) => {
                    counts.contributions += 1;
                    *counts.by_source.entry(c.source).or_default() += 1;
                    *counts.by_kind.entry(c.kind).or_default() += 1;
                }
                DatasetRecord::Annotation(_) => counts.annotations += 1,
                DatasetRecord::GroundTruth(g) => {
                    counts.ground_truth += 1;
                    for f in g.labels.iter() {
                        *counts.by_flag.entry(f).or_default() += 1;
                    }
                }
            }
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub sample_seed: Option<u64>,
    pub counts: ManifestCounts,
    #[serde(default)]
    pub provenance: Vec<String>,
}

impl DatasetManifest {
    pub fn new(
        dataset_id: impl Into<String>,
        records: &[DatasetRecord],
        created_at: DateTime<Utc>,
        sample_seed: Option<u64>,
    ) -> Self {
        DatasetManifest {
            dataset_id: dataset_id.into(),
            created_at,
            sample_seed,
            counts: ManifestCounts::compute(records),
            provenance: Vec::new(),
        }
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.provenance.push(note.into());
        self
    }

    pub fn verify(&self, records: &[DatasetRecord]) -> Result<(), CorpusError> {
        let actual = ManifestCounts::compute(records);
        if actual == self.counts {
            Ok(())
        } else {
            Err(CorpusError::ManifestMismatch(format!(
                "manifest {:?}, records {:?}",
                self.counts, actual
            )))
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        write_atomically(path.as_ref(), &json)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| CorpusError::Line {
            line: e.line(),
            message: strip_position(e.to_string()),
        })
    }
}

/// Writes the dataset and its manifest side by side.
pub fn save_with_manifest(
    records: &[DatasetRecord],
    path: impl AsRef<Path>,
    manifest: &DatasetManifest,
) -> Result<(), CorpusError> {
    manifest.verify(records)?;
    save_dataset(records, path.as_ref())?;
    manifest.save(manifest_path(path.as_ref()))
}

fn sorted_by_id(pool: &[Contribution]) -> Vec<&Contribution> {
    let mut sorted: Vec<&Contribution> = pool.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    sorted
}

fn draw<'a>(items: &[&'a Contribution], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<&'a Contribution>, CorpusError> {
    if n > items.len() {
        return Err(CorpusError::SampleTooLarge {
            requested: n,
            available: items.len(),
        });
    }
    let mut idx = rand::seq::index::sample(rng, items.len(), n).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| items[i]).collect())
}

/// Uniform sample without replacement over the pool sorted by id.
///
/// The result is returned in id order and depends only on the pool's
/// contents, `n` and `seed`.
pub fn sample_contributions(pool: &[Contribution], n: usize, seed: u64) -> Result<Vec<Contribution>, CorpusError> {
    let sorted = sorted_by_id(pool);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw(&sorted, n, &mut rng)?.into_iter().cloned().collect())
}

/// Fixed number of issues and comments to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindQuota {
    pub issues: usize,
    pub comments: usize,
}

/// Per-kind variant of [`sample_contributions`].
pub fn sample_by_kind(pool: &[Contribution], quota: KindQuota, seed: u64) -> Result<Vec<Contribution>, CorpusError> {
    let sorted = sorted_by_id(pool);
    let (issues, comments): (Vec<&Contribution>, Vec<&Contribution>) =
        sorted.into_iter().partition(|c| c.kind == ContributionKind::Issue);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = draw(&issues, quota.issues, &mut rng)?;
    picked.extend(draw(&comments, quota.comments, &mut rng)?);
    picked.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(picked.into_iter().cloned().collect())
}

/// Per-annotator label matrix for the items every annotator labeled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementInputs {
    pub annotators: Vec<String>,
    pub contribution_ids: Vec<String>,
    /// `labels[a][i]` is annotator `a`'s set for item `i`.
    pub labels: Vec<Vec<FlagSet>>,
}

impl AgreementInputs {
    /// Labels of one annotator keyed by contribution id.
    pub fn for_annotator(&self, annotator: &str) -> Option<BTreeMap<String, FlagSet>> {
        let a = self.annotators.iter().position(|x| x == annotator)?;
        Some(
            self.contribution_ids
                .iter()
                .cloned()
                .zip(self.labels[a].iter().copied())
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthBuild {
    pub entries: Vec<GroundTruthEntry>,
    pub dropped: Vec<String>,
    pub agreement_inputs: AgreementInputs,
}

impl GroundTruthBuild {
    pub fn dropped_count(&self) -> usize {
        self.dropped.len()
    }
}

/// Keeps only the contributions on which every annotator chose the same set.
pub fn build_ground_truth(
    annotations: &[AnnotationRecord],
    annotators: &[String],
) -> Result<GroundTruthBuild, CorpusError> {
    let mut by_item: BTreeMap<&str, BTreeMap<&str, FlagSet>> = BTreeMap::new();
    let mut dups = Vec::new();
    for a in annotations {
        if !annotators.contains(&a.annotator_id) {
            return Err(CorpusError::UnknownAnnotator {
                contribution_id: a.contribution_id.clone(),
                annotator: a.annotator_id.clone(),
            });
        }
        let slot = by_item.entry(&a.contribution_id).or_default();
        if slot.insert(&a.annotator_id, a.labels).is_some() {
            dups.push(format!("annotation {}/{}", a.contribution_id, a.annotator_id));
        }
    }
    if !dups.is_empty() {
        return Err(CorpusError::DuplicateIds(dups));
    }
    let missing: Vec<String> = by_item
        .iter()
        .filter(|(_, labels)| labels.len() < annotators.len())
        .map(|(id, _)| id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CorpusError::MissingAnnotators(missing));
    }

    let mut entries = Vec::new();
    let mut dropped = Vec::new();
    let mut matrix = vec![Vec::with_capacity(by_item.len()); annotators.len()];
    let mut ids = Vec::with_capacity(by_item.len());
    for (id, labels) in &by_item {
        ids.push(id.to_string());
        for (a, name) in annotators.iter().enumerate() {
            matrix[a].push(labels[name.as_str()]);
        }
        let first = labels[annotators[0].as_str()];
        if labels.values().all(|l| *l == first) {
            entries.push(GroundTruthEntry {
                contribution_id: id.to_string(),
                labels: first,
                agreement: Agreement::Full,
            });
        } else {
            dropped.push(id.to_string());
        }
    }
    Ok(GroundTruthBuild {
        entries,
        dropped,
        agreement_inputs: AgreementInputs {
            annotators: annotators.to_vec(),
            contribution_ids: ids,
            labels: matrix,
        },
    })
}

/// Keyed one-way pseudonym for a platform login.
pub fn pseudonymize_author(login: &str, key: &[u8]) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(login.as_bytes());
    let digest = mac.finalize().into_bytes();
    format!("u_{}", hex::encode(&digest[..8]))
}
