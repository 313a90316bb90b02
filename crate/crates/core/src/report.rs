//! Per-repository flag distributions and cross-repository comparison.
//!
//! A flag's share is its number of occurrences over all flag occurrences in
//! the repository, so a record labeled `{F1,F3}` counts twice. Shares are
//! stored rounded to two decimals.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::PredictionRecord;
use crate::corpus::DateRange;
use crate::taxonomy::{FlagId, FlagSet};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no records to summarize")]
    Empty,
    #[error("records span several repositories: {}", .0.join(", "))]
    MixedRepos(Vec<String>),
    #[error("a comparison needs at least 2 reports, got {0}")]
    TooFewReports(usize),
    #[error("repository {0} appears twice")]
    DuplicateRepo(String),
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for ReportError {
    fn from(e: csv::Error) -> Self {
        ReportError::Csv(e.to_string())
    }
}

pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// How many distributed records came from repaired or flagged model output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualitySidebar {
    pub needs_review: u64,
    pub repaired: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub repo: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<DateRange>,
    /// Every active flag, 0.0 when absent.
    pub percentages: BTreeMap<FlagId, f64>,
    pub occurrences: BTreeMap<FlagId, u64>,
    pub total_contributions: u64,
    pub total_occurrences: u64,
    pub quality: QualitySidebar,
}

impl DistributionReport {
    pub fn with_window(mut self, window: DateRange) -> Self {
        self.window = Some(window);
        self
    }

    pub fn percentage(&self, flag: FlagId) -> f64 {
        self.percentages.get(&flag).copied().unwrap_or(0.0)
    }

    /// Sum of the F6–F9 shares.
    pub fn negative_share(&self) -> f64 {
        round2(FlagId::NEGATIVE.iter().map(|&f| self.percentage(f)).sum())
    }
}

/// Distribution of labels for one repository.
pub fn distribution_of<'a, I>(repo: &str, labels: I) -> Result<DistributionReport, ReportError>
where
    I: IntoIterator<Item = &'a FlagSet>,
{
    let mut occurrences: BTreeMap<FlagId, u64> = FlagId::ACTIVE.iter().map(|&f| (f, 0)).collect();
    let mut contributions = 0u64;
    for set in labels {
        contributions += 1;
        for f in set.iter() {
            *occurrences.entry(f).or_default() += 1;
        }
    }
    if contributions == 0 {
        return Err(ReportError::Empty);
    }
    let total: u64 = occurrences.values().sum();
    let percentages = occurrences
        .iter()
        .map(|(&f, &n)| {
            let pct = if total == 0 {
                0.0
            } else {
                round2(100.0 * n as f64 / total as f64)
            };
            (f, pct)
        })
        .collect();
    Ok(DistributionReport {
        repo: repo.to_string(),
        window: None,
        percentages,
        occurrences,
        total_contributions: contributions,
        total_occurrences: total,
        quality: QualitySidebar::default(),
    })
}

/// Distribution over prediction records that all belong to one repository.
/// Records flagged for review are included and also counted in the sidebar.
pub fn flag_distribution(records: &[PredictionRecord]) -> Result<DistributionReport, ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let repos: BTreeSet<&str> = records.iter().map(|r| r.repo.as_deref().unwrap_or("")).collect();
    if repos.len() > 1 {
        return Err(ReportError::MixedRepos(repos.into_iter().map(str::to_string).collect()));
    }
    let repo = repos.into_iter().next().unwrap_or_default();
    let mut report = distribution_of(repo, records.iter().map(|r| &r.labels))?;
    report.quality = QualitySidebar {
        needs_review: records.iter().filter(|r| r.needs_review).count() as u64,
        repaired: records.iter().filter(|r| r.repaired).count() as u64,
    };
    Ok(report)
}

/// Splits records by repository and reports each one.
pub fn distributions_by_repo(records: &[PredictionRecord]) -> Result<Vec<DistributionReport>, ReportError> {
    let mut groups: BTreeMap<&str, Vec<PredictionRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry(r.repo.as_deref().unwrap_or(""))
            .or_default()
            .push(r.clone());
    }
    groups.values().map(|g| flag_distribution(g)).collect()
}

const DIST_FIXED: [&str; 7] = [
    "repo",
    "window_start",
    "window_end",
    "total_contributions",
    "total_occurrences",
    "needs_review",
    "repaired",
];

fn opt_time(s: &str) -> Result<Option<DateTime<Utc>>, ReportError> {
    if s.is_empty() {
        return Ok(None);
    }
    DateTime::parse_from_rfc3339(s)
        .map(|t| Some(t.with_timezone(&Utc)))
        .map_err(|e| ReportError::Csv(format!("bad timestamp {s:?}: {e}")))
}

fn num<T: std::str::FromStr>(field: &str, s: &str) -> Result<T, ReportError>
where
    T::Err: std::fmt::Display,
{
    s.parse()
        .map_err(|e| ReportError::Csv(format!("column {field}: {s:?}: {e}")))
}

/// Writes distribution reports as CSV: fixed columns, then one percentage
/// column and one count column per active flag.
pub fn write_distribution_csv<W: Write>(reports: &[DistributionReport], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = DIST_FIXED.iter().map(|s| s.to_string()).collect();
    header.extend(FlagId::ACTIVE.iter().map(|f| f.to_string()));
    header.extend(FlagId::ACTIVE.iter().map(|f| format!("{f}_count")));
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![
            r.repo.clone(),
            r.window.map(|w| w.start.to_rfc3339()).unwrap_or_default(),
            r.window.map(|w| w.end.to_rfc3339()).unwrap_or_default(),
            r.total_contributions.to_string(),
            r.total_occurrences.to_string(),
            r.quality.needs_review.to_string(),
            r.quality.repaired.to_string(),
        ];
        row.extend(FlagId::ACTIVE.iter().map(|&f| format!("{:.2}", r.percentage(f))));
        row.extend(
            FlagId::ACTIVE
                .iter()
                .map(|f| r.occurrences.get(f).copied().unwrap_or(0).to_string()),
        );
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| ReportError::Csv(e.to_string()))?;
    Ok(())
}

pub fn read_distribution_csv<R: Read>(input: R) -> Result<Vec<DistributionReport>, ReportError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ReportError::Csv(format!("missing column {name}")))
    };
    let fixed: Vec<usize> = DIST_FIXED.iter().map(|c| col(c)).collect::<Result<_, _>>()?;
    let pct_cols: Vec<usize> = FlagId::ACTIVE
        .iter()
        .map(|f| col(f.as_str()))
        .collect::<Result<_, _>>()?;
    let count_cols: Vec<usize> = FlagId::ACTIVE
        .iter()
        .map(|f| col(&format!("{f}_count")))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let get = |i: usize| row.get(i).unwrap_or("");
        let window = match (opt_time(get(fixed[1]))?, opt_time(get(fixed[2]))?) {
            (Some(s), Some(e)) => {
                Some(DateRange::new(s, e).ok_or_else(|| ReportError::Csv("window end precedes start".into()))?)
            }
            (None, None) => None,
            _ => return Err(ReportError::Csv("window needs both start and end".into())),
        };
        let mut percentages = BTreeMap::new();
        let mut occurrences = BTreeMap::new();
        for (k, &f) in FlagId::ACTIVE.iter().enumerate() {
            percentages.insert(f, num::<f64>(f.as_str(), get(pct_cols[k]))?);
            occurrences.insert(f, num::<u64>(f.as_str(), get(count_cols[k]))?);
        }
        out.push(DistributionReport {
            repo: get(fixed[0]).to_string(),
            window,
            percentages,
            occurrences,
            total_contributions: num("total_contributions", get(fixed[3]))?,
            total_occurrences: num("total_occurrences", get(fixed[4]))?,
            quality: QualitySidebar {
                needs_review: num("needs_review", get(fixed[5]))?,
                repaired: num("repaired", get(fixed[6]))?,
            },
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub repo: String,
    pub percentages: BTreeMap<FlagId, f64>,
    pub negative_share: f64,
}

/// Repositories as rows, active flags as columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_repos(reports: &[DistributionReport]) -> Result<Comparison, ReportError> {
    if reports.len() < 2 {
        return Err(ReportError::TooFewReports(reports.len()));
    }
    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    for r in reports {
        if !seen.insert(r.repo.as_str()) {
            return Err(ReportError::DuplicateRepo(r.repo.clone()));
        }
        rows.push(ComparisonRow {
            repo: r.repo.clone(),
            percentages: FlagId::ACTIVE.iter().map(|&f| (f, r.percentage(f))).collect(),
            negative_share: r.negative_share(),
        });
    }
    Ok(Comparison { rows })
}

impl Comparison {
    pub fn row(&self, repo: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.repo == repo)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ReportError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["repo".to_string()];
        header.extend(FlagId::ACTIVE.iter().map(|f| f.to_string()));
        header.push("negative_share".into());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.repo.clone()];
            rec.extend(
                FlagId::ACTIVE
                    .iter()
                    .map(|f| format!("{:.2}", row.percentages.get(f).copied().unwrap_or(0.0))),
            );
            rec.push(format!("{:.2}", row.negative_share));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| ReportError::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, ReportError> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let expected: Vec<String> = std::iter::once("repo".to_string())
            .chain(FlagId::ACTIVE.iter().map(|f| f.to_string()))
            .chain(std::iter::once("negative_share".to_string()))
            .collect();
        if headers.iter().ne(expected.iter().map(String::as_str)) {
            return Err(ReportError::Csv(format!("unexpected header {:?}", headers)));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let mut percentages = BTreeMap::new();
            for (k, &f) in FlagId::ACTIVE.iter().enumerate() {
                percentages.insert(f, num::<f64>(f.as_str(), &rec[k + 1])?);
            }
            rows.push(ComparisonRow {
                repo: rec[0].to_string(),
                percentages,
                negative_share: num("negative_share", &rec[FlagId::ACTIVE.len() + 1])?,
            });
        }
        Ok(Comparison { rows })
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8")
    }

    /// `{"repos": [...], "flags": [...], "values": [[...], ...]}` for heatmaps.
    pub fn matrix_json(&self) -> serde_json::Value {
        serde_json::json!({
            "repos": self.rows.iter().map(|r| r.repo.as_str()).collect::<Vec<_>>(),
            "flags": FlagId::ACTIVE.iter().map(|f| f.as_str()).collect::<Vec<_>>(),
            "values": self.rows.iter().map(|r| {
                FlagId::ACTIVE.iter().map(|f| r.percentages.get(f).copied().unwrap_or(0.0)).collect::<Vec<_>>()
            }).collect::<Vec<_>>(),
        })
    }
}
