//! Command-line entry point. Every command reads and writes plain files;
//! artifact-producing commands also write `<output>.run.json`.
//!
//! Exit codes: 0 success or gate pass, 1 gate fail, 2 usage error,
//! 3 runtime error.

mod config;
mod manifest;

pub use config::{ClassifySection, Config, GateSection, IngestSection, ServeSection};
pub use manifest::{InputRef, RunManifest};

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::annotation_service::{AnnotationService, ServiceConfig};
use crate::classifier::{
    ChatTransport, Classifier, FileCache, OpenAiChat, PredictionRecord, RunSet, ScriptedChat, API_KEY_ENV,
};
use crate::clock::{Clock, ManualClock, SystemClock};
use crate::corpus::{
    build_ground_truth, load_dataset, sample_by_kind, sample_contributions, save_with_manifest, AnnotationRecord,
    Dataset, DatasetManifest, DatasetRecord, DateRange, KindQuota,
};
use crate::http::{HttpTransport, RecordedTransport, UreqTransport};
use crate::ingest::{FetchConfig, GithubClient, IngestError, ResumeCursor, TOKEN_ENV};
use crate::metrics::{
    cohen_kappa, consistency, evaluate, prediction_labels, threshold_gate, truth_labels, EvaluationReport, Labels,
    MetricSelector,
};
use crate::prompting::{default_spec, diff_specs, validate_spec, PromptSpec};
use crate::report::{compare_repos, distributions_by_repo, write_distribution_csv, DistributionReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_GATE_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "oss-ethics",
    version,
    about = "Ethical-flag classification for OSS issues and comments"
)]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check repositories against the activity criteria.
    Screen(ScreenArgs),
    /// Mine issues and comments of one repository into a dataset file.
    Ingest(IngestArgs),
    /// Draw a seeded random sample of contributions.
    Sample(SampleArgs),
    /// Classify every contribution of a dataset.
    Classify(ClassifyArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Agreement statistics across classifier runs.
    Consistency(ConsistencyArgs),
    /// Pass/fail check of one report metric against a threshold.
    Gate(GateArgs),
    /// Per-repository flag distribution of predictions.
    Distribution(DistributionArgs),
    /// Side-by-side table of several distribution reports.
    Compare(CompareArgs),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
    /// Cohen's kappa between two annotators.
    Agreement(AgreementArgs),
    /// Validate a prompt spec file.
    SpecCheck(SpecCheckArgs),
    /// Section-level differences between two prompt specs.
    SpecDiff(SpecDiffArgs),
}

#[derive(Debug, Args)]
pub struct OfflineArgs {
    /// Replay recorded HTTP exchanges instead of calling the API.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Pretend the current time is this (RFC 3339); waits become instant.
    #[arg(long, value_parser = parse_instant)]
    pub as_of: Option<DateTime<Utc>>,
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    #[arg(required = true)]
    pub repos: Vec<String>,
    #[command(flatten)]
    pub offline: OfflineArgs,
    #[arg(long)]
    pub min_total_issues: Option<u64>,
    #[arg(long)]
    pub min_open_issues: Option<u64>,
    #[arg(long)]
    pub max_days_since_commit: Option<u32>,
    /// JSON lines output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// `owner/name`
    pub repo: String,
    /// Window start (inclusive), `YYYY-MM-DD` or RFC 3339.
    #[arg(long, value_parser = parse_instant)]
    pub from: DateTime<Utc>,
    /// Window end (exclusive).
    #[arg(long, value_parser = parse_instant)]
    pub to: DateTime<Utc>,
    #[arg(long)]
    pub out: PathBuf,
    /// Key for author pseudonyms.
    #[arg(long, default_value = "")]
    pub author_key: String,
    /// Continue from a cursor written by an interrupted run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub offline: OfflineArgs,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Sample size; omit when using --issues/--comments.
    #[arg(long, required_unless_present_any = ["issues", "comments"])]
    pub n: Option<usize>,
    #[arg(long, conflicts_with = "n")]
    pub issues: Option<usize>,
    #[arg(long, conflicts_with = "n")]
    pub comments: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Prompt spec JSON; the bundled spec when absent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Independent runs; above 1 also writes a run set.
    #[arg(long, default_value_t = 1)]
    pub runs: u32,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Scripted model transcript (JSON) instead of a live endpoint.
    #[arg(long)]
    pub stub: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub no_cache: bool,
    /// Predictions as JSON lines.
    #[arg(long)]
    pub out: PathBuf,
    /// Run set output; `<out>.runset.json` when absent.
    #[arg(long)]
    pub runset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction JSON lines.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Dataset file holding ground-truth records.
    #[arg(long)]
    pub truth: PathBuf,
    /// Run to score when predictions hold several.
    #[arg(long, default_value_t = 1)]
    pub run: u32,
    #[arg(long)]
    pub out: PathBuf,
    /// Scope table CSV; `<out stem>.table.csv` when absent.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Per-flag matrix CSV; `<out stem>.flags.csv` when absent.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConsistencyArgs {
    #[arg(long)]
    pub runset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GateArgs {
    #[arg(long)]
    pub report: PathBuf,
    /// e.g. `macro-precision`, `micro-f1:negative`, `subset-accuracy`.
    #[arg(long)]
    pub metric: Option<MetricSelector>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DistributionArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub run: u32,
    #[arg(long, value_parser = parse_instant, requires = "to")]
    pub from: Option<DateTime<Utc>>,
    #[arg(long, value_parser = parse_instant, requires = "from")]
    pub to: Option<DateTime<Utc>>,
    /// JSON array of reports, one per repository.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Distribution JSON files.
    #[arg(long, num_args = 1.., required = true)]
    pub reports: Vec<PathBuf>,
    /// Comparison CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub listen: Option<String>,
    /// Comma-separated annotator ids.
    #[arg(long, value_delimiter = ',')]
    pub annotators: Vec<String>,
    #[arg(long)]
    pub reviewer: Option<String>,
    #[arg(long)]
    pub adjudicate: bool,
    /// Prediction JSON lines for review mode.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    /// Dataset file with annotation records.
    #[arg(long)]
    pub annotations: PathBuf,
    /// The two annotators to compare; required when there are more than two.
    #[arg(long, value_delimiter = ',')]
    pub annotators: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpecCheckArgs {
    pub spec: PathBuf,
}

#[derive(Debug, Args)]
pub struct SpecDiffArgs {
    pub before: PathBuf,
    pub after: PathBuf,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Usage(m) => serde_json::json!({"error": {"kind": "usage", "message": m}}),
            CliError::Runtime(e) => serde_json::json!({
                "error": {
                    "kind": "runtime",
                    "message": e.to_string(),
                    "causes": e.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
                }
            }),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_instant(s: &str) -> Result<DateTime<Utc>, String> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
        .map_err(|_| format!("expected YYYY-MM-DD or RFC 3339, got {s:?}"))
}

/// Process entry: logging, argument parsing, exit code.
pub fn main() -> i32 {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    run(std::env::args_os(), &mut std::io::stdout())
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Results go to `out`; errors go to stderr as JSON.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                eprint!("{}", e.render());
                return EXIT_USAGE;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    let raw: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli, &raw, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli, raw: &[String], out: &mut dyn Write) -> Result<i32, CliError> {
    let config = match &cli.config {
        Some(p) => Config::load(p).map_err(|e| usage(e.to_string()))?,
        None => Config::default(),
    };
    match cli.command {
        Command::Screen(a) => screen(&config, a, out),
        Command::Ingest(a) => ingest(&config, a, raw, out),
        Command::Sample(a) => sample(a, raw, out),
        Command::Classify(a) => classify(&config, a, raw, out),
        Command::Evaluate(a) => evaluate_cmd(a, raw, out),
        Command::Consistency(a) => consistency_cmd(a, raw, out),
        Command::Gate(a) => gate(&config, a, out),
        Command::Distribution(a) => distribution(a, raw, out),
        Command::Compare(a) => compare(a, raw, out),
        Command::Serve(a) => serve(&config, a),
        Command::Agreement(a) => agreement(a, raw, out),
        Command::SpecCheck(a) => spec_check(a, out),
        Command::SpecDiff(a) => spec_diff(a, out),
    }
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).context("serializing output")?;
    writeln!(out, "{text}").context("writing output")?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn load(path: &Path) -> anyhow::Result<Dataset> {
    Ok(Dataset::from_records(
        load_dataset(path).with_context(|| format!("loading {}", path.display()))?,
    ))
}

fn clock_for(offline: &OfflineArgs) -> Arc<dyn Clock> {
    match offline.as_of {
        Some(t) => Arc::new(ManualClock::new(t)),
        None => Arc::new(SystemClock),
    }
}

fn http_for(offline: &OfflineArgs) -> anyhow::Result<Arc<dyn HttpTransport>> {
    Ok(match &offline.fixture {
        Some(p) => Arc::new(RecordedTransport::from_file(p).with_context(|| format!("loading {}", p.display()))?),
        None => Arc::new(UreqTransport::new(Duration::from_secs(30))),
    })
}

fn github(
    config: &Config,
    offline: &OfflineArgs,
    author_key: &str,
) -> anyhow::Result<GithubClient<Arc<dyn HttpTransport>>> {
    let token = std::env::var(TOKEN_ENV).ok();
    if token.is_none() && offline.fixture.is_none() {
        tracing::warn!("{TOKEN_ENV} not set; unauthenticated requests are heavily rate limited");
    }
    let fetch = FetchConfig {
        base_url: config.ingest.base_url.clone(),
        author_key: author_key.as_bytes().to_vec(),
        ..FetchConfig::default()
    };
    Ok(GithubClient::new(http_for(offline)?, token)
        .with_config(fetch)
        .with_clock(clock_for(offline)))
}

fn screen(config: &Config, a: ScreenArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut criteria = config.ingest.criteria;
    if let Some(v) = a.min_total_issues {
        criteria.min_total_issues = v;
    }
    if let Some(v) = a.min_open_issues {
        criteria.min_open_issues = v;
    }
    if let Some(v) = a.max_days_since_commit {
        criteria.max_days_since_commit = v;
    }
    if !criteria.is_valid() {
        return Err(usage("activity thresholds must be positive"));
    }
    let client = github(config, &a.offline, "")?;
    let mut lines = Vec::new();
    let mut failed = 0;
    for repo in &a.repos {
        let line = match client.screen(repo, &criteria) {
            Ok((profile, active)) => serde_json::json!({"repo": repo, "active": active, "profile": profile}),
            Err(e) => {
                failed += 1;
                serde_json::json!({"repo": repo, "error": e.to_string()})
            }
        };
        lines.push(line.to_string());
    }
    let text = lines.join("\n") + "\n";
    match &a.out {
        Some(p) => fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => out.write_all(text.as_bytes()).context("writing output")?,
    }
    if failed > 0 {
        return Err(anyhow!("{failed} of {} repositories could not be screened", a.repos.len()).into());
    }
    Ok(EXIT_OK)
}

fn ingest(config: &Config, a: IngestArgs, raw: &[String], out: &mut dyn Write) -> Result<i32, CliError> {
    let window = DateRange::new(a.from, a.to).ok_or_else(|| usage("--to precedes --from"))?;
    let client = github(config, &a.offline, &a.author_key)?;
    let result = match &a.resume {
        Some(p) => {
            let cursor: ResumeCursor = read_json(p)?;
            if cursor.repo != a.repo || cursor.window != window {
                return Err(usage("resume cursor is for a different repository or window"));
            }
            client.resume(cursor)
        }
        None => client.fetch_contributions(&a.repo, window),
    };
    let contributions = match result {
        Ok(c) => c,
        Err(IngestError::RateLimited {
            needed,
            cursor: Some(cursor),
        }) => {
            let path = sibling(&a.out, ".resume.json");
            write_json(&path, &cursor)?;
            return Err(anyhow!(
                "rate limit needs a {needed:?} wait beyond the budget; rerun with --resume {}",
                path.display()
            )
            .into());
        }
        Err(e) => return Err(anyhow::Error::new(e).context(format!("fetching {}", a.repo)).into()),
    };
    let records: Vec<DatasetRecord> = contributions.into_iter().map(DatasetRecord::Contribution).collect();
    let dataset_id = format!(
        "{}:{}..{}",
        a.repo,
        window.start.format("%Y-%m-%d"),
        window.end.format("%Y-%m-%d")
    );
    let manifest = DatasetManifest::new(dataset_id, &records, Utc::now(), None).note(format!(
        "ingested {} over [{}, {})",
        a.repo,
        window.start.to_rfc3339(),
        window.end.to_rfc3339()
    ));
    save_with_manifest(&records, &a.out, &manifest).context("saving dataset")?;
    let mut run = RunManifest::new("ingest", raw);
    run.output(&a.out);
    run.save(&a.out)?;
    emit(
        out,
        &serde_json::json!({"repo": a.repo, "contributions": records.len(), "out": a.out}),
    )?;
    Ok(EXIT_OK)
}

fn sample(a: SampleArgs, raw: &[String], out: &mut dyn Write) -> Result<i32, CliError> {
    let dataset = load(&a.dataset)?;
    let picked = match a.n {
        Some(n) => sample_contributions(&dataset.contributions, n, a.seed),
        None => sample_by_kind(
            &dataset.contributions,
            KindQuota {
                issues: a.issues.unwrap_or(0),
                comments: a.comments.unwrap_or(0),
            },
            a.seed,
        ),
    }
    .context("sampling")?;
    let keep: std::collections::BTreeSet<String> = picked.iter().map(|c| c.id.clone()).collect();
    let sampled = Dataset {
        annotations: dataset
            .annotations
            .iter()
            .filter(|x| keep.contains(&x.contribution_id))
            .cloned()
            .collect(),
        ground_truth: dataset
            .ground_truth
            .iter()
            .filter(|x| keep.contains(&x.contribution_id))
            .cloned()
            .collect(),
        contributions: picked,
    };
    let records = sampled.to_records();
    let source = InputRef::of(&a.dataset)?;
    let id = format!(
        "{}#sample-{}-{}",
        source.dataset_id.as_deref().unwrap_or("dataset"),
        keep.len(),
        a.seed
    );
    let manifest = DatasetManifest::new(id, &records, Utc::now(), Some(a.seed))
        .note(format!("sampled from {}", a.dataset.display()));
    save_with_manifest(&records, &a.out, &manifest).context("saving sample")?;
    let mut run = RunManifest::new("sample", raw);
    run.inputs.push(source);
    run.seed = Some(a.seed);
    run.output(&a.out);
    run.save(&a.out)?;
    emit(
        out,
        &serde_json::json!({"sampled": keep.len(), "seed": a.seed, "out": a.out}),
    )?;
    Ok(EXIT_OK)
}

fn classify(config: &Config, a: ClassifyArgs, raw: &[String], out: &mut dyn Write) -> Result<i32, CliError> {
    if a.runs == 0 {
        return Err(usage("--runs must be at least 1"));
    }
    let mut model = config.model.clone();
    if let Some(m) = &a.model {
        model.model = m.clone();
    }
    if let Some(e) = &a.endpoint {
        model.endpoint = e.clone();
    }
    if let Some(t) = a.temperature {
        model.temperature = t;
    }
    if a.no_cache {
        model.cache = false;
    }
    model.check().map_err(|e| usage(e.to_string()))?;
    let parallelism = a.parallelism.unwrap_or(config.classify.parallelism);
    if parallelism == 0 {
        return Err(usage("--parallelism must be at least 1"));
    }
    let spec_path = a.spec.clone().or_else(|| config.classify.spec.clone());
    let spec = match &spec_path {
        Some(p) => PromptSpec::load(p).context("loading prompt spec")?,
        None => default_spec(),
    };
    let defects = validate_spec(&spec);
    if !defects.is_empty() {
        let list: Vec<String> = defects.iter().map(|d| d.to_string()).collect();
        return Err(anyhow!("prompt spec is invalid: {}", list.join("; ")).into());
    }
    let dataset = load(&a.dataset)?;

    let transport: Arc<dyn ChatTransport> = match &a.stub {
        Some(p) => Arc::new(ScriptedChat::from_file(p).map_err(|e| anyhow!("loading stub transcript: {e}"))?),
        None => {
            if std::env::var(API_KEY_ENV).is_err() {
                tracing::warn!("{API_KEY_ENV} not set; sending requests without credentials");
            }
            Arc::new(OpenAiChat::from_env(
                UreqTransport::new(model.timeout),
                model.endpoint.clone(),
            ))
        }
    };
    let mut classifier = Classifier::new(transport, model.clone());
    if model.cache {
        let dir = a
            .cache_dir
            .clone()
            .or_else(|| config.classify.cache_dir.clone())
            .unwrap_or_else(|| a.dataset.with_file_name(".verdict-cache"));
        classifier = classifier.with_cache(Arc::new(FileCache::new(dir)));
    }

    let mut run = RunManifest::new("classify", raw);
    run.input(&a.dataset)?;
    if let Some(p) = &spec_path {
        run.input(p)?;
    }
    if let Some(p) = &a.stub {
        run.input(p)?;
    }
    run.spec_version = Some(spec.version.clone());
    run.model = Some(model.model.clone());

    let (records, failures, runset) = if a.runs > 1 {
        let set = classifier
            .run_consistency(&dataset.contributions, &spec, a.runs, parallelism)
            .context("classification runs")?;
        (set.records.clone(), Vec::new(), Some(set))
    } else {
        let outcome = classifier
            .classify_batch(&dataset.contributions, &spec, parallelism)
            .context("classification")?;
        (outcome.records, outcome.failures, None)
    };
    crate::corpus::write_jsonl(&a.out, &records).context("writing predictions")?;
    run.output(&a.out);
    if let Some(set) = &runset {
        let path = a.runset.clone().unwrap_or_else(|| sibling(&a.out, ".runset.json"));
        write_json(&path, set)?;
        run.output(&path);
    }
    if !failures.is_empty() {
        let path = sibling(&a.out, ".failures.json");
        write_json(&path, &failures)?;
        run.output(&path);
        run.partial = true;
        run.notes.push(format!(
            "{} contributions failed; see {}",
            failures.len(),
            path.display()
        ));
    }
    let stats = classifier.stats();
    run.notes.push(format!(
        "model calls {}, cache hits {}",
        stats.model_calls, stats.cache_hits
    ));
    run.save(&a.out)?;
    emit(
        out,
        &serde_json::json!({
            "records": records.len(),
            "failures": failures.len(),
            "runs": a.runs,
            "needs_review": records.iter().filter(|r| r.needs_review).count(),
            "repaired": records.iter().filter(|r| r.repaired).count(),
            "model_calls": stats.model_calls,
            "cache_hits": stats.cache_hits,
        }),
    )?;
    if !failures.is_empty() {
        return Err(anyhow!(
            "{} of {} contributions failed",
            failures.len(),
            dataset.contributions.len()
        )
        .into());
    }
    Ok(EXIT_OK)
}

fn read_predictions(path: &Path) -> anyhow::Result<Vec<PredictionRecord>> {
    crate::corpus::read_jsonl(path).with_context(|| format!("reading {}", path.display()))
}

fn run_records(records: Vec<PredictionRecord>, run: u32) -> anyhow::Result<Vec<PredictionRecord>> {
    let picked: Vec<PredictionRecord> = records.into_iter().filter(|r| r.run_id == run).collect();
    if picked.is_empty() {
        bail!("no predictions for run {run}");
    }
    Ok(picked)
}

/// Scores the predictions for the ground-truth ids only.
pub fn evaluate_files(predictions: &Path, truth: &Path, run: u32) -> anyhow::Result<EvaluationReport> {
    let records = run_records(read_predictions(predictions)?, run)?;
    let dataset = load(truth)?;
    if dataset.ground_truth.is_empty() {
        bail!("{} has no ground-truth records", truth.display());
    }
    let truth = truth_labels(&dataset.ground_truth)?;
    let mut pred = prediction_labels(&records)?;
    pred.retain(|id, _| truth.contains_key(id));
    Ok(evaluate(&pred, &truth)?)
}

fn evaluate_cmd(a: EvaluateArgs, raw: &[String], out: &mut dyn Write) -> Result<i32, CliError> {
    let report = evaluate_files(&a.predictions, &a.truth, a.run)?;
    let table = a.table.clone().unwrap_or_else(|| sibling(&a.out, ".table.csv"));
    let matrix = a.matrix.clone().unwrap_or_else(|| sibling(&a.out, ".flags.csv"));
    write_json(&a.out, &report)?;
    fs::write(&table, report.table_csv()).with_context(|| format!("writing {}", table.display()))?;
    fs::write(&matrix, report.flag_matrix_csv()).with_context(|| format!("writing {}", matrix.display()))?;
    let mut run = RunManifest::new("evaluate", raw);
    run.input(&a.predictions)?;
    run.input(&a.truth)?;
    for p in [&a.out, &table, &matrix] {
        run.output(p);
    }
    run.save(&a.out)?;
    write!(out, "{}", report.table_csv()).context("writing output")?;
    writeln!(
        out,
        "evaluated {}; subset accuracy {:.4}; example-based P/R/F1 {:.4}/{:.4}/{:.4}",
        report.evaluated,
        report.subset_accuracy,
        report.example_based.precision,
        report.example_based.recall,
        report.example_based.f1
    )
    .context("writing output")?;
    Ok(EXIT_OK)
}

fn consistency_cmd(a: ConsistencyArgs, raw: &[String], out: &mut dyn Write) -> Result<i32, CliError> {
    let set: RunSet = read_json(&a.runset)?;
    let report = consistency(&set).context("consistency")?;
    write_json(&a.out, &report)?;
    let mut run = RunManifest::new("consistency", raw);
    run.input(&a.runset)?;
    run.output(&a.out);
    run.save(&a.out)?;
    writeln!(
        out,
        "k={} items={} exact={:.2}% flag={:.2}% (pairwise exact={:.2}% flag={:.2}%)",
        report.k,
        report.items,
        report.exact_match_pct,
        report.flag_match_pct,
        report.pairwise_exact_match_pct,
        report.pairwise_flag_match_pct
    )
    .context("writing output")?;
    Ok(EXIT_OK)
}

fn gate(config: &Config, a: GateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let report: EvaluationReport = read_json(&a.report)?;
    let selector = a.metric.unwrap_or(config.gate.metric);
    let threshold = a.threshold.unwrap_or(config.gate.threshold);
    let outcome = threshold_gate(&report, selector, threshold).context("gate")?;
    emit(out, &outcome)?;
    Ok(if outcome.passed { EXIT_OK } else { EXIT_GATE_FAIL })
}

fn distribution(a: DistributionArgs, raw: &[String], out: &mut dyn Write) -> Result<i32, CliError> {
    let records = run_records(read_predictions(&a.predictions)?, a.run)?;
    let mut reports = distributions_by_repo(&records).context("distribution")?;
    if let (Some(from), Some(to)) = (a.from, a.to) {
        let window = DateRange::new(from, to).ok_or_else(|| usage("--to precedes --from"))?;
        reports = reports.into_iter().map(|r| r.with_window(window)).collect();
    }
    write_json(&a.out, &reports)?;
    let mut run = RunManifest::new("distribution", raw);
    run.input(&a.predictions)?;
    run.output(&a.out);
    if let Some(csv) = &a.csv {
        let file = fs::File::create(csv).with_context(|| format!("creating {}", csv.display()))?;
        write_distribution_csv(&reports, file).context("writing csv")?;
        run.output(csv);
    }
    run.save(&a.out)?;
    for r in &reports {
        let shares: Vec<String> = r.percentages.iter().map(|(f, p)| format!("{f}={p:.2}")).collect();
        writeln!(out, "{}: {}", r.repo, shares.join(" ")).context("writing output")?;
    }
    Ok(EXIT_OK)
}

fn read_reports(path: &Path) -> anyhow::Result<Vec<DistributionReport>> {
    let value: serde_json::Value = read_json(path)?;
    let reports = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|r| vec![r])
    };
    reports.with_context(|| format!("parsing {}", path.display()))
}

fn compare(a: CompareArgs, raw: &[String], out: &mut dyn Write) -> Result<i32, CliError> {
    let mut reports = Vec::new();
    let mut run = RunManifest::new("compare", raw);
    for p in &a.reports {
        reports.extend(read_reports(p)?);
        run.input(p)?;
    }
    let table = compare_repos(&reports).context("comparison")?;
    let csv = table.to_csv_string();
    fs::write(&a.out, &csv).with_context(|| format!("writing {}", a.out.display()))?;
    run.output(&a.out);
    if let Some(j) = &a.json {
        write_json(j, &table)?;
        run.output(j);
    }
    run.save(&a.out)?;
    out.write_all(csv.as_bytes()).context("writing output")?;
    Ok(EXIT_OK)
}

fn serve(config: &Config, a: ServeArgs) -> Result<i32, CliError> {
    let annotators = if a.annotators.is_empty() {
        config.serve.annotators.clone()
    } else {
        a.annotators.clone()
    };
    if annotators.is_empty() {
        return Err(usage("--annotators is required"));
    }
    let service_config = ServiceConfig {
        annotators,
        reviewer: a.reviewer.clone().or_else(|| config.serve.reviewer.clone()),
        adjudicate: a.adjudicate || config.serve.adjudicate,
    };
    let listen = a.listen.clone().unwrap_or_else(|| config.serve.listen.clone());
    let addr: std::net::SocketAddr = listen
        .parse()
        .map_err(|_| usage(format!("bad listen address {listen}")))?;
    let mut service = AnnotationService::open(&a.dataset, service_config).context("opening annotation store")?;
    if let Some(p) = &a.predictions {
        service = service.with_predictions(read_predictions(p)?);
    }
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime
        .block_on(crate::annotation_service::serve(Arc::new(service), addr))
        .context("serving")?;
    Ok(EXIT_OK)
}

/// Kappa between two annotators over the items both labeled.
pub fn agreement_between(annotations: &[AnnotationRecord], a: &str, b: &str) -> anyhow::Result<serde_json::Value> {
    let by = |who: &str| -> Labels {
        annotations
            .iter()
            .filter(|r| r.annotator_id == who)
            .map(|r| (r.contribution_id.clone(), r.labels))
            .collect()
    };
    let (mut la, mut lb) = (by(a), by(b));
    la.retain(|id, _| lb.contains_key(id));
    lb.retain(|id, _| la.contains_key(id));
    let report = cohen_kappa(&la, &lb).with_context(|| format!("no items labeled by both {a} and {b}"))?;
    let records: Vec<AnnotationRecord> = annotations
        .iter()
        .filter(|r| (r.annotator_id == a || r.annotator_id == b) && la.contains_key(&r.contribution_id))
        .cloned()
        .collect();
    let build = build_ground_truth(&records, &[a.to_string(), b.to_string()])?;
    let n = la.len();
    Ok(serde_json::json!({
        "annotators": [a, b],
        "items": n,
        "unanimity_pct": 100.0 * build.entries.len() as f64 / n as f64,
        "disagreements": build.dropped,
        "report": report,
    }))
}

fn agreement(a: AgreementArgs, raw: &[String], out: &mut dyn Write) -> Result<i32, CliError> {
    let dataset = load(&a.annotations)?;
    let pair: Vec<String> = if a.annotators.is_empty() {
        let ids: std::collections::BTreeSet<&str> =
            dataset.annotations.iter().map(|r| r.annotator_id.as_str()).collect();
        ids.into_iter().map(str::to_string).collect()
    } else {
        a.annotators.clone()
    };
    if pair.len() != 2 {
        return Err(usage(format!(
            "agreement needs exactly two annotators, found {}: pass --annotators a,b",
            pair.len()
        )));
    }
    let value = agreement_between(&dataset.annotations, &pair[0], &pair[1])?;
    if let Some(p) = &a.out {
        write_json(p, &value)?;
        let mut run = RunManifest::new("agreement", raw);
        run.input(&a.annotations)?;
        run.output(p);
        run.save(p)?;
    }
    emit(out, &value)?;
    Ok(EXIT_OK)
}

fn spec_check(a: SpecCheckArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let spec = PromptSpec::load(&a.spec).context("loading prompt spec")?;
    let defects = validate_spec(&spec);
    if defects.is_empty() {
        writeln!(out, "spec {} is valid", spec.version).context("writing output")?;
        return Ok(EXIT_OK);
    }
    let list: Vec<String> = defects.iter().map(|d| d.to_string()).collect();
    Err(anyhow!(
        "spec {} has {} defects: {}",
        spec.version,
        defects.len(),
        list.join("; ")
    )
    .into())
}

fn spec_diff(a: SpecDiffArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let before = PromptSpec::load(&a.before).context("loading first spec")?;
    let after = PromptSpec::load(&a.after).context("loading second spec")?;
    for change in diff_specs(&before, &after) {
        writeln!(out, "{change}").context("writing output")?;
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instants() {
        assert_eq!(
            parse_instant("2024-01-01").unwrap().to_rfc3339(),
            "2024-01-01T00:00:00+00:00"
        );
        assert!(parse_instant("2024-01-01T05:00:00Z").is_ok());
        assert!(parse_instant("yesterday").is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        let mut sink = Vec::new();
        assert_eq!(run(["oss-ethics", "frobnicate"], &mut sink), EXIT_USAGE);
        assert_eq!(run(["oss-ethics", "gate"], &mut sink), EXIT_USAGE);
        assert_eq!(run(["oss-ethics", "--help"], &mut sink), EXIT_OK);
    }

    #[test]
    fn missing_input_is_runtime_error() {
        let mut sink = Vec::new();
        let code = run(
            ["oss-ethics", "gate", "--report", "/nonexistent/report.json"],
            &mut sink,
        );
        assert_eq!(code, EXIT_RUNTIME);
    }

    #[test]
    fn run_manifest_path() {
        assert_eq!(
            RunManifest::path_for(Path::new("/x/pred.jsonl")),
            Path::new("/x/pred.jsonl.run.json")
        );
    }
}
