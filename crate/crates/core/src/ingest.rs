//! GitHub REST client: project activity screening and collection of
//! non-coding contributions (issues and issue comments) over a time window.
//!
//! Pull requests are listed by the issues endpoint and their conversation
//! shows up in the issue-comments endpoint; both are filtered out.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::clock::{Clock, SystemClock};
use crate::corpus::{pseudonymize_author, Contribution, ContributionKind, DateRange, Source};
use crate::http::{HttpRequest, HttpResponse, HttpTransport, TransportError};

pub const GITHUB_API: &str = "https://api.github.com";
pub const TOKEN_ENV: &str = "GITHUB_TOKEN";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("authentication failed ({status}) for {url}")]
    Auth { status: u16, url: String },
    /// Carries a cursor when the interrupted call was a contribution fetch.
    #[error("rate limit wait of {needed:?} exceeds the remaining budget")]
    RateLimited {
        needed: Duration,
        cursor: Option<Box<ResumeCursor>>,
    },
    #[error("server error {status} for {url} after {attempts} attempts")]
    Server { status: u16, url: String, attempts: u32 },
    #[error("unexpected status {status} for {url}")]
    Http { status: u16, url: String },
    #[error("transport failure for {url}: {source}")]
    Transport {
        url: String,
        #[source]
        source: TransportError,
    },
    #[error("cannot decode response from {url}: {message}")]
    Decode { url: String, message: String },
    #[error("invalid repository name {0:?} (expected owner/name)")]
    InvalidRepo(String),
}

impl IngestError {
    /// Whether retrying later may succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            IngestError::RateLimited { .. } | IngestError::Server { .. } | IngestError::Transport { .. }
        )
    }
}

/// Thresholds a repository must meet to count as active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityCriteria {
    /// Total issues must be strictly greater than this.
    pub min_total_issues: u64,
    /// Open issues must be at least this.
    pub min_open_issues: u64,
    pub max_days_since_commit: u32,
}

impl Default for ActivityCriteria {
    fn default() -> Self {
        ActivityCriteria {
            min_total_issues: 1000,
            min_open_issues: 300,
            max_days_since_commit: 7,
        }
    }
}

impl ActivityCriteria {
    pub fn is_valid(&self) -> bool {
        self.min_total_issues > 0 && self.min_open_issues > 0 && self.max_days_since_commit > 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoProfile {
    pub repo: String,
    pub total_issues: u64,
    pub open_issues: u64,
    pub last_commit_at: DateTime<Utc>,
    pub sampled_at: DateTime<Utc>,
}

pub fn check_activity(profile: &RepoProfile, criteria: &ActivityCriteria) -> bool {
    let since_commit = profile.sampled_at - profile.last_commit_at;
    profile.total_issues > criteria.min_total_issues
        && profile.open_issues >= criteria.min_open_issues
        && since_commit <= chrono::Duration::days(i64::from(criteria.max_days_since_commit))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchPhase {
    Issues,
    Comments,
}

/// Everything needed to continue an interrupted fetch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResumeCursor {
    pub repo: String,
    pub window: DateRange,
    pub phase: FetchPhase,
    pub next_url: Option<String>,
    pub pull_requests: BTreeSet<u64>,
    pub collected: Vec<Contribution>,
}

#[derive(Debug, Clone)]
pub struct FetchConfig {
    pub base_url: String,
    pub per_page: u32,
    /// Total time the client may spend waiting on rate limits per fetch.
    pub rate_limit_budget: Duration,
    pub max_server_retries: u32,
    pub backoff_base: Duration,
    /// Key for author pseudonyms.
    pub author_key: Vec<u8>,
}

impl Default for FetchConfig {
    fn default() -> Self {
        FetchConfig {
            base_url: GITHUB_API.to_string(),
            per_page: 100,
            rate_limit_budget: Duration::from_secs(15 * 60),
            max_server_retries: 4,
            backoff_base: Duration::from_secs(1),
            author_key: Vec::new(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct User {
    login: String,
}

#[derive(Debug, Deserialize)]
struct IssueItem {
    number: u64,
    title: String,
    #[serde(default)]
    body: Option<String>,
    created_at: DateTime<Utc>,
    html_url: String,
    #[serde(default)]
    user: Option<User>,
    #[serde(default)]
    pull_request: Option<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct CommentItem {
    id: u64,
    #[serde(default)]
    body: Option<String>,
    created_at: DateTime<Utc>,
    html_url: String,
    issue_url: String,
    #[serde(default)]
    user: Option<User>,
}

#[derive(Debug, Deserialize)]
struct SearchCount {
    total_count: u64,
}

#[derive(Debug, Deserialize)]
struct CommitItem {
    commit: CommitDetail,
}

#[derive(Debug, Deserialize)]
struct CommitDetail {
    committer: CommitSignature,
}

#[derive(Debug, Deserialize)]
struct CommitSignature {
    date: DateTime<Utc>,
}

/// Extracts the `rel="next"` target from a `Link` header.
pub fn next_link(header: &str) -> Option<String> {
    header.split(',').find_map(|part| {
        let mut pieces = part.split(';');
        let target = pieces.next()?.trim();
        let is_next = pieces.any(|p| p.trim() == r#"rel="next""#);
        (is_next && target.starts_with('<') && target.ends_with('>')).then(|| target[1..target.len() - 1].to_string())
    })
}

fn issue_number_from_url(url: &str) -> Option<u64> {
    url.rsplit('/').next()?.parse().ok()
}

fn check_repo(repo: &str) -> Result<(), IngestError> {
    let mut parts = repo.split('/');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(owner), Some(name), None) if !owner.is_empty() && !name.is_empty() => Ok(()),
        _ => Err(IngestError::InvalidRepo(repo.to_string())),
    }
}

/// Outcome of fetching one repository in [`GithubClient::fetch_many`].
pub type RepoFetch = Result<Vec<Contribution>, IngestError>;

pub struct GithubClient<T> {
    transport: T,
    clock: Arc<dyn Clock>,
    token: Option<String>,
    config: FetchConfig,
}

impl<T: HttpTransport> GithubClient<T> {
    pub fn new(transport: T, token: Option<String>) -> Self {
        GithubClient {
            transport,
            clock: Arc::new(SystemClock),
            token,
            config: FetchConfig::default(),
        }
    }

    pub fn with_config(mut self, config: FetchConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &FetchConfig {
        &self.config
    }

    fn request(&self, url: &str) -> HttpRequest {
        let mut req = HttpRequest::get(url)
            .header("Accept", "application/vnd.github+json")
            .header("X-GitHub-Api-Version", "2022-11-28")
            .header("User-Agent", "oss-ethics");
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        req
    }

    fn rate_limit_wait(&self, response: &HttpResponse) -> Option<Duration> {
        if let Some(secs) = response
            .header("retry-after")
            .and_then(|v| v.trim().parse::<u64>().ok())
        {
            return Some(Duration::from_secs(secs));
        }
        if response.header("x-ratelimit-remaining") == Some("0") {
            let reset = response
                .header("x-ratelimit-reset")
                .and_then(|v| v.trim().parse::<i64>().ok())
                .and_then(|s| DateTime::from_timestamp(s, 0));
            let wait = reset
                .map(|r| (r - self.clock.now()).to_std().unwrap_or(Duration::ZERO))
                .unwrap_or(Duration::from_secs(60));
            return Some(wait.max(Duration::from_secs(1)));
        }
        None
    }

    /// GETs a URL, waiting on rate limits and retrying server errors.
    ///
    /// Returns `Ok(Err(wait))` when the rate-limit budget would be exceeded.
    fn get(&self, url: &str, waited: &mut Duration) -> Result<Result<HttpResponse, Duration>, IngestError> {
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let outcome = self.transport.send(&self.request(url));
            let response = match outcome {
                Ok(r) => r,
                Err(source) => {
                    if attempts > self.config.max_server_retries {
                        return Err(IngestError::Transport {
                            url: url.to_string(),
                            source,
                        });
                    }
                    self.backoff(attempts);
                    continue;
                }
            };
            match response.status {
                200..=299 => return Ok(Ok(response)),
                401 => {
                    return Err(IngestError::Auth {
                        status: 401,
                        url: url.to_string(),
                    })
                }
                403 | 429 => match self.rate_limit_wait(&response) {
                    Some(wait) => {
                        if *waited + wait > self.config.rate_limit_budget {
                            return Ok(Err(wait));
                        }
                        warn!(url, ?wait, "rate limited; waiting");
                        self.clock.sleep(wait);
                        *waited += wait;
                        attempts = 0;
                    }
                    None => {
                        return Err(IngestError::Auth {
                            status: response.status,
                            url: url.to_string(),
                        })
                    }
                },
                500..=599 => {
                    if attempts > self.config.max_server_retries {
                        return Err(IngestError::Server {
                            status: response.status,
                            url: url.to_string(),
                            attempts,
                        });
                    }
                    self.backoff(attempts);
                }
                status => {
                    return Err(IngestError::Http {
                        status,
                        url: url.to_string(),
                    })
                }
            }
        }
    }

    fn backoff(&self, attempt: u32) {
        let factor = 1u32 << (attempt - 1).min(16);
        self.clock.sleep(self.config.backoff_base * factor);
    }

    fn get_json<D: serde::de::DeserializeOwned>(&self, url: &str) -> Result<D, IngestError> {
        let mut waited = Duration::ZERO;
        match self.get(url, &mut waited)? {
            Ok(resp) => decode(url, &resp),
            Err(needed) => Err(IngestError::RateLimited { needed, cursor: None }),
        }
    }

    /// Issue totals come from the search endpoint (issues only, no pull
    /// requests); the last commit from the default branch history.
    pub fn fetch_profile(&self, repo: &str) -> Result<RepoProfile, IngestError> {
        check_repo(repo)?;
        let base = &self.config.base_url;
        let total: SearchCount = self.get_json(&format!("{base}/search/issues?q=repo:{repo}+type:issue&per_page=1"))?;
        let open: SearchCount = self.get_json(&format!(
            "{base}/search/issues?q=repo:{repo}+type:issue+state:open&per_page=1"
        ))?;
        let commits: Vec<CommitItem> = self.get_json(&format!("{base}/repos/{repo}/commits?per_page=1"))?;
        let last_commit_at = commits
            .first()
            .map(|c| c.commit.committer.date)
            .ok_or_else(|| IngestError::Decode {
                url: format!("{base}/repos/{repo}/commits"),
                message: "repository has no commits".into(),
            })?;
        Ok(RepoProfile {
            repo: repo.to_string(),
            total_issues: total.total_count,
            open_issues: open.total_count.min(total.total_count),
            last_commit_at,
            sampled_at: self.clock.now(),
        })
    }

    pub fn screen(&self, repo: &str, criteria: &ActivityCriteria) -> Result<(RepoProfile, bool), IngestError> {
        let profile = self.fetch_profile(repo)?;
        let active = check_activity(&profile, criteria);
        Ok((profile, active))
    }

    fn issues_url(&self, repo: &str, window: &DateRange) -> String {
        format!(
            "{}/repos/{repo}/issues?state=all&sort=created&direction=asc&since={}&per_page={}",
            self.config.base_url,
            window.start.to_rfc3339_opts(SecondsFormat::Secs, true),
            self.config.per_page
        )
    }

    fn comments_url(&self, repo: &str, window: &DateRange) -> String {
        format!(
            "{}/repos/{repo}/issues/comments?sort=created&direction=asc&since={}&per_page={}",
            self.config.base_url,
            window.start.to_rfc3339_opts(SecondsFormat::Secs, true),
            self.config.per_page
        )
    }

    /// Fetches every issue and issue comment created inside `window`,
    /// sorted by `(created_at, id)`.
    pub fn fetch_contributions(&self, repo: &str, window: DateRange) -> Result<Vec<Contribution>, IngestError> {
        check_repo(repo)?;
        if window.is_empty() {
            return Ok(Vec::new());
        }
        self.resume(ResumeCursor {
            repo: repo.to_string(),
            window,
            phase: FetchPhase::Issues,
            next_url: Some(self.issues_url(repo, &window)),
            pull_requests: BTreeSet::new(),
            collected: Vec::new(),
        })
    }

    /// Continues a fetch interrupted by [`IngestError::RateLimited`].
    pub fn resume(&self, mut cursor: ResumeCursor) -> Result<Vec<Contribution>, IngestError> {
        let mut waited = Duration::ZERO;
        loop {
            let Some(url) = cursor.next_url.clone() else {
                if cursor.phase == FetchPhase::Issues {
                    cursor.phase = FetchPhase::Comments;
                    cursor.next_url = Some(self.comments_url(&cursor.repo, &cursor.window));
                    continue;
                }
                break;
            };
            let response = match self.get(&url, &mut waited)? {
                Ok(r) => r,
                Err(needed) => {
                    return Err(IngestError::RateLimited {
                        needed,
                        cursor: Some(Box::new(cursor)),
                    })
                }
            };
            match cursor.phase {
                FetchPhase::Issues => {
                    let items: Vec<IssueItem> = decode(&url, &response)?;
                    debug!(url, count = items.len(), "issues page");
                    for item in items {
                        if item.pull_request.is_some() {
                            cursor.pull_requests.insert(item.number);
                            continue;
                        }
                        if let Some(c) = self.issue_contribution(&cursor.repo, &cursor.window, item) {
                            cursor.collected.push(c);
                        }
                    }
                }
                FetchPhase::Comments => {
                    let items: Vec<CommentItem> = decode(&url, &response)?;
                    debug!(url, count = items.len(), "comments page");
                    for item in items {
                        let on_pr = item.html_url.contains("/pull/")
                            || issue_number_from_url(&item.issue_url)
                                .is_some_and(|n| cursor.pull_requests.contains(&n));
                        if on_pr {
                            continue;
                        }
                        if let Some(c) = self.comment_contribution(&cursor.repo, &cursor.window, item) {
                            cursor.collected.push(c);
                        }
                    }
                }
            }
            cursor.next_url = response.header("link").and_then(next_link);
        }
        let mut out = cursor.collected;
        out.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
        out.dedup_by(|a, b| a.id == b.id);
        Ok(out)
    }

    fn author(&self, user: Option<User>) -> String {
        let login = user.map(|u| u.login).unwrap_or_else(|| "ghost".to_string());
        pseudonymize_author(&login, &self.config.author_key)
    }

    fn issue_contribution(&self, repo: &str, window: &DateRange, item: IssueItem) -> Option<Contribution> {
        if !window.contains(item.created_at) {
            return None;
        }
        let body = match item.body.as_deref().map(str::trim_end) {
            Some(b) if !b.trim().is_empty() => format!("{}\n\n{}", item.title, b),
            _ => item.title.clone(),
        };
        if body.trim().is_empty() {
            return None;
        }
        Some(Contribution {
            id: format!("{repo}#issue-{}", item.number),
            repo: repo.to_string(),
            kind: ContributionKind::Issue,
            body,
            created_at: item.created_at,
            url: Some(item.html_url),
            author_key: self.author(item.user),
            source: Source::Mined,
            target_flags: None,
        })
    }

    fn comment_contribution(&self, repo: &str, window: &DateRange, item: CommentItem) -> Option<Contribution> {
        if !window.contains(item.created_at) {
            return None;
        }
        let body = item.body.filter(|b| !b.trim().is_empty())?;
        Some(Contribution {
            id: format!("{repo}#comment-{}", item.id),
            repo: repo.to_string(),
            kind: ContributionKind::Comment,
            body,
            created_at: item.created_at,
            url: Some(item.html_url),
            author_key: self.author(item.user),
            source: Source::Mined,
            target_flags: None,
        })
    }

    /// Fetches several repositories, at most `parallelism` at a time.
    /// Results keep the input order.
    pub fn fetch_many(&self, repos: &[String], window: DateRange, parallelism: usize) -> Vec<(String, RepoFetch)> {
        let workers = parallelism.max(1).min(repos.len().max(1));
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<RepoFetch>>> =
            repos.iter().map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= repos.len() {
                        break;
                    }
                    let result = self.fetch_contributions(&repos[i], window);
                    *slots[i].lock().unwrap() = Some(result);
                });
            }
        });
        repos
            .iter()
            .cloned()
            .zip(
                slots
                    .into_iter()
                    .map(|s| s.into_inner().unwrap().expect("every repo fetched")),
            )
            .collect()
    }
}

fn decode<D: serde::de::DeserializeOwned>(url: &str, response: &HttpResponse) -> Result<D, IngestError> {
    serde_json::from_str(&response.body).map_err(|e| IngestError::Decode {
        url: url.to_string(),
        message: e.to_string(),
    })
}
