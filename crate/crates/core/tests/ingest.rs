use std::sync::Arc;
use std::time::Duration;

use chrono::{TimeZone, Utc};
use oss_ethics::clock::ManualClock;
use oss_ethics::corpus::{ContributionKind, DateRange};
use oss_ethics::http::RecordedTransport;
use oss_ethics::ingest::{ActivityCriteria, FetchConfig, GithubClient, IngestError};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn year_2024() -> DateRange {
    DateRange::new(
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(),
    )
    .unwrap()
}

fn client(fixture: &str) -> (GithubClient<RecordedTransport>, Arc<ManualClock>) {
    let transport = RecordedTransport::from_file(format!("{FIXTURES}/{fixture}")).unwrap();
    let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2025, 1, 5, 12, 0, 0).unwrap()));
    let client = GithubClient::new(transport, Some("test-token".into())).with_clock(clock.clone());
    (client, clock)
}

#[test]
fn recorded_fetch_yields_six_contributions() {
    let (client, _) = client("github_fetch.json");
    let got = client.fetch_contributions("octo/widgets", year_2024()).unwrap();
    let ids: Vec<&str> = got.iter().map(|c| c.id.as_str()).collect();
    assert_eq!(
        ids,
        vec![
            "octo/widgets#issue-1",
            "octo/widgets#comment-101",
            "octo/widgets#comment-102",
            "octo/widgets#comment-103",
            "octo/widgets#issue-3",
            "octo/widgets#comment-104",
        ]
    );
    assert!(got.iter().all(|c| !c.body.trim().is_empty()));
    assert_eq!(got.iter().filter(|c| c.kind == ContributionKind::Issue).count(), 2);

    let issue = &got[0];
    assert!(issue.body.starts_with("Crash on startup\n\nApp crashes"));
    assert!(issue.body.contains("```\npanic at main.rs:10\n```"));
    // Title-only issue.
    assert_eq!(got[4].body, "Docs: typo in README");
    assert!(!got.iter().any(|c| c.author_key.contains("alice")));
}

#[test]
fn fetch_is_idempotent_and_pages_are_reassembled_once() {
    let (a, _) = client("github_fetch.json");
    let (b, _) = client("github_fetch.json");
    let first = a.fetch_contributions("octo/widgets", year_2024()).unwrap();
    let second = b.fetch_contributions("octo/widgets", year_2024()).unwrap();
    assert_eq!(first, second);
    let mut ids: Vec<_> = first.iter().map(|c| c.id.clone()).collect();
    ids.dedup();
    assert_eq!(ids.len(), first.len());
}

#[test]
fn empty_window_returns_nothing_without_requests() {
    let (client, _) = client("github_fetch.json");
    let t = Utc.with_ymd_and_hms(2024, 6, 1, 0, 0, 0).unwrap();
    let got = client
        .fetch_contributions("octo/widgets", DateRange::new(t, t).unwrap())
        .unwrap();
    assert!(got.is_empty());
}

#[test]
fn waits_on_rate_limit_retries_server_errors_and_filters_edges() {
    let (client, clock) = client("github_edge.json");
    let got = client.fetch_contributions("octo/edge", year_2024()).unwrap();
    let ids: Vec<&str> = got.iter().map(|c| c.id.as_str()).collect();
    // Same timestamp: ordered by id.
    assert_eq!(ids, vec!["octo/edge#comment-203", "octo/edge#issue-8"]);
    let sleeps = clock.sleeps();
    assert_eq!(sleeps[0], Duration::from_secs(60), "rate-limit wait until reset");
    assert_eq!(sleeps[1], Duration::from_secs(1), "first server-error backoff");
}

#[test]
fn exhausted_rate_limit_budget_returns_resume_cursor() {
    let (client, _) = client("github_edge.json");
    let client = client.with_config(FetchConfig {
        rate_limit_budget: Duration::from_secs(10),
        ..FetchConfig::default()
    });
    let err = client.fetch_contributions("octo/edge", year_2024()).unwrap_err();
    assert!(err.is_retryable());
    let cursor = match err {
        IngestError::RateLimited { needed, cursor } => {
            assert_eq!(needed, Duration::from_secs(60));
            cursor.expect("fetch errors carry a cursor")
        }
        other => panic!("unexpected {other}"),
    };
    assert!(cursor.next_url.as_deref().unwrap().contains("/repos/octo/edge/issues"));
    assert!(cursor.collected.is_empty());

    // The recorded rate-limit response has been consumed; resuming completes.
    let rest = client.resume(*cursor).unwrap();
    assert_eq!(rest.len(), 2);
}

#[test]
fn persistent_server_errors_fail_after_bounded_retries() {
    let fixture = r#"[{"request":{"method":"GET","url":"https://api.github.com/repos/o/r/issues?state=all&sort=created&direction=asc&since=2024-01-01T00:00:00Z&per_page=100"},"response":{"status":503}}]"#;
    let clock = Arc::new(ManualClock::new(Utc::now()));
    let client = GithubClient::new(RecordedTransport::from_json(fixture).unwrap(), None).with_clock(clock.clone());
    let err = client.fetch_contributions("o/r", year_2024()).unwrap_err();
    assert!(
        matches!(
            err,
            IngestError::Server {
                status: 503,
                attempts: 5,
                ..
            }
        ),
        "{err}"
    );
    let secs: Vec<u64> = clock.sleeps().iter().map(|d| d.as_secs()).collect();
    assert_eq!(secs, vec![1, 2, 4, 8]);
}

#[test]
fn activity_screening_from_recorded_profiles() {
    let (client, _) = client("github_profiles.json");
    let criteria = ActivityCriteria::default();
    let (busy, active) = client.screen("octo/busy", &criteria).unwrap();
    assert_eq!((busy.total_issues, busy.open_issues), (1500, 400));
    assert!(active);
    let (_, active) = client.screen("octo/boundary", &criteria).unwrap();
    assert!(!active, "exactly 1000 issues is not more than 1000");
    let (_, active) = client.screen("octo/stale", &criteria).unwrap();
    assert!(!active, "last commit 8 days before sampling");
    let err = client.screen("octo/private", &criteria).unwrap_err();
    assert!(matches!(err, IngestError::Auth { status: 401, .. }));
}

#[test]
fn fetch_many_preserves_repo_order() {
    let (client, _) = client("github_fetch.json");
    let repos = vec!["octo/widgets".to_string(), "octo/missing".to_string()];
    let out = client.fetch_many(&repos, year_2024(), 2);
    assert_eq!(out[0].0, "octo/widgets");
    assert_eq!(out[0].1.as_ref().unwrap().len(), 6);
    assert!(out[1].1.is_err());
}
