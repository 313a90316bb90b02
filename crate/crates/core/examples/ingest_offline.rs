// Screen and mine repositories from recorded API responses.

use std::path::Path;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use oss_ethics::clock::ManualClock;
use oss_ethics::corpus::DateRange;
use oss_ethics::http::RecordedTransport;
use oss_ethics::ingest::{ActivityCriteria, GithubClient};

fn main() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let now = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2025, 1, 5, 12, 0, 0).unwrap()));

    let profiles = RecordedTransport::from_file(fixtures.join("github_profiles.json")).unwrap();
    let screener = GithubClient::new(profiles, None).with_clock(now.clone());
    for repo in ["octo/busy", "octo/boundary", "octo/stale"] {
        let (profile, active) = screener.screen(repo, &ActivityCriteria::default()).unwrap();
        println!(
            "{repo}: {} issues ({} open), active: {active}",
            profile.total_issues, profile.open_issues
        );
    }

    let recorded = RecordedTransport::from_file(fixtures.join("github_fetch.json")).unwrap();
    let client = GithubClient::new(recorded, None).with_clock(now);
    let year = DateRange::new(
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(),
    )
    .unwrap();
    for c in client.fetch_contributions("octo/widgets", year).unwrap() {
        let first_line = c.body.lines().next().unwrap_or("");
        println!("{:<28} {:?} {first_line}", c.id, c.kind);
    }
}
