// Per-repository flag shares and a side-by-side comparison.

use oss_ethics::report::{compare_repos, distribution_of};
use oss_ethics::taxonomy::FlagSet;

fn sets(rows: &[&[&str]]) -> Vec<FlagSet> {
    rows.iter()
        .map(|r| FlagSet::parse(r.iter().copied()).unwrap())
        .collect()
}

fn main() {
    let calm = sets(&[&["F1", "F3"], &["F11"], &["F3"], &["F1"]]);
    let heated = sets(&[&["F7"], &["F7", "F8"], &["F11"], &["F3"]]);

    let reports = vec![
        distribution_of("example/calm", calm.iter()).unwrap(),
        distribution_of("example/heated", heated.iter()).unwrap(),
    ];
    for r in &reports {
        println!(
            "{}: {} contributions, {} flag occurrences",
            r.repo, r.total_contributions, r.total_occurrences
        );
    }
    print!("{}", compare_repos(&reports).unwrap().to_csv_string());
}
