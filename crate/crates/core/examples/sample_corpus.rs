// Seeded sampling, dataset files with manifests, and ground truth built
// from two annotators.

use chrono::{TimeZone, Utc};
use oss_ethics::corpus::{
    build_ground_truth, sample_by_kind, sample_contributions, save_with_manifest, AnnotationRecord, Contribution,
    ContributionKind, Dataset, DatasetManifest, KindQuota, Source,
};
use oss_ethics::taxonomy::FlagSet;

fn main() {
    let at = Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).unwrap();
    let pool: Vec<Contribution> = (0..40)
        .map(|i| Contribution {
            id: format!("example/repo#{i:03}"),
            repo: "example/repo".into(),
            kind: if i % 4 == 0 {
                ContributionKind::Issue
            } else {
                ContributionKind::Comment
            },
            body: format!("contribution {i}"),
            created_at: at,
            url: None,
            author_key: format!("author-{}", i % 9),
            source: Source::Mined,
            target_flags: None,
        })
        .collect();

    let picked = sample_contributions(&pool, 6, 2024).unwrap();
    let again = sample_contributions(&pool, 6, 2024).unwrap();
    assert_eq!(picked, again);
    println!("sample: {:?}", picked.iter().map(|c| c.id.as_str()).collect::<Vec<_>>());

    let by_kind = sample_by_kind(&pool, KindQuota { issues: 2, comments: 4 }, 7).unwrap();
    println!(
        "by kind: {:?}",
        by_kind.iter().map(|c| (c.id.as_str(), c.kind)).collect::<Vec<_>>()
    );

    let annotators = vec!["a".to_string(), "b".to_string()];
    let mut annotations = Vec::new();
    for (n, c) in picked.iter().enumerate() {
        for who in &annotators {
            let flags = if who == "b" && n == 0 { ["F7"] } else { ["F11"] };
            annotations.push(AnnotationRecord {
                contribution_id: c.id.clone(),
                annotator_id: who.clone(),
                labels: FlagSet::parse(flags).unwrap(),
                annotated_at: at,
            });
        }
    }
    let build = build_ground_truth(&annotations, &annotators).unwrap();
    println!("ground truth {} / dropped {:?}", build.entries.len(), build.dropped);

    let dataset = Dataset {
        contributions: picked,
        annotations,
        ground_truth: build.entries,
    };
    let dir = std::env::temp_dir().join("oss-ethics-example");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("sample.jsonl");
    let records = dataset.to_records();
    let manifest =
        DatasetManifest::new("example-sample", &records, at, Some(2024)).note("sampled from a synthetic pool");
    save_with_manifest(&records, &path, &manifest).unwrap();
    println!("wrote {} ({:?})", path.display(), manifest.counts);
}
