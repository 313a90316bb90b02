// Two annotators label a small queue; the service tracks agreement and
// keeps only unanimous items as ground truth.

use chrono::{TimeZone, Utc};
use oss_ethics::annotation_service::{AnnotationService, QueueMode, ServiceConfig, SubmitOutcome};
use oss_ethics::corpus::{Contribution, ContributionKind, Dataset, Source};

fn comment(id: &str, body: &str) -> Contribution {
    Contribution {
        id: id.into(),
        repo: "example/repo".into(),
        kind: ContributionKind::Comment,
        body: body.into(),
        created_at: Utc.with_ymd_and_hms(2024, 5, 1, 9, 0, 0).unwrap(),
        url: None,
        author_key: "anon".into(),
        source: Source::Mined,
        target_flags: None,
    }
}

fn main() {
    let dataset = Dataset {
        contributions: vec![
            comment("c1", "Thanks, that fixed it."),
            comment("c2", "This is the worst code I have ever seen."),
            comment("c3", "Any news?"),
            comment("c4", "Docs should mention Windows too."),
        ],
        ..Dataset::default()
    };
    let service = AnnotationService::new(dataset, ServiceConfig::new(["alice", "bob"])).unwrap();

    // Mixed groups are refused before anything is stored.
    let refused = service.submit("alice", "c1", &["F1".into(), "F7".into()]).unwrap();
    println!("mixed submission: {refused:?}");

    let choices = [
        ("alice", [&["F1"][..], &["F7"], &["F11"], &["F2"]]),
        ("bob", [&["F1"][..], &["F7"], &["F3"], &["F2"]]),
    ];
    for (annotator, picks) in choices {
        for pick in picks {
            let item = service.next_item(annotator, QueueMode::Annotate).unwrap().item.unwrap();
            let flags: Vec<String> = pick.iter().map(|s| s.to_string()).collect();
            match service.submit(annotator, &item.contribution.id, &flags).unwrap() {
                SubmitOutcome::Accepted { .. } => {}
                SubmitOutcome::Rejected { reasons } => println!("rejected: {reasons:?}"),
            }
        }
    }

    let stats = service.agreement_stats();
    println!("unanimity {:?}%", stats.unanimity_pct);
    for d in &stats.disagreements {
        let views: Vec<String> = d.labels.iter().map(|(who, set)| format!("{who}={set}")).collect();
        println!("disagreement on {}: {}", d.contribution_id, views.join(" "));
    }
    println!("ground truth entries: {}", service.ground_truth().len());
}
