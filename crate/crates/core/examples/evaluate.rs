// Score predictions against ground truth, run a release gate and measure
// agreement between two label sources.

use std::collections::BTreeMap;

use oss_ethics::metrics::{cohen_kappa, consistency_of_runs, evaluate, threshold_gate, MetricSelector, Scope};
use oss_ethics::taxonomy::FlagSet;

fn labels(rows: &[(&str, &[&str])]) -> BTreeMap<String, FlagSet> {
    rows.iter()
        .map(|(id, flags)| (id.to_string(), FlagSet::parse(flags.iter().copied()).unwrap()))
        .collect()
}

fn main() {
    let truth = labels(&[
        ("a", &["F1"]),
        ("b", &["F3", "F4"]),
        ("c", &["F7"]),
        ("d", &["F11"]),
        ("e", &["F8", "F7"]),
    ]);
    let predicted = labels(&[
        ("a", &["F1"]),
        ("b", &["F3"]),
        ("c", &["F7", "F9"]),
        ("d", &["F11"]),
        ("e", &["F8"]),
    ]);

    let report = evaluate(&predicted, &truth).unwrap();
    print!("{}", report.table_csv());
    println!("subset accuracy {:.3}", report.subset_accuracy);
    let negative = report.scope(Scope::Negative).unwrap();
    println!("negative micro F1 {:.4}", negative.micro.f1);

    let gate = threshold_gate(&report, MetricSelector::default(), 0.80).unwrap();
    println!(
        "gate {} = {:.4} vs {} -> {}",
        gate.selector, gate.value, gate.threshold, gate.passed
    );

    let kappa = cohen_kappa(&predicted, &truth).unwrap();
    println!("macro kappa {:?}", kappa.macro_kappa);

    let rerun = labels(&[
        ("a", &["F1"]),
        ("b", &["F3", "F4"]),
        ("c", &["F7"]),
        ("d", &["F11"]),
        ("e", &["F8"]),
    ]);
    let c = consistency_of_runs(&[predicted, rerun]).unwrap();
    println!(
        "consistency exact {:.2}% / flag {:.2}%",
        c.exact_match_pct, c.flag_match_pct
    );
}
