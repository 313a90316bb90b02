mod common;

use std::collections::BTreeMap;

use common::*;
use oss_ethics::metrics::{
    aggregate, cohen_kappa, consistency_of_runs, evaluate, f1_score, multilabel_metrics, per_flag_counts, Averaging,
    Confusion, FlagCounts, Scope,
};
use oss_ethics::taxonomy::FlagId;
use proptest::prelude::*;

const TOL: f64 = 1e-12;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

#[test]
fn four_item_counts_match_enumeration() {
    let truth = vec![raw(&[1, 3]), raw(&[7]), raw(&[11]), raw(&[2, 5])];
    let pred = vec![raw(&[1]), raw(&[7, 8]), raw(&[3]), raw(&[2, 5])];
    let counts = per_flag_counts(&keyed(&pred), &keyed(&truth)).unwrap();
    let oracle = oracle_counts(&pred, &truth);
    for f in FlagId::ACTIVE {
        let c = counts.get(f);
        let o = oracle[&f.number()];
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (o.tp, o.fp, o.fn_, o.tn), "{f}");
        assert_eq!(c.total(), 4);
    }
}

#[test]
fn perfect_predictions_over_a_covered_scope() {
    let sets = vec![raw(&[1, 2]), raw(&[3]), raw(&[4, 5]), raw(&[11])];
    let counts = per_flag_counts(&keyed(&sets), &keyed(&sets)).unwrap();
    for mode in [Averaging::Micro, Averaging::Macro] {
        let a = aggregate(&counts, &Scope::PositiveNeutral.flags(), mode).unwrap();
        assert_eq!((a.scores.precision, a.scores.recall, a.scores.f1), (1.0, 1.0, 1.0));
        assert!(a.zero_denominators.is_empty());
    }
}

#[test]
fn two_of_four_exact_matches() {
    let truth = vec![raw(&[1]), raw(&[3]), raw(&[6]), raw(&[11])];
    let pred = vec![raw(&[1]), raw(&[1, 3]), raw(&[6]), raw(&[2])];
    let m = multilabel_metrics(&keyed(&pred), &keyed(&truth)).unwrap();
    assert_eq!(m.subset_accuracy, 0.5);
}

#[test]
fn kappa_on_shifted_marks_is_zero() {
    let a = vec![raw(&[1]), raw(&[1]), raw(&[11]), raw(&[11])];
    let b = vec![raw(&[11]), raw(&[1]), raw(&[1]), raw(&[11])];
    let report = cohen_kappa(&keyed(&a), &keyed(&b)).unwrap();
    let k = report.flag(FlagId::F1).unwrap();
    let (po, pe, ko) = oracle_kappa(&a, &b, 1);
    assert_eq!((k.observed, k.expected), (po, pe));
    assert_eq!(k.kappa, Some(0.0));
    assert_eq!(ko, Some(0.0));
}

#[test]
fn mismatched_ids_are_rejected() {
    let a = keyed(&[raw(&[1]), raw(&[2])]);
    let b = keyed(&[raw(&[1])]);
    assert!(evaluate(&a, &b).is_err());
    assert!(cohen_kappa(&a, &b).is_err());
}

fn check_report(pred: &[RawSet], truth: &[RawSet]) -> Result<(), TestCaseError> {
    let report = evaluate(&keyed(pred), &keyed(truth)).unwrap();
    let expected = oracle_report_json(pred, truth);
    let actual = serde_json::to_value(&report).unwrap();
    json_close(&actual, &expected, TOL, "report").map_err(TestCaseError::fail)
}

fn sum_identities(counts: &FlagCounts) -> Result<(), TestCaseError> {
    for scope in Scope::ALL {
        let flags = scope.flags();
        let micro = aggregate(counts, &flags, Averaging::Micro).unwrap().scores;
        let macro_ = aggregate(counts, &flags, Averaging::Macro).unwrap().scores;
        prop_assert!(close(micro.f1, f1_score(micro.precision, micro.recall)));
        let per: Vec<(f64, f64, f64)> = flags
            .iter()
            .map(|&f| {
                let c = counts.get(f);
                let p = c.precision().unwrap_or(0.0);
                let r = c.recall().unwrap_or(0.0);
                (p, r, f1_score(p, r))
            })
            .collect();
        let n = per.len() as f64;
        prop_assert!(close(macro_.precision, per.iter().map(|x| x.0).sum::<f64>() / n));
        prop_assert!(close(macro_.recall, per.iter().map(|x| x.1).sum::<f64>() / n));
        prop_assert!(close(macro_.f1, per.iter().map(|x| x.2).sum::<f64>() / n));
        for v in [
            micro.precision,
            micro.recall,
            micro.f1,
            macro_.precision,
            macro_.recall,
            macro_.f1,
        ] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
    Ok(())
}

proptest! {
    #[test]
    fn report_equals_oracle((pred, truth) in aligned_pair()) {
        check_report(&pred, &truth)?;
    }

    #[test]
    fn macro_is_mean_and_micro_f1_is_harmonic((pred, truth) in aligned_pair()) {
        let counts = per_flag_counts(&keyed(&pred), &keyed(&truth)).unwrap();
        sum_identities(&counts)?;
    }

    #[test]
    fn identities_hold_for_arbitrary_count_tables(
        cells in proptest::collection::vec((0u64..50, 0u64..50, 0u64..50, 0u64..50), 10)
    ) {
        let per_flag: BTreeMap<FlagId, Confusion> = FlagId::ACTIVE
            .iter()
            .zip(&cells)
            .map(|(&f, &(tp, fp, fn_, tn))| (f, Confusion { tp, fp, fn_, tn }))
            .collect();
        let items = per_flag.values().map(|c| c.total()).max().unwrap_or(0);
        sum_identities(&FlagCounts { items, per_flag })?;
    }

    #[test]
    fn perfect_subset_accuracy_saturates_defined_metrics(sets in proptest::collection::vec(valid_set(), 1..=12)) {
        let r = evaluate(&keyed(&sets), &keyed(&sets)).unwrap();
        prop_assert_eq!(r.subset_accuracy, 1.0);
        prop_assert_eq!((r.example_based.precision, r.example_based.recall, r.example_based.f1), (1.0, 1.0, 1.0));
        let overall = r.scope(Scope::Overall).unwrap();
        prop_assert_eq!((overall.micro.precision, overall.micro.recall, overall.micro.f1), (1.0, 1.0, 1.0));
        for s in &r.per_flag {
            if s.counts.tp > 0 {
                prop_assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
            } else {
                prop_assert!(!s.precision_defined && !s.recall_defined);
            }
        }
    }

    #[test]
    fn kappa_equals_contingency_oracle((a, b) in aligned_pair()) {
        let report = cohen_kappa(&keyed(&a), &keyed(&b)).unwrap();
        for k in &report.per_flag {
            let (po, pe, ko) = oracle_kappa(&a, &b, k.flag.number());
            prop_assert!(close(k.observed, po) && close(k.expected, pe));
            match (k.kappa, ko) {
                (Some(x), Some(y)) => {
                    prop_assert!(close(x, y));
                    prop_assert!((-1.0 - TOL..=1.0 + TOL).contains(&x));
                }
                (None, None) => {}
                other => prop_assert!(false, "definedness differs: {:?}", other),
            }
        }
        match (report.macro_kappa, oracle_macro_kappa(&a, &b)) {
            (Some(x), Some(y)) => prop_assert!(close(x, y)),
            (None, None) => {}
            other => prop_assert!(false, "macro differs: {:?}", other),
        }
    }

    #[test]
    fn identical_annotations_have_unit_kappa(a in proptest::collection::vec(valid_set(), 1..=12)) {
        let report = cohen_kappa(&keyed(&a), &keyed(&a)).unwrap();
        for k in report.per_flag.iter().filter(|k| k.used) {
            if k.expected < 1.0 {
                prop_assert_eq!(k.kappa, Some(1.0));
            }
        }
    }

    #[test]
    fn consistency_equals_oracle(
        runs in (2usize..=4, 1usize..=12).prop_flat_map(|(k, n)| {
            proptest::collection::vec(proptest::collection::vec(valid_set(), n), k)
        })
    ) {
        let maps: Vec<_> = runs.iter().map(|r| keyed(r)).collect();
        let report = consistency_of_runs(&maps).unwrap();
        let (exact, flag, pexact, pflag) = oracle_consistency(&runs);
        prop_assert!(close(report.exact_match_pct, exact));
        prop_assert!(close(report.flag_match_pct, flag));
        prop_assert!(close(report.pairwise_exact_match_pct, pexact));
        prop_assert!(close(report.pairwise_flag_match_pct, pflag));
        prop_assert!(report.exact_match_pct <= report.flag_match_pct);
        prop_assert!((0.0..=100.0).contains(&report.flag_match_pct));
    }
}
