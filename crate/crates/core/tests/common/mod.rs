//! Brute-force reference implementations and random instance generators
//! shared by the integration and acceptance tests. Sets are plain
//! `BTreeSet<u8>` of flag numbers so nothing here leans on library types.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use oss_ethics::taxonomy::FlagSet;
use proptest::prelude::*;
use rand::Rng;
use serde_json::{json, Value};

pub type RawSet = BTreeSet<u8>;

pub const ACTIVE: [u8; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 11];
pub const POSITIVE_NEUTRAL: [u8; 6] = [1, 2, 3, 4, 5, 11];
pub const NEGATIVE: [u8; 4] = [6, 7, 8, 9];

pub fn raw(flags: &[u8]) -> RawSet {
    flags.iter().copied().collect()
}

pub fn to_flagset(s: &RawSet) -> FlagSet {
    FlagSet::parse(s.iter().map(|n| format!("F{n}"))).expect("valid raw set")
}

pub fn from_flagset(s: &FlagSet) -> RawSet {
    s.iter().map(|f| f.number()).collect()
}

/// Label maps keyed `item-00`, `item-01`, ...
pub fn keyed(sets: &[RawSet]) -> BTreeMap<String, FlagSet> {
    sets.iter()
        .enumerate()
        .map(|(i, s)| (format!("item-{i:02}"), to_flagset(s)))
        .collect()
}

// ---------------------------------------------------------------- validity

/// Non-empty, no F10, F11 only alone, otherwise all positive or all negative.
pub fn oracle_valid(s: &RawSet) -> bool {
    if s.is_empty() || s.contains(&10) {
        return false;
    }
    if s.contains(&11) {
        return s.len() == 1;
    }
    s.iter().all(|f| (1..=5).contains(f)) || s.iter().all(|f| (6..=9).contains(f))
}

// ---------------------------------------------------------------- counts

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Cell {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

pub fn oracle_counts(pred: &[RawSet], truth: &[RawSet]) -> BTreeMap<u8, Cell> {
    let mut out: BTreeMap<u8, Cell> = ACTIVE.iter().map(|&f| (f, Cell::default())).collect();
    for item in 0..pred.len() {
        for &f in &ACTIVE {
            let p = pred[item].contains(&f);
            let t = truth[item].contains(&f);
            let c = out.get_mut(&f).unwrap();
            if p && t {
                c.tp += 1;
            } else if p {
                c.fp += 1;
            } else if t {
                c.fn_ += 1;
            } else {
                c.tn += 1;
            }
        }
    }
    out
}

fn safe_div(a: f64, b: f64) -> (f64, bool) {
    if b == 0.0 {
        (0.0, false)
    } else {
        (a / b, true)
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// (precision, recall, f1, precision defined, recall defined)
pub fn oracle_flag_prf(c: Cell) -> (f64, f64, f64, bool, bool) {
    let (p, pd) = safe_div(c.tp as f64, (c.tp + c.fp) as f64);
    let (r, rd) = safe_div(c.tp as f64, (c.tp + c.fn_) as f64);
    (p, r, harmonic(p, r), pd, rd)
}

pub fn oracle_micro(counts: &BTreeMap<u8, Cell>, flags: &[u8]) -> (f64, f64, f64, bool, bool) {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for f in flags {
        tp += counts[f].tp;
        fp += counts[f].fp;
        fn_ += counts[f].fn_;
    }
    oracle_flag_prf(Cell { tp, fp, fn_, tn: 0 })
}

pub fn oracle_macro(counts: &BTreeMap<u8, Cell>, flags: &[u8]) -> (f64, f64, f64) {
    let per: Vec<(f64, f64, f64, bool, bool)> = flags.iter().map(|f| oracle_flag_prf(counts[f])).collect();
    let n = flags.len() as f64;
    (
        per.iter().map(|x| x.0).sum::<f64>() / n,
        per.iter().map(|x| x.1).sum::<f64>() / n,
        per.iter().map(|x| x.2).sum::<f64>() / n,
    )
}

pub fn oracle_subset_accuracy(pred: &[RawSet], truth: &[RawSet]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / pred.len() as f64
}

pub fn oracle_example_based(pred: &[RawSet], truth: &[RawSet]) -> (f64, f64, f64) {
    let n = pred.len() as f64;
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let common = p.intersection(t).count() as f64;
        let ip = common / p.len() as f64;
        let ir = common / t.len() as f64;
        sp += ip;
        sr += ir;
        sf += harmonic(ip, ir);
    }
    (sp / n, sr / n, sf / n)
}

// ---------------------------------------------------------------- kappa

/// (observed, expected, kappa) from the 2×2 contingency table of flag `f`.
pub fn oracle_kappa(a: &[RawSet], b: &[RawSet], f: u8) -> (f64, f64, Option<f64>) {
    let n = a.len() as f64;
    let (mut yy, mut yn, mut ny, mut nn) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        match (x.contains(&f), y.contains(&f)) {
            (true, true) => yy += 1.0,
            (true, false) => yn += 1.0,
            (false, true) => ny += 1.0,
            (false, false) => nn += 1.0,
        }
    }
    let po = (yy + nn) / n;
    let pe = ((yy + yn) * (yy + ny) + (ny + nn) * (yn + nn)) / (n * n);
    let k = if pe == 1.0 { None } else { Some((po - pe) / (1.0 - pe)) };
    (po, pe, k)
}

pub fn oracle_macro_kappa(a: &[RawSet], b: &[RawSet]) -> Option<f64> {
    let mut ks = Vec::new();
    for &f in &ACTIVE {
        let used = a.iter().chain(b).any(|s| s.contains(&f));
        if let (true, (_, _, Some(k))) = (used, oracle_kappa(a, b, f)) {
            ks.push(k);
        }
    }
    (!ks.is_empty()).then(|| ks.iter().sum::<f64>() / ks.len() as f64)
}

// ---------------------------------------------------------------- consistency

/// `runs[r][item]` → (exact %, flag %, pairwise exact %, pairwise flag %).
pub fn oracle_consistency(runs: &[Vec<RawSet>]) -> (f64, f64, f64, f64) {
    let items = runs[0].len();
    let k = runs.len();
    let (mut exact, mut flag, mut pe, mut pf) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..items {
        let sets: Vec<&RawSet> = runs.iter().map(|r| &r[i]).collect();
        if sets.windows(2).all(|w| w[0] == w[1]) {
            exact += 1.0;
        }
        let mut common: RawSet = sets[0].clone();
        for s in &sets[1..] {
            common = common.intersection(s).copied().collect();
        }
        if !common.is_empty() {
            flag += 1.0;
        }
        let mut pairs = 0.0;
        let (mut same, mut overlap) = (0.0, 0.0);
        for x in 0..k {
            for y in 0..k {
                if x < y {
                    pairs += 1.0;
                    if sets[x] == sets[y] {
                        same += 1.0;
                    }
                    if sets[x].intersection(sets[y]).next().is_some() {
                        overlap += 1.0;
                    }
                }
            }
        }
        pe += same / pairs;
        pf += overlap / pairs;
    }
    let n = items as f64;
    (100.0 * exact / n, 100.0 * flag / n, 100.0 * pe / n, 100.0 * pf / n)
}

// ---------------------------------------------------------------- distribution

/// Unrounded share of each active flag in all occurrences.
pub fn oracle_distribution(sets: &[RawSet]) -> BTreeMap<u8, f64> {
    let total: usize = sets.iter().map(|s| s.len()).sum();
    ACTIVE
        .iter()
        .map(|&f| {
            let n = sets.iter().filter(|s| s.contains(&f)).count();
            (
                f,
                if total == 0 {
                    0.0
                } else {
                    100.0 * n as f64 / total as f64
                },
            )
        })
        .collect()
}

// ---------------------------------------------------------------- golden report

fn prf_json(p: f64, r: f64, f: f64) -> Value {
    json!({"precision": p, "recall": r, "f1": f})
}

/// The evaluation report as the oracle sees it, in the library's JSON
/// layout. Used to produce golden files.
pub fn oracle_report_json(pred: &[RawSet], truth: &[RawSet]) -> Value {
    let counts = oracle_counts(pred, truth);
    let mut zero = Vec::new();
    let per_flag: Vec<Value> = ACTIVE
        .iter()
        .map(|f| {
            let c = counts[f];
            let (p, r, f1, pd, rd) = oracle_flag_prf(c);
            if !pd {
                zero.push(format!("F{f} precision"));
            }
            if !rd {
                zero.push(format!("F{f} recall"));
            }
            json!({
                "flag": format!("F{f}"),
                "precision": p, "recall": r, "f1": f1,
                "counts": {"tp": c.tp, "fp": c.fp, "fn": c.fn_, "tn": c.tn},
                "precision_defined": pd, "recall_defined": rd,
            })
        })
        .collect();
    let mut scopes = Vec::new();
    for (name, flags) in [
        ("positive_neutral", &POSITIVE_NEUTRAL[..]),
        ("negative", &NEGATIVE[..]),
        ("overall", &ACTIVE[..]),
    ] {
        let (mp, mr, mf, pd, rd) = oracle_micro(&counts, flags);
        if !pd {
            zero.push(format!("{name} micro precision"));
        }
        if !rd {
            zero.push(format!("{name} micro recall"));
        }
        let (ap, ar, af) = oracle_macro(&counts, flags);
        scopes.push(json!({"scope": name, "micro": prf_json(mp, mr, mf), "macro": prf_json(ap, ar, af)}));
    }
    let (ep, er, ef) = oracle_example_based(pred, truth);
    json!({
        "evaluated": pred.len(),
        "per_flag": per_flag,
        "scopes": scopes,
        "subset_accuracy": oracle_subset_accuracy(pred, truth),
        "example_based": prf_json(ep, er, ef),
        "zero_denominators": zero,
    })
}

/// Structural equality with numbers compared to `tol`.
pub fn json_close(a: &Value, b: &Value, tol: f64, path: &str) -> Result<(), String> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            if (x - y).abs() <= tol {
                Ok(())
            } else {
                Err(format!("{path}: {x} != {y}"))
            }
        }
        (Value::Array(x), Value::Array(y)) => {
            if x.len() != y.len() {
                return Err(format!("{path}: length {} != {}", x.len(), y.len()));
            }
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                json_close(u, v, tol, &format!("{path}[{i}]"))?;
            }
            Ok(())
        }
        (Value::Object(x), Value::Object(y)) => {
            let kx: BTreeSet<&String> = x.keys().collect();
            let ky: BTreeSet<&String> = y.keys().collect();
            if kx != ky {
                return Err(format!("{path}: keys {kx:?} != {ky:?}"));
            }
            for k in kx {
                json_close(&x[k], &y[k], tol, &format!("{path}.{k}"))?;
            }
            Ok(())
        }
        _ if a == b => Ok(()),
        _ => Err(format!("{path}: {a} != {b}")),
    }
}

// ---------------------------------------------------------------- generators

pub fn random_valid_set<R: Rng>(rng: &mut R) -> RawSet {
    match rng.random_range(0..3) {
        0 => {
            let mask: u8 = rng.random_range(1..32);
            (0..5).filter(|b| mask & (1 << b) != 0).map(|b| b + 1).collect()
        }
        1 => {
            let mask: u8 = rng.random_range(1..16);
            (0..4).filter(|b| mask & (1 << b) != 0).map(|b| b + 6).collect()
        }
        _ => raw(&[11]),
    }
}

pub fn random_sets<R: Rng>(rng: &mut R, n: usize) -> Vec<RawSet> {
    (0..n).map(|_| random_valid_set(rng)).collect()
}

/// Proptest strategy over valid flag sets.
pub fn valid_set() -> impl Strategy<Value = RawSet> {
    prop_oneof![
        (1u8..32).prop_map(|m| (0..5).filter(|b| m & (1 << b) != 0).map(|b| b + 1).collect()),
        (1u8..16).prop_map(|m| (0..4).filter(|b| m & (1 << b) != 0).map(|b| b + 6).collect()),
        Just(raw(&[11])),
    ]
}

/// Aligned (predictions, truth) of 1..=12 items.
pub fn aligned_pair() -> impl Strategy<Value = (Vec<RawSet>, Vec<RawSet>)> {
    (1usize..=12).prop_flat_map(|n| {
        (
            proptest::collection::vec(valid_set(), n),
            proptest::collection::vec(valid_set(), n),
        )
    })
}
