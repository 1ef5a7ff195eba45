mod common;

use std::collections::BTreeMap;

use common::{brute_auc, rng};
use dicycle::metrics::{auc, autocorrelation, gauc, logloss, rela_impr, MetricReport, ScoredExample};
use dicycle::Error;
use rand::Rng;

fn random_instance(seed: u64) -> Vec<ScoredExample> {
    let mut r = rng(seed);
    let n = r.random_range(2..=100);
    let users = r.random_range(1..=8);
    // Coarse scores so ties are common.
    let levels = r.random_range(2..=40);
    let mut ex: Vec<ScoredExample> = (0..n)
        .map(|_| {
            ScoredExample::new(
                format!("u{}", r.random_range(0..users)),
                r.random_range(0..levels) as f64 / levels as f64,
                r.random_range(0..2),
            )
        })
        .collect();
    ex[0].label = 0;
    ex[1].label = 1;
    ex
}

fn naive_gauc(ex: &[ScoredExample]) -> f64 {
    let mut by_user: BTreeMap<&str, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    for e in ex {
        let entry = by_user.entry(&e.user).or_default();
        entry.0.push(e.score);
        entry.1.push(e.label);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (scores, labels) in by_user.values() {
        if labels.contains(&0) && labels.contains(&1) {
            num += scores.len() as f64 * brute_auc(scores, labels);
            den += scores.len() as f64;
        }
    }
    num / den
}

#[test]
fn auc_and_gauc_match_exhaustive_oracles() {
    let mut gauc_checked = 0;
    for seed in 0..200 {
        let ex = random_instance(seed);
        let scores: Vec<f64> = ex.iter().map(|e| e.score).collect();
        let labels: Vec<u8> = ex.iter().map(|e| e.label).collect();
        let a = auc(&ex).unwrap();
        assert!((a - brute_auc(&scores, &labels)).abs() <= 1e-12, "instance {seed}");
        if let Ok(g) = gauc(&ex) {
            assert!((g - naive_gauc(&ex)).abs() <= 1e-12, "instance {seed}");
            gauc_checked += 1;
        }
    }
    assert!(gauc_checked > 150);
}

#[test]
fn rela_impr_reference_values() {
    assert!((rela_impr(0.7801, 0.7480).unwrap() - 12.94).abs() < 0.01);
    assert!((rela_impr(0.7961, 0.7524).unwrap() - 17.31).abs() < 0.01);
    assert!(rela_impr(0.7, 0.5).is_err());
}

#[test]
fn single_class_inputs_are_undefined() {
    let ex = vec![ScoredExample::new("u", 0.2, 1), ScoredExample::new("u", 0.9, 1)];
    assert!(matches!(auc(&ex), Err(Error::UndefinedMetric(_))));
    assert!(matches!(gauc(&ex), Err(Error::UndefinedMetric(_))));
}

#[test]
fn logloss_matches_direct_formula() {
    let ex = vec![ScoredExample::new("u", 0.8, 1), ScoredExample::new("u", 0.3, 0)];
    let want = -(0.8f64.ln() + 0.7f64.ln()) / 2.0;
    assert!((logloss(&ex).unwrap() - want).abs() < 1e-15);
}

#[test]
fn report_csv_round_trip() {
    let ex = random_instance(3);
    let r = MetricReport::compute(&ex).unwrap();
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let back = MetricReport::read_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
    assert_eq!(back.auc, r.auc);
    assert_eq!(back.examples, r.examples);
    let table = r.rela_impr_table(&back).unwrap();
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn autocorrelation_of_a_pure_cycle() {
    let xs: Vec<f64> = (0..168).map(|h| (2.0 * std::f64::consts::PI * h as f64 / 24.0).cos()).collect();
    let r24 = autocorrelation(&xs, 24).unwrap();
    let r12 = autocorrelation(&xs, 12).unwrap();
    // Σ over the 144 overlapping points of cos² against the full 168-point sum.
    assert!((r24 - 144.0 / 168.0).abs() < 1e-12, "{r24}");
    assert!((r12 + 156.0 / 168.0).abs() < 1e-12, "{r12}");
    assert!(autocorrelation(&[1.0; 10], 2).is_err());
}
