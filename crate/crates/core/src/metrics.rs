//! Ranking metrics: AUC, per-user weighted GAUC, log-loss and relative improvement.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::BCE_EPS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub user: String,
    pub score: f64,
    pub label: u8,
}

impl ScoredExample {
    pub fn new(user: impl Into<String>, score: f64, label: u8) -> Self {
        Self {
            user: user.into(),
            score,
            label,
        }
    }
}

fn validate(examples: &[ScoredExample]) -> Result<()> {
    for e in examples {
        if !e.score.is_finite() {
            return Err(Error::Data(format!("non-finite score for user {}", e.user)));
        }
        if e.label > 1 {
            return Err(Error::Data(format!("label {} is not binary", e.label)));
        }
    }
    Ok(())
}

/// Mann-Whitney AUC with average ranks for tied scores, `O(N log N)`.
pub fn auc(examples: &[ScoredExample]) -> Result<f64> {
    validate(examples)?;
    auc_pairs(examples.iter().map(|e| (e.score, e.label)))
}

fn auc_pairs(pairs: impl Iterator<Item = (f64, u8)>) -> Result<f64> {
    let mut v: Vec<(f64, u8)> = pairs.collect();
    let pos = v.iter().filter(|p| p.1 == 1).count();
    let neg = v.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes ({pos} positives, {neg} negatives)"
        )));
    }
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Ranks are 1-based; a tie block spanning ranks i+1..=j gets (i+1+j)/2 each.
    // Doubled ranks stay integral, so the sum is exact.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i + 1;
        while j < v.len() && v[j].0 == v[i].0 {
            j += 1;
        }
        let doubled = (i + 1 + j) as u128;
        let block_pos = v[i..j].iter().filter(|p| p.1 == 1).count() as u128;
        doubled_rank_sum += doubled * block_pos;
        i = j;
    }
    let (p, n) = (pos as u128, neg as u128);
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / (2 * p * n) as f64)
}

/// Per-user AUC averaged with weights proportional to each user's example count.
/// Users whose examples are all one class are left out entirely.
pub fn gauc(examples: &[ScoredExample]) -> Result<f64> {
    validate(examples)?;
    let groups = group_by_user(examples);
    gauc_groups(&groups).map(|(g, _)| g)
}

fn group_by_user(examples: &[ScoredExample]) -> BTreeMap<&str, Vec<(f64, u8)>> {
    let mut groups: BTreeMap<&str, Vec<(f64, u8)>> = BTreeMap::new();
    for e in examples {
        groups.entry(e.user.as_str()).or_default().push((e.score, e.label));
    }
    groups
}

fn gauc_groups(groups: &BTreeMap<&str, Vec<(f64, u8)>>) -> Result<(f64, Vec<UserMetric>)> {
    let mut num = 0.0;
    let mut den = 0usize;
    let mut per_user = Vec::new();
    for (user, v) in groups {
        if let Ok(a) = auc_pairs(v.iter().copied()) {
            num += a * v.len() as f64;
            den += v.len();
            per_user.push(UserMetric {
                user: user.to_string(),
                auc: a,
                examples: v.len(),
            });
        }
    }
    if den == 0 {
        return Err(Error::UndefinedMetric("no user has both classes".into()));
    }
    Ok((num / den as f64, per_user))
}

/// Mean binary cross-entropy with probabilities clamped to `[ε, 1-ε]`.
pub fn logloss(examples: &[ScoredExample]) -> Result<f64> {
    validate(examples)?;
    if examples.is_empty() {
        return Err(Error::UndefinedMetric("log-loss of no examples".into()));
    }
    let eps = BCE_EPS;
    let total: f64 = examples
        .iter()
        .map(|e| {
            let p = e.score.clamp(eps, 1.0 - eps);
            if e.label == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / examples.len() as f64)
}

/// Relative improvement over the 0.5 random floor, in percent.
pub fn rela_impr(target: f64, base: f64) -> Result<f64> {
    if base == 0.5 {
        return Err(Error::UndefinedMetric("base metric sits at the 0.5 floor".into()));
    }
    Ok(((target - 0.5) / (base - 0.5) - 1.0) * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetric {
    pub user: String,
    pub auc: f64,
    pub examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    pub gauc: f64,
    pub logloss: f64,
    pub users: usize,
    pub examples: usize,
    #[serde(skip)]
    pub per_user: Option<Vec<UserMetric>>,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "auc,gauc,logloss,users,examples";

    /// Computes every metric. Examples are put in a canonical order first, so any
    /// permutation or sharding of the same multiset yields identical bits.
    pub fn compute(examples: &[ScoredExample]) -> Result<Self> {
        validate(examples)?;
        let mut sorted = examples.to_vec();
        sorted.sort_by(|a, b| {
            a.user
                .cmp(&b.user)
                .then(a.score.total_cmp(&b.score))
                .then(a.label.cmp(&b.label))
        });
        let groups = group_by_user(&sorted);
        let (gauc, per_user) = gauc_groups(&groups)?;
        Ok(Self {
            auc: auc(&sorted)?,
            gauc,
            logloss: logloss(&sorted)?,
            users: groups.len(),
            examples: sorted.len(),
            per_user: Some(per_user),
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.auc, self.gauc, self.logloss, self.users, self.examples
        )
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        writeln!(w, "{}", self.csv_row())
    }

    pub fn read_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let row: MetricRow = rdr
            .deserialize()
            .next()
            .ok_or_else(|| Error::Schema("report CSV has no data row".into()))??;
        Ok(Self {
            auc: row.auc,
            gauc: row.gauc,
            logloss: row.logloss,
            users: row.users,
            examples: row.examples,
            per_user: None,
        })
    }

    /// CSV table of RelaImpr of `self` over `base` for AUC and GAUC.
    pub fn rela_impr_table(&self, base: &MetricReport) -> Result<String> {
        let mut out = String::from("metric,target,base,rela_impr_pct\n");
        for (name, t, b) in [("auc", self.auc, base.auc), ("gauc", self.gauc, base.gauc)] {
            out.push_str(&format!("{name},{t},{b},{}\n", rela_impr(t, b)?));
        }
        Ok(out)
    }
}

#[derive(Deserialize)]
struct MetricRow {
    auc: f64,
    gauc: f64,
    logloss: f64,
    users: usize,
    examples: usize,
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>10}", "metric", "value")?;
        writeln!(f, "{:<10} {:>10.4}", "AUC", self.auc)?;
        writeln!(f, "{:<10} {:>10.4}", "GAUC", self.gauc)?;
        writeln!(f, "{:<10} {:>10.4}", "logloss", self.logloss)?;
        writeln!(f, "{:<10} {:>10}", "users", self.users)?;
        write!(f, "{:<10} {:>10}", "examples", self.examples)
    }
}

/// Collects examples across shards; `finish` equals a single-pass computation.
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    examples: Vec<ScoredExample>,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, e: ScoredExample) {
        self.examples.push(e);
    }

    pub fn extend(&mut self, it: impl IntoIterator<Item = ScoredExample>) {
        self.examples.extend(it);
    }

    pub fn merge(mut self, other: MetricAccumulator) -> Self {
        self.examples.extend(other.examples);
        self
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn finish(&self) -> Result<MetricReport> {
        MetricReport::compute(&self.examples)
    }
}

/// Sample autocorrelation at `lag`: `Σ (x_i - m)(x_{i+lag} - m) / Σ (x_i - m)²`.
pub fn autocorrelation(xs: &[f64], lag: usize) -> Result<f64> {
    if lag >= xs.len() {
        return Err(Error::Degenerate(format!("lag {lag} needs more than {} points", xs.len())));
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    if var == 0.0 {
        return Err(Error::Degenerate("constant series has no autocorrelation".into()));
    }
    let cov: f64 = xs.iter().zip(&xs[lag..]).map(|(a, b)| (a - m) * (b - m)).sum();
    Ok(cov / var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(v: &[(f64, u8)]) -> Vec<ScoredExample> {
        v.iter().map(|&(s, l)| ScoredExample::new("u", s, l)).collect()
    }

    #[test]
    fn auc_basic_cases() {
        assert_eq!(auc(&ex(&[(0.9, 1), (0.1, 0)])).unwrap(), 1.0);
        assert_eq!(auc(&ex(&[(0.4, 1), (0.4, 0), (0.4, 1), (0.4, 0)])).unwrap(), 0.5);
        assert!(matches!(auc(&ex(&[(0.4, 1), (0.2, 1)])), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn gauc_weighted_mean() {
        let mut v = vec![
            ScoredExample::new("a", 0.9, 1),
            ScoredExample::new("a", 0.8, 1),
            ScoredExample::new("a", 0.2, 0),
            ScoredExample::new("a", 0.1, 0),
            ScoredExample::new("b", 0.5, 1),
            ScoredExample::new("b", 0.5, 0),
        ];
        assert!((gauc(&v).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        // Single-class user is excluded.
        v.push(ScoredExample::new("c", 0.3, 1));
        assert!((gauc(&v).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!(matches!(
            gauc(&[ScoredExample::new("c", 0.3, 1)]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn rela_impr_reference_values() {
        assert!((rela_impr(0.7801, 0.7480).unwrap() - 12.94).abs() < 0.01);
        assert!((rela_impr(0.7961, 0.7524).unwrap() - 17.31).abs() < 0.01);
        assert_eq!(rela_impr(0.7, 0.7).unwrap(), 0.0);
        assert!(rela_impr(0.7, 0.5).is_err());
    }

    #[test]
    fn logloss_half() {
        let l = logloss(&ex(&[(0.5, 1), (0.5, 0)])).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn report_csv_round_trip() {
        let v = ex(&[(0.9, 1), (0.1, 0), (0.4, 1)]);
        let r = MetricReport::compute(&v).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let back = MetricReport::read_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.auc, r.auc);
        assert_eq!(back.examples, 3);
        let table = r.rela_impr_table(&back).unwrap();
        assert!(table.contains("auc,"));
    }

    #[test]
    fn non_finite_score_rejected() {
        assert!(matches!(auc(&ex(&[(f64::NAN, 1), (0.1, 0)])), Err(Error::Data(_))));
    }
}
