//! Mini-batch Adam training with held-out early stopping, and evaluation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::{auc, MetricReport, ScoredExample};
use crate::model::{bce_loss, Batch, Model};
use crate::tensor::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without held-out improvement before stopping; 0 disables.
    pub patience: usize,
    /// Share of training samples held out for per-epoch validation.
    pub validation_fraction: f64,
    pub seed: u64,
    /// Parameters whose name starts with any of these prefixes are not updated.
    pub frozen: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 128,
            epochs: 10,
            patience: 2,
            validation_fraction: 0.1,
            seed: 7,
            frozen: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub logloss: f64,
    /// `None` when the split has a single class.
    pub auc: Option<f64>,
}

pub const HISTORY_HEADER: &str = "epoch,split,logloss,auc";

pub fn write_history(records: &[EpochRecord], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{HISTORY_HEADER}")?;
    for r in records {
        let auc = r.auc.map(|a| a.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{}", r.epoch, r.split, r.logloss, auc)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
    pub steps: u64,
}

/// Splits samples into fit and held-out parts with a seeded shuffle.
pub fn holdout_split(samples: &[Sample], fraction: f64, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    idx.shuffle(&mut rng);
    let n_val = (samples.len() as f64 * fraction).round() as usize;
    let (val, fit) = idx.split_at(n_val.min(samples.len()));
    let mut fit = fit.to_vec();
    let mut val = val.to_vec();
    fit.sort_unstable();
    val.sort_unstable();
    (
        fit.into_iter().map(|i| samples[i].clone()).collect(),
        val.into_iter().map(|i| samples[i].clone()).collect(),
    )
}

fn split_metrics(scores: &[f64], samples: &[&Sample]) -> Result<(f64, Option<f64>)> {
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let logloss = bce_loss(scores, &labels)? / scores.len() as f64;
    let examples: Vec<ScoredExample> = scores
        .iter()
        .zip(samples)
        .map(|(&p, s)| ScoredExample::new(s.user.to_string(), p, s.label))
        .collect();
    Ok((logloss, auc(&examples).ok()))
}

/// Trains `model` on `samples`. The optimizer minimises the batch-mean loss.
///
/// Each epoch appends a `train` record (computed from the pre-update predictions
/// of every batch) and, when a held-out slice exists, a `validation` record. The
/// parameters of the epoch with the lowest held-out logloss are returned.
pub fn train(mut model: Model, samples: &[Sample], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let (fit, val) = holdout_split(samples, config.validation_fraction, config.seed);
    if fit.is_empty() {
        return Err(Error::Training("validation split left no training samples".into()));
    }
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..fit.len()).collect();
    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut scores = Vec::with_capacity(fit.len());
        let mut seen: Vec<&Sample> = Vec::with_capacity(fit.len());
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&Sample> = chunk.iter().map(|&i| &fit[i]).collect();
            let batch = Batch::new(&refs, model.num_items())?;
            let (loss, probs, mut grads) = model.gradients(&batch, None, 1.0 / refs.len() as f64)?;
            grads.retain(|name, _| !config.frozen.iter().any(|f| name.starts_with(f.as_str())));
            if !loss.is_finite() || grads.values().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite loss or gradient at epoch {epoch}, step {}",
                    adam.timestep() + 1
                )));
            }
            adam.step(model.named_mut(), &grads)?;
            scores.extend(probs);
            seen.extend(refs);
        }
        let (logloss, train_auc) = split_metrics(&scores, &seen)?;
        history.push(EpochRecord {
            epoch,
            split: "train".into(),
            logloss,
            auc: train_auc,
        });
        let monitored = if val.is_empty() {
            logloss
        } else {
            let refs: Vec<&Sample> = val.iter().collect();
            let scores = model.predict_samples(&val, 512)?;
            let (logloss, auc) = split_metrics(&scores, &refs)?;
            history.push(EpochRecord {
                epoch,
                split: "validation".into(),
                logloss,
                auc,
            });
            logloss
        };
        if best.as_ref().is_none_or(|(b, _, _)| monitored < *b) {
            best = Some((monitored, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience > 0 && since_best >= config.patience {
                break;
            }
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        steps: adam.timestep(),
    })
}

/// Scores `samples` and aggregates the metric report; `users` maps sample user
/// indices to ids.
pub fn evaluate(model: &Model, samples: &[Sample], users: &[String]) -> Result<MetricReport> {
    let scores = model.predict_samples(samples, 512)?;
    let examples: Vec<ScoredExample> = scores
        .into_iter()
        .zip(samples)
        .map(|(p, s)| {
            let user = users.get(s.user).cloned().unwrap_or_else(|| s.user.to_string());
            ScoredExample::new(user, p, s.label)
        })
        .collect();
    MetricReport::compute(&examples)
}
