//! The full network, its baselines and ablations, plus batching and loss.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{gate, interest_attention_on, similarity, GatedFilterConfig, TimeCycleAttention, TimeCycleVars};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var, BCE_EPS};
use crate::time_encoding::{AbsoluteTimeConfig, AbsoluteTimeEncoder, AbsoluteVars, RelativeTimeEncoder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    #[serde(rename = "dicycle")]
    DiCycle,
    NoAbsoluteTime,
    NoRelativeTime,
    NoTimeCycleModule,
    DinStyle,
    Dnn,
    Lr,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 7] = [
        Self::DiCycle,
        Self::NoAbsoluteTime,
        Self::NoRelativeTime,
        Self::NoTimeCycleModule,
        Self::DinStyle,
        Self::Dnn,
        Self::Lr,
    ];

    /// The full model followed by its three ablations.
    pub const ABLATION: [ModelVariant; 4] = [
        Self::DiCycle,
        Self::NoAbsoluteTime,
        Self::NoRelativeTime,
        Self::NoTimeCycleModule,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::DiCycle => "dicycle",
            Self::NoAbsoluteTime => "no_absolute_time",
            Self::NoRelativeTime => "no_relative_time",
            Self::NoTimeCycleModule => "no_time_cycle_module",
            Self::DinStyle => "din_style",
            Self::Dnn => "dnn",
            Self::Lr => "lr",
        }
    }

    pub fn uses_absolute(self) -> bool {
        matches!(self, Self::DiCycle | Self::NoRelativeTime | Self::NoTimeCycleModule)
    }

    pub fn uses_relative(self) -> bool {
        matches!(self, Self::DiCycle | Self::NoAbsoluteTime | Self::NoTimeCycleModule)
    }

    pub fn uses_time_cycle(self) -> bool {
        matches!(self, Self::DiCycle | Self::NoAbsoluteTime | Self::NoRelativeTime)
    }

    fn head_input(self, d: usize) -> usize {
        match self {
            Self::NoTimeCycleModule | Self::DinStyle => d,
            _ => 2 * d,
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub dim: usize,
    /// Hidden widths of the prediction head. Ignored by the LR baseline.
    pub hidden: Vec<usize>,
    pub delta_thred: f64,
    /// Drop gated-out positions from the time cycle softmax instead of keeping them
    /// as zero vectors.
    pub strict_mask: bool,
    pub absolute: AbsoluteTimeConfig,
    pub time_unit_seconds: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: ModelVariant::DiCycle,
            dim: 16,
            hidden: vec![128, 64],
            delta_thred: 0.6,
            strict_mask: false,
            absolute: AbsoluteTimeConfig::default(),
            time_unit_seconds: 3600.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(Error::Config(format!("d must be even and positive, got {}", self.dim)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(self.time_unit_seconds > 0.0) {
            return Err(Error::Config("time unit must be positive".into()));
        }
        GatedFilterConfig::new(self.delta_thred)?;
        self.absolute.validate()
    }
}

/// Fully connected head; ReLU between layers, raw logit out.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl Mlp {
    pub fn new(widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weight = (0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)).collect();
                let bias = (0..w[1]).map(|_| rng.random_range(-bound..bound)).collect();
                Ok((Tensor::matrix(w[0], w[1], weight)?, Tensor::vector(bias)))
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    fn names(i: usize) -> (String, String) {
        (format!("head.w{i}"), format!("head.b{i}"))
    }

    pub fn forward(graph: &mut Graph, vars: &[(Var, Var)], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in vars.iter().enumerate() {
            let z = graph.matmul(h, w)?;
            h = graph.add_bias(z, b)?;
            if i + 1 < vars.len() {
                h = graph.relu(h);
            }
        }
        Ok(h)
    }
}

/// Left-padded, flattened inputs for one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub len: usize,
    pub hist_items: Vec<usize>,
    pub hist_times: Vec<i64>,
    pub valid: Vec<bool>,
    pub target_items: Vec<usize>,
    pub target_times: Vec<i64>,
    pub labels: Vec<f64>,
}

impl Batch {
    /// Pads every sample to the longest history in the batch (at least one slot).
    pub fn new(samples: &[&Sample], num_items: usize) -> Result<Self> {
        let len = samples.iter().map(|s| s.behaviors.len()).max().unwrap_or(0).max(1);
        Self::with_len(samples, num_items, len)
    }

    pub fn with_len(samples: &[&Sample], num_items: usize, len: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Degenerate("empty batch".into()));
        }
        if len == 0 {
            return Err(Error::Config("padded length must be positive".into()));
        }
        let n = samples.len();
        let mut b = Self {
            len,
            hist_items: Vec::with_capacity(n * len),
            hist_times: Vec::with_capacity(n * len),
            valid: Vec::with_capacity(n * len),
            target_items: Vec::with_capacity(n),
            target_times: Vec::with_capacity(n),
            labels: Vec::with_capacity(n),
        };
        for (k, s) in samples.iter().enumerate() {
            let bad = std::iter::once(s.target_item)
                .chain(s.behaviors.iter().map(|x| x.item))
                .find(|&i| i >= num_items);
            if let Some(i) = bad {
                return Err(Error::Data(format!(
                    "sample {k} (user {}): item id {i} outside table of {num_items} rows",
                    s.user
                )));
            }
            if s.label > 1 {
                return Err(Error::Data(format!("sample {k}: label {} is not binary", s.label)));
            }
            let (items, times, valid) = s.padded(len);
            b.hist_items.extend(items);
            b.hist_times.extend(times);
            b.valid.extend(valid);
            b.target_items.push(s.target_item);
            b.target_times.push(s.target_time);
            b.labels.push(f64::from(s.label));
        }
        Ok(b)
    }

    pub fn size(&self) -> usize {
        self.target_items.len()
    }
}

/// Graph handles for every parameter of a [`Model`].
#[derive(Debug, Clone)]
pub struct Bound {
    /// Same order as [`Model::named`].
    pub params: Vec<(String, Var)>,
    items: Var,
    absolute: Option<AbsoluteVars>,
    omega: Option<Var>,
    time_cycle: Option<TimeCycleVars>,
    head: Vec<(Var, Var)>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub logit: Var,
    pub prob: Var,
    /// Gate weight of every flattened behavior position (zero for padding).
    pub gate: Vec<f64>,
    pub zero_norm: usize,
}

pub const ITEM_TABLE: &str = "item.embedding";

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub items: Tensor,
    pub absolute: Option<AbsoluteTimeEncoder>,
    pub relative: Option<RelativeTimeEncoder>,
    pub time_cycle: Option<TimeCycleAttention>,
    pub head: Mlp,
}

impl Model {
    /// Seeded initialisation. Each component draws from its own stream, so
    /// variants built from the same seed share every parameter they have in common.
    pub fn new(config: ModelConfig, num_items: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_items < 2 {
            return Err(Error::Config("need at least one item besides padding".into()));
        }
        let rng = |stream: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(stream);
            r
        };
        let d = config.dim;
        let v = config.variant;
        let bound = 1.0 / (d as f64).sqrt();
        let mut r = rng(0);
        let items = Tensor::matrix(
            num_items,
            d,
            (0..num_items * d).map(|_| r.random_range(-bound..bound)).collect(),
        )?;
        let absolute = if v.uses_absolute() {
            Some(AbsoluteTimeEncoder::new(config.absolute.clone(), d, &mut rng(1))?)
        } else {
            None
        };
        let relative = if v.uses_relative() {
            Some(RelativeTimeEncoder::new(d, config.time_unit_seconds, &mut rng(2))?)
        } else {
            None
        };
        let time_cycle = v.uses_time_cycle().then(|| TimeCycleAttention::new(d, &mut rng(3)));
        let head = Mlp::new(&Self::head_widths(&config), &mut rng(4))?;
        Ok(Self {
            config,
            items,
            absolute,
            relative,
            time_cycle,
            head,
        })
    }

    fn head_widths(config: &ModelConfig) -> Vec<usize> {
        let mut w = vec![config.variant.head_input(config.dim)];
        if config.variant != ModelVariant::Lr {
            w.extend(&config.hidden);
        }
        w.push(1);
        w
    }

    pub fn num_items(&self) -> usize {
        self.items.rows()
    }

    pub fn variant(&self) -> ModelVariant {
        self.config.variant
    }

    /// Every parameter with its checkpoint name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![(ITEM_TABLE.to_string(), &self.items)];
        if let Some(a) = &self.absolute {
            out.extend(a.named());
        }
        if let Some(r) = &self.relative {
            out.push((RelativeTimeEncoder::OMEGA_NAME.to_string(), &r.omega));
        }
        if let Some(t) = &self.time_cycle {
            out.extend(t.named());
        }
        for (i, (w, b)) in self.head.layers.iter().enumerate() {
            let (nw, nb) = Mlp::names(i);
            out.push((nw, w));
            out.push((nb, b));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![(ITEM_TABLE.to_string(), &mut self.items)];
        if let Some(a) = &mut self.absolute {
            out.extend(a.named_mut());
        }
        if let Some(r) = &mut self.relative {
            out.push((RelativeTimeEncoder::OMEGA_NAME.to_string(), &mut r.omega));
        }
        if let Some(t) = &mut self.time_cycle {
            out.extend(t.named_mut());
        }
        for (i, (w, b)) in self.head.layers.iter_mut().enumerate() {
            let (nw, nb) = Mlp::names(i);
            out.push((nw, w));
            out.push((nb, b));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_checkpoint(&self) -> BTreeMap<String, Tensor> {
        self.named().into_iter().map(|(n, t)| (n, t.clone())).collect()
    }

    /// Rebuilds a model from checkpoint tensors. The set of names and every shape
    /// must match what `config` would create.
    pub fn from_checkpoint(config: ModelConfig, tensors: &BTreeMap<String, Tensor>) -> Result<Self> {
        let num_items = tensors
            .get(ITEM_TABLE)
            .ok_or_else(|| Error::Checkpoint(format!("missing {ITEM_TABLE}")))?
            .rows();
        let mut model = Self::new(config, num_items, 0)?;
        let expected: Vec<String> = model.named().into_iter().map(|(n, _)| n).collect();
        if let Some(extra) = tensors.keys().find(|k| !expected.contains(k)) {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        for (name, slot) in model.named_mut() {
            let t = tensors
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone().with_requires_grad(false);
        }
        Ok(model)
    }

    pub fn bind(&self, graph: &mut Graph) -> Bound {
        let items = graph.param(self.items.clone());
        let mut params = vec![(ITEM_TABLE.to_string(), items)];
        let absolute = self.absolute.as_ref().map(|a| {
            let vars = a.bind(graph);
            let names = a.named().into_iter().map(|(n, _)| n);
            params.extend(names.zip(vars.tables.iter().chain(&vars.kernels).copied()));
            vars
        });
        let omega = self.relative.as_ref().map(|r| {
            let v = graph.param(r.omega.clone());
            params.push((RelativeTimeEncoder::OMEGA_NAME.to_string(), v));
            v
        });
        let time_cycle = self.time_cycle.as_ref().map(|t| {
            let vars = t.bind(graph);
            params.extend(
                TimeCycleAttention::NAMES
                    .iter()
                    .map(|n| n.to_string())
                    .zip([vars.w_q, vars.w_k, vars.w_v]),
            );
            vars
        });
        let head = self
            .head
            .layers
            .iter()
            .enumerate()
            .map(|(i, (w, b))| {
                let (w, b) = (graph.param(w.clone()), graph.param(b.clone()));
                let (nw, nb) = Mlp::names(i);
                params.push((nw, w));
                params.push((nb, b));
                (w, b)
            })
            .collect();
        Bound {
            params,
            items,
            absolute,
            omega,
            time_cycle,
            head,
        }
    }

    /// `q_k` for every flattened behavior position and `q_a` for every target.
    fn time_vectors(&self, graph: &mut Graph, bound: &Bound, batch: &Batch) -> Result<(Var, Var)> {
        let mut q_k: Option<Var> = None;
        let mut q_a: Option<Var> = None;
        let add = |graph: &mut Graph, acc: &mut Option<Var>, v: Var| -> Result<()> {
            *acc = Some(match *acc {
                None => v,
                Some(a) => graph.add(a, v)?,
            });
            Ok(())
        };
        if let (Some(rel), Some(omega)) = (&self.relative, bound.omega) {
            let dt: Vec<f64> = batch
                .hist_times
                .iter()
                .enumerate()
                .map(|(i, &t)| (batch.target_times[i / batch.len] - t) as f64)
                .collect();
            let phi_k = rel.encode_on(graph, omega, &dt)?;
            let phi_a = rel.encode_on(graph, omega, &vec![0.0; batch.size()])?;
            add(graph, &mut q_k, phi_k)?;
            add(graph, &mut q_a, phi_a)?;
        }
        if let (Some(abs), Some(vars)) = (&self.absolute, &bound.absolute) {
            let smoothed = abs.smoothed_tables(graph, vars)?;
            let lam_k = abs.lookup(graph, &smoothed, &batch.hist_times)?;
            let lam_a = abs.lookup(graph, &smoothed, &batch.target_times)?;
            add(graph, &mut q_k, lam_k)?;
            add(graph, &mut q_a, lam_a)?;
        }
        match (q_k, q_a) {
            (Some(k), Some(a)) => Ok((k, a)),
            _ => Err(Error::Contract(format!("variant {} has no time encoder", self.variant()))),
        }
    }

    fn gate_weights(&self, batch: &Batch) -> (Vec<f64>, usize) {
        let d = self.config.dim;
        let mut zero_norm = 0;
        let weights = batch
            .hist_items
            .iter()
            .enumerate()
            .map(|(i, &item)| {
                if !batch.valid[i] {
                    return 0.0;
                }
                let target = self.items.row(batch.target_items[i / batch.len]);
                let sim = similarity(target, &self.items.data()[item * d..(item + 1) * d]).unwrap_or_else(|| {
                    zero_norm += 1;
                    0.5
                });
                gate(sim, self.config.delta_thred)
            })
            .collect();
        (weights, zero_norm)
    }

    /// Builds the forward pass on `graph`.
    ///
    /// `gate_override` replaces the gate weights computed from the current item
    /// embeddings; finite-difference checks use it to hold the gate fixed.
    pub fn forward_on(
        &self,
        graph: &mut Graph,
        bound: &Bound,
        batch: &Batch,
        gate_override: Option<&[f64]>,
    ) -> Result<Forward> {
        let (n, len) = (batch.size(), batch.len);
        let e_k = graph.gather_rows(bound.items, &batch.hist_items)?;
        let e_a = graph.gather_rows(bound.items, &batch.target_items)?;
        let mut gate_out = (vec![0.0; n * len], 0);
        let x = match self.variant() {
            ModelVariant::Lr | ModelVariant::Dnn => {
                let mean = self.variant() == ModelVariant::Lr;
                let mut w = Vec::with_capacity(n * len);
                for row in batch.valid.chunks(len) {
                    let count = row.iter().filter(|&&v| v).count().max(1) as f64;
                    let unit = if mean { 1.0 / count } else { 1.0 };
                    w.extend(row.iter().map(|&v| if v { unit } else { 0.0 }));
                }
                let alpha = graph.constant(Tensor::matrix(n, len, w)?);
                let pooled = graph.weighted_sum(alpha, e_k)?;
                graph.concat_cols(pooled, e_a)?
            }
            ModelVariant::DinStyle => interest_attention_on(graph, e_a, e_k, &batch.valid, len, true)?,
            v => {
                let (q_k, q_a) = self.time_vectors(graph, bound, batch)?;
                let r_k = graph.add(e_k, q_k)?;
                let r_a = graph.add(e_a, q_a)?;
                let r = interest_attention_on(graph, r_a, r_k, &batch.valid, len, true)?;
                if v == ModelVariant::NoTimeCycleModule {
                    r
                } else {
                    gate_out = match gate_override {
                        Some(g) if g.len() == n * len => (g.to_vec(), 0),
                        Some(g) => return Err(Error::dim("gate_override", &[n * len], &[g.len()])),
                        None => self.gate_weights(batch),
                    };
                    let f = graph.constant(Tensor::vector(gate_out.0.clone()));
                    let q_tilde = graph.scale_rows(q_k, f)?;
                    let mask: Vec<bool> = if self.config.strict_mask {
                        batch.valid.iter().zip(&gate_out.0).map(|(&v, &f)| v && f > 0.0).collect()
                    } else {
                        batch.valid.clone()
                    };
                    let vars = bound
                        .time_cycle
                        .ok_or_else(|| Error::Contract("time cycle parameters not bound".into()))?;
                    let h = TimeCycleAttention::forward(graph, vars, q_a, q_tilde, &mask, len, true)?;
                    graph.concat_cols(r, h)?
                }
            }
        };
        let logit = Mlp::forward(graph, &bound.head, x)?;
        let prob = graph.sigmoid(logit);
        Ok(Forward {
            logit,
            prob,
            gate: gate_out.0,
            zero_norm: gate_out.1,
        })
    }

    /// Click probabilities for a batch.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut graph = Graph::new();
        let bound = self.bind(&mut graph);
        let fwd = self.forward_on(&mut graph, &bound, batch, None)?;
        Ok(graph.value(fwd.prob).data().to_vec())
    }

    /// Probabilities for arbitrarily many samples, in chunks of `chunk`.
    pub fn predict_samples(&self, samples: &[Sample], chunk: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len());
        for part in samples.chunks(chunk.max(1)) {
            let refs: Vec<&Sample> = part.iter().collect();
            out.extend(self.predict(&Batch::new(&refs, self.num_items())?)?);
        }
        Ok(out)
    }

    /// Summed cross-entropy of a batch.
    pub fn loss(&self, batch: &Batch, gate_override: Option<&[f64]>) -> Result<f64> {
        let mut graph = Graph::new();
        let bound = self.bind(&mut graph);
        let fwd = self.forward_on(&mut graph, &bound, batch, gate_override)?;
        let loss = graph.bce_sum(fwd.prob, &batch.labels)?;
        Ok(graph.value(loss).data()[0])
    }

    /// Summed loss and its gradient with respect to every parameter, scaled by
    /// `scale` (use `1/B` to differentiate the batch mean).
    pub fn gradients(
        &self,
        batch: &Batch,
        gate_override: Option<&[f64]>,
        scale: f64,
    ) -> Result<(f64, Vec<f64>, BTreeMap<String, Vec<f64>>)> {
        let mut graph = Graph::new();
        let bound = self.bind(&mut graph);
        let fwd = self.forward_on(&mut graph, &bound, batch, gate_override)?;
        let loss = graph.bce_sum(fwd.prob, &batch.labels)?;
        let total = graph.value(loss).data()[0];
        let objective = graph.scale(loss, scale);
        graph.backward(objective)?;
        let grads = bound
            .params
            .iter()
            .map(|(name, v)| {
                let g = graph
                    .grad(*v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; graph.value(*v).len()]);
                (name.clone(), g)
            })
            .collect();
        Ok((total, graph.value(fwd.prob).data().to_vec(), grads))
    }

    /// Scores `sample` with its target time moved forward by `k · step_seconds`
    /// for `k = 0..=horizon`. Returns `(offset hours, score)` pairs.
    pub fn probe_timestamp_sweep(&self, sample: &Sample, horizon: usize, step_seconds: i64) -> Result<Vec<(f64, f64)>> {
        if step_seconds <= 0 {
            return Err(Error::Config("probe step must be positive".into()));
        }
        let shifted: Vec<Sample> = (0..=horizon as i64)
            .map(|k| Sample {
                target_time: sample.target_time + k * step_seconds,
                ..sample.clone()
            })
            .collect();
        let scores = self.predict_samples(&shifted, 256)?;
        Ok(scores
            .into_iter()
            .enumerate()
            .map(|(k, s)| (k as f64 * step_seconds as f64 / 3600.0, s))
            .collect())
    }
}

/// `-Σ [y log p + (1-y) log(1-p)]` with `p` clamped to `[ε, 1-ε]`.
pub fn bce_loss(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::dim("bce_loss", &[probs.len()], &[labels.len()]));
    }
    probs.iter().zip(labels).try_fold(0.0, |acc, (&p, &y)| {
        if y > 1 {
            return Err(Error::Data(format!("label {y} is not binary")));
        }
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        let y = f64::from(y);
        Ok(acc - (y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Behavior;

    fn sample(items: &[usize], target: usize, label: u8) -> Sample {
        Sample {
            user: 0,
            behaviors: items
                .iter()
                .enumerate()
                .map(|(k, &item)| Behavior {
                    item,
                    timestamp: 1_704_067_200 + 3600 * k as i64,
                })
                .collect(),
            target_item: target,
            target_time: 1_704_067_200 + 3600 * 30,
            label,
        }
    }

    fn config(variant: ModelVariant) -> ModelConfig {
        ModelConfig {
            variant,
            dim: 8,
            hidden: vec![6, 4],
            ..ModelConfig::default()
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ModelVariant::ALL {
            assert_eq!(v.name().parse::<ModelVariant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
        assert!("transformer".parse::<ModelVariant>().is_err());
    }

    #[test]
    fn outputs_in_open_unit_interval() {
        let s = [sample(&[1, 2, 3], 4, 1), sample(&[], 2, 0), sample(&[5], 5, 1)];
        let refs: Vec<&Sample> = s.iter().collect();
        for v in ModelVariant::ALL {
            let m = Model::new(config(v), 10, 1).unwrap();
            let p = m.predict(&Batch::new(&refs, 10).unwrap()).unwrap();
            assert!(p.iter().all(|&x| x > 0.0 && x < 1.0), "{v}: {p:?}");
        }
    }

    #[test]
    fn zero_params_give_one_half() {
        let s = [sample(&[1, 2], 3, 1), sample(&[4], 6, 0)];
        let refs: Vec<&Sample> = s.iter().collect();
        for v in ModelVariant::ALL {
            let mut m = Model::new(config(v), 10, 2).unwrap();
            for (_, t) in m.named_mut() {
                t.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
            let p = m.predict(&Batch::new(&refs, 10).unwrap()).unwrap();
            assert!(p.iter().all(|&x| x == 0.5), "{v}: {p:?}");
        }
    }

    #[test]
    fn out_of_range_item_names_sample() {
        let s = [sample(&[1], 2, 1), sample(&[11], 2, 1)];
        let refs: Vec<&Sample> = s.iter().collect();
        match Batch::new(&refs, 10) {
            Err(Error::Data(msg)) => assert!(msg.contains("sample 1"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn loss_examples() {
        assert!((bce_loss(&[0.5], &[1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(&[0.5], &[0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(&[1.0, 0.0], &[1, 0]).unwrap() < 1e-11);
        assert!(matches!(bce_loss(&[0.5], &[2]), Err(Error::Data(_))));
    }

    #[test]
    fn checkpoint_round_trip_and_name_uniqueness() {
        for v in ModelVariant::ALL {
            let m = Model::new(config(v), 10, 3).unwrap();
            let names: Vec<String> = m.named().into_iter().map(|(n, _)| n).collect();
            let ck = m.to_checkpoint();
            assert_eq!(ck.len(), names.len(), "{v}: duplicate names");
            assert_eq!(Model::from_checkpoint(config(v), &ck).unwrap(), m);
        }
        let mut ck = Model::new(config(ModelVariant::Lr), 10, 3).unwrap().to_checkpoint();
        ck.insert("bogus".into(), Tensor::scalar(1.0));
        assert!(matches!(
            Model::from_checkpoint(config(ModelVariant::Lr), &ck),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn probe_counts_and_degenerate_sweep() {
        let m = Model::new(config(ModelVariant::DiCycle), 10, 4).unwrap();
        let s = sample(&[1, 2, 3], 4, 1);
        let sweep = m.probe_timestamp_sweep(&s, 72, 3600).unwrap();
        assert_eq!(sweep.len(), 73);
        assert_eq!(sweep[72].0, 72.0);
        let single = m.probe_timestamp_sweep(&s, 0, 3600).unwrap();
        let direct = m.predict(&Batch::new(&[&s], 10).unwrap()).unwrap();
        assert_eq!(single, vec![(0.0, direct[0])]);
    }
}
