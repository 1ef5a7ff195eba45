//! Gated filter unit, time cycle attention and target (interest) attention.
//!
//! All batched entry points use the same layout: a query matrix `[B×d]` and a
//! flattened key/value matrix `[(B·len)×d]` whose rows `s·len .. (s+1)·len` belong
//! to sample `s`. `valid[s·len + k]` is false for padding positions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatedFilterConfig {
    pub delta_thred: f64,
}

impl Default for GatedFilterConfig {
    fn default() -> Self {
        Self { delta_thred: 0.6 }
    }
}

impl GatedFilterConfig {
    pub fn new(delta_thred: f64) -> Result<Self> {
        let c = Self { delta_thred };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta_thred) {
            return Err(Error::Config(format!(
                "delta_thred must lie in [0, 1], got {}",
                self.delta_thred
            )));
        }
        Ok(())
    }
}

/// Gate weights plus the number of zero-norm embeddings that fell back to 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct GateWeights {
    pub weights: Vec<f64>,
    pub zero_norm: usize,
}

/// `(1 + cos(a, b)) / 2`, or `None` if either vector has zero norm.
pub fn similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return None;
    }
    let cos = (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0);
    Some((1.0 + cos) / 2.0)
}

/// Thresholded similarity of each behavior item to the target item.
///
/// The result is a plain array: it enters the graph as a constant, so no gradient
/// flows back into the embeddings through the gate.
pub fn gated_weights(target: &[f64], behaviors: &Tensor, config: GatedFilterConfig) -> Result<GateWeights> {
    if behaviors.rank() != 2 || behaviors.cols() != target.len() {
        return Err(Error::dim("gated_weights", &[target.len()], behaviors.shape()));
    }
    let mut zero_norm = 0;
    let weights = (0..behaviors.rows())
        .map(|k| {
            let sim = similarity(target, behaviors.row(k)).unwrap_or_else(|| {
                zero_norm += 1;
                0.5
            });
            gate(sim, config.delta_thred)
        })
        .collect();
    Ok(GateWeights { weights, zero_norm })
}

pub(crate) fn gate(sim: f64, delta_thred: f64) -> f64 {
    if sim >= delta_thred {
        sim
    } else {
        0.0
    }
}

/// Row-wise scaling `q̃_k = f_k · q_k`.
pub fn apply_filter(weights: &[f64], q: &Tensor) -> Result<Tensor> {
    if q.rank() != 2 || q.rows() != weights.len() {
        return Err(Error::dim("apply_filter", &[weights.len()], q.shape()));
    }
    let d = q.cols();
    let data = q
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| weights[i / d] * v)
        .collect();
    Tensor::new(q.shape(), data)
}

/// Projection matrices of the time cycle attention.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeCycleAttention {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct TimeCycleVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
}

impl TimeCycleAttention {
    pub const NAMES: [&'static str; 3] = ["tca.w_q", "tca.w_k", "tca.w_v"];

    pub fn new(dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut m = || {
            let data = (0..dim * dim).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::new(&[dim, dim], data).expect("square")
        };
        Self {
            w_q: m(),
            w_k: m(),
            w_v: m(),
        }
    }

    pub fn from_matrices(w_q: Tensor, w_k: Tensor, w_v: Tensor) -> Result<Self> {
        let d = w_q.rows();
        for w in [&w_q, &w_k, &w_v] {
            if w.shape() != [d, d] {
                return Err(Error::dim("time_cycle_attention", &[d, d], w.shape()));
            }
        }
        Ok(Self { w_q, w_k, w_v })
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        Self::NAMES
            .iter()
            .map(|n| n.to_string())
            .zip([&self.w_q, &self.w_k, &self.w_v])
            .collect()
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        Self::NAMES
            .iter()
            .map(|n| n.to_string())
            .zip([&mut self.w_q, &mut self.w_k, &mut self.w_v])
            .collect()
    }

    pub fn bind(&self, graph: &mut Graph) -> TimeCycleVars {
        TimeCycleVars {
            w_q: graph.param(self.w_q.clone()),
            w_k: graph.param(self.w_k.clone()),
            w_v: graph.param(self.w_v.clone()),
        }
    }

    /// `h = Σ_k softmax_k(q_a W_Q (q̃_k W_K)ᵀ / √d) · q̃_k W_V` for every sample.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        graph: &mut Graph,
        vars: TimeCycleVars,
        q_a: Var,
        q_tilde: Var,
        valid: &[bool],
        len: usize,
        allow_empty: bool,
    ) -> Result<Var> {
        let d = graph.shape(q_a)[1];
        let query = graph.matmul(q_a, vars.w_q)?;
        let keys = graph.matmul(q_tilde, vars.w_k)?;
        let values = graph.matmul(q_tilde, vars.w_v)?;
        let logits = graph.batch_dot(query, keys, len)?;
        let logits = graph.scale(logits, 1.0 / (d as f64).sqrt());
        let alpha = graph.softmax_masked(logits, valid, allow_empty)?;
        graph.weighted_sum(alpha, values)
    }

    /// Single-sample evaluation on plain tensors: `q_a` is `[d]`, `q_tilde` is `[l×d]`.
    pub fn time_cycle_attention(&self, q_a: &[f64], q_tilde: &Tensor, valid: &[bool]) -> Result<Tensor> {
        let d = self.dim();
        if q_a.len() != d || q_tilde.rank() != 2 || q_tilde.cols() != d {
            return Err(Error::dim("time_cycle_attention", &[q_a.len()], q_tilde.shape()));
        }
        let mut graph = Graph::new();
        let vars = self.bind(&mut graph);
        let qa = graph.constant(Tensor::matrix(1, d, q_a.to_vec())?);
        let qt = graph.constant(q_tilde.clone());
        let h = Self::forward(&mut graph, vars, qa, qt, valid, q_tilde.rows(), false)?;
        graph.value(h).clone().reshape(&[d])
    }
}

/// Target attention without learned projections:
/// `r = Σ_k softmax_k(r_a · r_k / √d) · r_k`.
pub fn interest_attention_on(
    graph: &mut Graph,
    r_a: Var,
    r: Var,
    valid: &[bool],
    len: usize,
    allow_empty: bool,
) -> Result<Var> {
    let d = graph.shape(r_a)[1];
    let logits = graph.batch_dot(r_a, r, len)?;
    let logits = graph.scale(logits, 1.0 / (d as f64).sqrt());
    let alpha = graph.softmax_masked(logits, valid, allow_empty)?;
    graph.weighted_sum(alpha, r)
}

/// Single-sample evaluation on plain tensors: `r_a` is `[d]`, `r` is `[l×d]`.
pub fn interest_attention(r_a: &[f64], r: &Tensor, valid: &[bool]) -> Result<Tensor> {
    let d = r_a.len();
    if r.rank() != 2 || r.cols() != d {
        return Err(Error::dim("interest_attention", &[d], r.shape()));
    }
    let mut graph = Graph::new();
    let ra = graph.constant(Tensor::matrix(1, d, r_a.to_vec())?);
    let rv = graph.constant(r.clone());
    let out = interest_attention_on(&mut graph, ra, rv, valid, r.rows(), false)?;
    graph.value(out).clone().reshape(&[d])
}
