use crate::error::{Error, Result};

use super::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Cos(Var),
    Sin(Var),
    Sum(Var),
    AddBias(Var, Var),
    Conv1d(Var, Var),
    MaxPool(Var, Vec<usize>),
    Softmax(Var),
    Gather(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Var, Var),
    BatchDot(Var, Var),
    WeightedSum(Var, Var),
    ScaleRows(Var, Var),
    Fourier(Var, Vec<f64>),
    Reshape(Var),
    Bce(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only tape of tensor operations.
///
/// Nodes are stored in creation order, which is a valid topological order, so
/// [`Graph::backward`] is a single reverse sweep that visits each node once.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside the log-loss.
pub const BCE_EPS: f64 = 1e-12;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(!value.data().iter().any(|v| v.is_nan()), "NaN produced by {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Registers a leaf; it is differentiated iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad();
        let mut t = tensor;
        t.zero_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Registers a trainable leaf regardless of the tensor's flag.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Clears all gradients so `backward` may be called again.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    // ----------------------------------------------------------------------
    // ops

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.data(a), self.data(b), m, k, n);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb || self.value(b).len() == 1 {
            Ok(sa.to_vec())
        } else if self.value(a).len() == 1 {
            Ok(sb.to_vec())
        } else {
            Err(Error::dim(op, sa, sb))
        }
    }

    fn zip_broadcast(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (da, db) = (self.data(a), self.data(b));
        let n = da.len().max(db.len());
        (0..n)
            .map(|i| {
                let x = if da.len() == 1 { da[0] } else { da[i] };
                let y = if db.len() == 1 { db[0] } else { db[i] };
                f(x, y)
            })
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_check("add", a, b)?;
        let out = self.zip_broadcast(a, b, |x, y| x + y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_check("mul", a, b)?;
        let out = self.zip_broadcast(a, b, |x, y| x * y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, Op::Cos(a), f64::cos)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sin(a), f64::sin)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(a);
        let out = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&x| f(x)).collect(),
            requires_grad: false,
            grad: None,
        };
        let rg = self.needs(&[a]);
        self.push(out, op, rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// `x[N×M] + b[M]`, broadcasting the bias over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::dim("add_bias", sx, sb));
        }
        let cols = sx[1];
        let bias = self.data(b);
        let out = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bias[i % cols])
            .collect();
        let shape = sx.to_vec();
        let rg = self.needs(&[x, b]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::AddBias(x, b), rg))
    }

    /// Depthwise 1-D convolution along rows with same-size zero padding.
    ///
    /// `x` is `[L×d]`, `kernel` is `[n×d]` with `n` odd; output is `[L×d]` with
    /// `y[i,c] = Σ_m kernel[m,c] · x[i + m - (n-1)/2, c]`.
    pub fn conv1d_depthwise(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (sx, sk) = (self.shape(x), self.shape(kernel));
        if sx.len() != 2 || sk.len() != 2 || sx[1] != sk[1] {
            return Err(Error::dim("conv1d_depthwise", sx, sk));
        }
        if sk[0] % 2 == 0 {
            return Err(Error::Config(format!("kernel size must be odd, got {}", sk[0])));
        }
        let (l, d, n) = (sx[0], sx[1], sk[0]);
        let pad = (n - 1) / 2;
        let (xd, kd) = (self.data(x), self.data(kernel));
        let mut out = vec![0.0; l * d];
        for i in 0..l {
            for m in 0..n {
                let src = i + m;
                if src < pad || src - pad >= l {
                    continue;
                }
                let src = src - pad;
                for c in 0..d {
                    out[i * d + c] += kd[m * d + c] * xd[src * d + c];
                }
            }
        }
        let rg = self.needs(&[x, kernel]);
        Ok(self.push(Tensor::new(&[l, d], out)?, Op::Conv1d(x, kernel), rg))
    }

    /// Column-wise maximum of `[L×d]`; ties resolve to the first row.
    pub fn maxpool_over_length(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 || sx[0] == 0 {
            return Err(Error::dim("maxpool_over_length", sx, &[]));
        }
        let (l, d) = (sx[0], sx[1]);
        let xd = self.data(x);
        let mut arg = vec![0usize; d];
        let mut out = xd[..d].to_vec();
        for i in 1..l {
            for c in 0..d {
                if xd[i * d + c] > out[c] {
                    out[c] = xd[i * d + c];
                    arg[c] = i;
                }
            }
        }
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::vector(out), Op::MaxPool(x, arg), rg))
    }

    /// Row-wise softmax with masked positions forced to probability zero.
    ///
    /// `logits` is `[cols]` or `[rows×cols]`; `mask[i]` is true for positions that
    /// take part in the normalization. A row with no unmasked position is an
    /// error unless `allow_empty`, in which case the whole row is zero.
    pub fn softmax_masked(&mut self, logits: Var, mask: &[bool], allow_empty: bool) -> Result<Var> {
        let t = self.value(logits);
        if mask.len() != t.len() || t.rank() > 2 {
            return Err(Error::dim("softmax_masked", t.shape(), &[mask.len()]));
        }
        let cols = t.cols();
        let mut out = vec![0.0; t.len()];
        for (r, (row, mrow)) in t.data().chunks(cols).zip(mask.chunks(cols)).enumerate() {
            let max = row
                .iter()
                .zip(mrow)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                if allow_empty {
                    continue;
                }
                return Err(Error::Degenerate(format!("softmax row {r} is fully masked")));
            }
            let o = &mut out[r * cols..(r + 1) * cols];
            let mut z = 0.0;
            for ((dst, &v), &m) in o.iter_mut().zip(row).zip(mrow) {
                if m {
                    *dst = (v - max).exp();
                    z += *dst;
                }
            }
            for v in o.iter_mut() {
                *v /= z;
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.needs(&[logits]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Softmax(logits), rg))
    }

    /// Selects rows of a `[V×d]` table; backward scatter-adds into the table.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(Error::dim("gather_rows", st, &[]));
        }
        let (v, d) = (st[0], st[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= v) {
            return Err(Error::Data(format!("row index {bad} out of range for table of {v} rows")));
        }
        if idx.is_empty() {
            return Err(Error::dim("gather_rows", st, &[0]));
        }
        let td = self.data(table);
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        let rg = self.needs(&[table]);
        Ok(self.push(Tensor::new(&[idx.len(), d], out)?, Op::Gather(table, idx.to_vec()), rg))
    }

    /// Stacks rank-1 `[d]` or rank-2 `[r×d]` parts into one matrix.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let d = self.value(*first).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != d || t.rank() > 2 {
                return Err(Error::dim("concat_rows", &[d], t.shape()));
            }
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        let rg = self.needs(parts);
        Ok(self.push(Tensor::new(&[rows, d], out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// `[N×p] ++ [N×q] -> [N×(p+q)]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::dim("concat_cols", sa, sb));
        }
        let (n, p, q) = (sa[0], sa[1], sb[1]);
        let (da, db) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            out.extend_from_slice(&da[i * p..(i + 1) * p]);
            out.extend_from_slice(&db[i * q..(i + 1) * q]);
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(&[n, p + q], out)?, Op::ConcatCols(a, b), rg))
    }

    /// Per-sample dot products: `q[B×d]`, `keys[(B·len)×d]` -> `[B×len]`.
    pub fn batch_dot(&mut self, q: Var, keys: Var, len: usize) -> Result<Var> {
        let (sq, sk) = (self.shape(q), self.shape(keys));
        if sq.len() != 2 || sk.len() != 2 || sq[1] != sk[1] || sq[0] * len != sk[0] || len == 0 {
            return Err(Error::dim("batch_dot", sq, sk));
        }
        let (b, d) = (sq[0], sq[1]);
        let (dq, dk) = (self.data(q), self.data(keys));
        let mut out = vec![0.0; b * len];
        for s in 0..b {
            let qr = &dq[s * d..(s + 1) * d];
            for l in 0..len {
                let kr = &dk[(s * len + l) * d..(s * len + l + 1) * d];
                out[s * len + l] = dot(qr, kr);
            }
        }
        let rg = self.needs(&[q, keys]);
        Ok(self.push(Tensor::new(&[b, len], out)?, Op::BatchDot(q, keys), rg))
    }

    /// Per-sample weighted sums: `alpha[B×len]`, `values[(B·len)×d]` -> `[B×d]`.
    pub fn weighted_sum(&mut self, alpha: Var, values: Var) -> Result<Var> {
        let (sa, sv) = (self.shape(alpha), self.shape(values));
        if sa.len() != 2 || sv.len() != 2 || sa[0] * sa[1] != sv[0] {
            return Err(Error::dim("weighted_sum", sa, sv));
        }
        let (b, len, d) = (sa[0], sa[1], sv[1]);
        let (da, dv) = (self.data(alpha), self.data(values));
        let mut out = vec![0.0; b * d];
        for s in 0..b {
            let o = &mut out[s * d..(s + 1) * d];
            for l in 0..len {
                let w = da[s * len + l];
                let vr = &dv[(s * len + l) * d..(s * len + l + 1) * d];
                for (dst, &v) in o.iter_mut().zip(vr) {
                    *dst += w * v;
                }
            }
        }
        let rg = self.needs(&[alpha, values]);
        Ok(self.push(Tensor::new(&[b, d], out)?, Op::WeightedSum(alpha, values), rg))
    }

    /// Scales row `i` of `x[N×d]` by `w[i]`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || self.value(w).len() != sx[0] {
            return Err(Error::dim("scale_rows", sx, sw));
        }
        let d = sx[1];
        let wd = self.data(w);
        let out = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v * wd[i / d])
            .collect();
        let shape = sx.to_vec();
        let rg = self.needs(&[x, w]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::ScaleRows(x, w), rg))
    }

    /// Interleaved sinusoidal features `sqrt(1/m)·[cos(ω₁t), sin(ω₁t), …]` for each
    /// entry of `times`; `omega` holds the `m` frequencies. Output `[N×2m]`.
    pub fn fourier_features(&mut self, omega: Var, times: &[f64]) -> Result<Var> {
        let m = self.value(omega).len();
        if self.value(omega).rank() != 1 || times.is_empty() {
            return Err(Error::dim("fourier_features", self.shape(omega), &[times.len()]));
        }
        let s = (1.0 / m as f64).sqrt();
        let w = self.data(omega);
        let mut out = Vec::with_capacity(times.len() * 2 * m);
        for &t in times {
            for &wi in w {
                let (sn, cs) = (wi * t).sin_cos();
                out.push(s * cs);
                out.push(s * sn);
            }
        }
        let rg = self.needs(&[omega]);
        Ok(self.push(
            Tensor::new(&[times.len(), 2 * m], out)?,
            Op::Fourier(omega, times.to_vec()),
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.needs(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Summed binary cross-entropy of probabilities `p` against `labels`.
    pub fn bce_sum(&mut self, p: Var, labels: &[f64]) -> Result<Var> {
        let pd = self.data(p);
        if pd.len() != labels.len() {
            return Err(Error::dim("bce_sum", self.shape(p), &[labels.len()]));
        }
        let loss: f64 = pd
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let rg = self.needs(&[p]);
        Ok(self.push(Tensor::scalar(loss), Op::Bce(p, labels.to_vec()), rg))
    }

    // ----------------------------------------------------------------------
    // backward

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Gradients accumulate over every use of a node. Calling this twice without
    /// [`Graph::zero_grad`] in between is a contract error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this graph; call zero_grad first".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g);
            }
            self.grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if node.requires_grad && matches!(node.op, Op::Leaf) && g.is_none() {
                *g = Some(vec![0.0; node.value.len()]);
            }
        }
        self.backward_done = true;
        Ok(())
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let g = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(g);
    }

    fn acc_broadcast(&mut self, v: Var, contrib: Vec<f64>) {
        self.acc(v, |g| {
            if g.len() == contrib.len() {
                for (a, b) in g.iter_mut().zip(&contrib) {
                    *a += b;
                }
            } else {
                g[0] += contrib.iter().sum::<f64>();
            }
        });
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // Inputs always precede `i`, so reading their values while writing their
        // grads never aliases the current node.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.nodes[a.0].requires_grad {
                    let bt = transpose(self.data(*b), k, n);
                    let da = matmul_raw(g, &bt, m, n, k);
                    self.acc_broadcast(*a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let at = transpose(self.data(*a), m, k);
                    let db = matmul_raw(&at, g, k, m, n);
                    self.acc_broadcast(*b, db);
                }
            }
            Op::Add(a, b) => {
                self.acc_broadcast(*a, g.to_vec());
                self.acc_broadcast(*b, g.to_vec());
            }
            Op::Mul(a, b) => {
                for (x, y) in [(*a, *b), (*b, *a)] {
                    if !self.nodes[x.0].requires_grad {
                        continue;
                    }
                    let other = self.data(y);
                    let contrib = g
                        .iter()
                        .enumerate()
                        .map(|(j, &gj)| gj * if other.len() == 1 { other[0] } else { other[j] })
                        .collect();
                    self.acc_broadcast(x, contrib);
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.acc(*a, |ga| ga.iter_mut().zip(g).for_each(|(x, &y)| *x += c * y));
            }
            Op::Relu(a) => {
                let contrib: Vec<f64> = self
                    .data(*a)
                    .iter()
                    .zip(g)
                    .map(|(&x, &gy)| if x > 0.0 { gy } else { 0.0 })
                    .collect();
                self.acc_broadcast(*a, contrib);
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[i].value.data();
                let contrib: Vec<f64> = y.iter().zip(g).map(|(&y, &gy)| gy * y * (1.0 - y)).collect();
                self.acc_broadcast(*a, contrib);
            }
            Op::Cos(a) => {
                let contrib: Vec<f64> = self.data(*a).iter().zip(g).map(|(&x, &gy)| -gy * x.sin()).collect();
                self.acc_broadcast(*a, contrib);
            }
            Op::Sin(a) => {
                let contrib: Vec<f64> = self.data(*a).iter().zip(g).map(|(&x, &gy)| gy * x.cos()).collect();
                self.acc_broadcast(*a, contrib);
            }
            Op::Sum(a) => {
                let g0 = g[0];
                self.acc(*a, |ga| ga.iter_mut().for_each(|x| *x += g0));
            }
            Op::AddBias(x, b) => {
                let cols = self.shape(*b)[0];
                self.acc_broadcast(*x, g.to_vec());
                self.acc(*b, |gb| {
                    for (j, &gy) in g.iter().enumerate() {
                        gb[j % cols] += gy;
                    }
                });
            }
            Op::Conv1d(x, k) => {
                let (l, d) = (self.shape(*x)[0], self.shape(*x)[1]);
                let n = self.shape(*k)[0];
                let pad = (n - 1) / 2;
                let xd = self.data(*x).to_vec();
                let kd = self.data(*k).to_vec();
                let mut dx = vec![0.0; l * d];
                let mut dk = vec![0.0; n * d];
                for r in 0..l {
                    for m in 0..n {
                        let src = r + m;
                        if src < pad || src - pad >= l {
                            continue;
                        }
                        let src = src - pad;
                        for c in 0..d {
                            let gy = g[r * d + c];
                            dx[src * d + c] += kd[m * d + c] * gy;
                            dk[m * d + c] += xd[src * d + c] * gy;
                        }
                    }
                }
                self.acc_broadcast(*x, dx);
                self.acc_broadcast(*k, dk);
            }
            Op::MaxPool(x, arg) => {
                let d = arg.len();
                self.acc(*x, |gx| {
                    for c in 0..d {
                        gx[arg[c] * d + c] += g[c];
                    }
                });
            }
            Op::Softmax(a) => {
                let y = self.nodes[i].value.data();
                let cols = self.nodes[i].value.cols();
                let mut contrib = vec![0.0; y.len()];
                for ((yr, gr), cr) in y.chunks(cols).zip(g.chunks(cols)).zip(contrib.chunks_mut(cols)) {
                    let inner = dot(yr, gr);
                    for ((c, &yv), &gv) in cr.iter_mut().zip(yr).zip(gr) {
                        *c = yv * (gv - inner);
                    }
                }
                self.acc_broadcast(*a, contrib);
            }
            Op::Gather(t, idx) => {
                let d = self.shape(*t)[1];
                self.acc(*t, |gt| {
                    for (r, &row) in idx.iter().enumerate() {
                        for c in 0..d {
                            gt[row * d + c] += g[r * d + c];
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let slice = &g[off..off + n];
                    self.acc(p, |gp| gp.iter_mut().zip(slice).for_each(|(x, &y)| *x += y));
                    off += n;
                }
            }
            Op::ConcatCols(a, b) => {
                let (p, q) = (self.shape(*a)[1], self.shape(*b)[1]);
                self.acc(*a, |ga| {
                    for (r, row) in ga.chunks_mut(p).enumerate() {
                        for (c, x) in row.iter_mut().enumerate() {
                            *x += g[r * (p + q) + c];
                        }
                    }
                });
                self.acc(*b, |gb| {
                    for (r, row) in gb.chunks_mut(q).enumerate() {
                        for (c, x) in row.iter_mut().enumerate() {
                            *x += g[r * (p + q) + p + c];
                        }
                    }
                });
            }
            Op::BatchDot(q, k) => {
                let (b, d) = (self.shape(*q)[0], self.shape(*q)[1]);
                let len = self.shape(*k)[0] / b;
                if self.nodes[q.0].requires_grad {
                    let kd = self.data(*k);
                    let mut dq = vec![0.0; b * d];
                    for s in 0..b {
                        for l in 0..len {
                            let gy = g[s * len + l];
                            let kr = &kd[(s * len + l) * d..(s * len + l + 1) * d];
                            for (x, &kv) in dq[s * d..(s + 1) * d].iter_mut().zip(kr) {
                                *x += gy * kv;
                            }
                        }
                    }
                    self.acc_broadcast(*q, dq);
                }
                if self.nodes[k.0].requires_grad {
                    let qd = self.data(*q);
                    let mut dk = vec![0.0; b * len * d];
                    for s in 0..b {
                        let qr = &qd[s * d..(s + 1) * d];
                        for l in 0..len {
                            let gy = g[s * len + l];
                            for (x, &qv) in dk[(s * len + l) * d..(s * len + l + 1) * d].iter_mut().zip(qr) {
                                *x += gy * qv;
                            }
                        }
                    }
                    self.acc_broadcast(*k, dk);
                }
            }
            Op::WeightedSum(a, v) => {
                let (b, len) = (self.shape(*a)[0], self.shape(*a)[1]);
                let d = self.shape(*v)[1];
                if self.nodes[a.0].requires_grad {
                    let vd = self.data(*v);
                    let mut da = vec![0.0; b * len];
                    for s in 0..b {
                        let gr = &g[s * d..(s + 1) * d];
                        for l in 0..len {
                            da[s * len + l] = dot(gr, &vd[(s * len + l) * d..(s * len + l + 1) * d]);
                        }
                    }
                    self.acc_broadcast(*a, da);
                }
                if self.nodes[v.0].requires_grad {
                    let ad = self.data(*a);
                    let mut dv = vec![0.0; b * len * d];
                    for s in 0..b {
                        let gr = &g[s * d..(s + 1) * d];
                        for l in 0..len {
                            let w = ad[s * len + l];
                            for (x, &gv) in dv[(s * len + l) * d..(s * len + l + 1) * d].iter_mut().zip(gr) {
                                *x += w * gv;
                            }
                        }
                    }
                    self.acc_broadcast(*v, dv);
                }
            }
            Op::ScaleRows(x, w) => {
                let d = self.shape(*x)[1];
                if self.nodes[x.0].requires_grad {
                    let wd = self.data(*w);
                    let dx = g.iter().enumerate().map(|(j, &gy)| gy * wd[j / d]).collect();
                    self.acc_broadcast(*x, dx);
                }
                if self.nodes[w.0].requires_grad {
                    let xd = self.data(*x);
                    let dw = g.chunks(d).zip(xd.chunks(d)).map(|(gr, xr)| dot(gr, xr)).collect();
                    self.acc_broadcast(*w, dw);
                }
            }
            Op::Fourier(omega, times) => {
                let w = self.data(*omega).to_vec();
                let m = w.len();
                let s = (1.0 / m as f64).sqrt();
                let mut dw = vec![0.0; m];
                for (n, &t) in times.iter().enumerate() {
                    let gr = &g[n * 2 * m..(n + 1) * 2 * m];
                    for (j, &wj) in w.iter().enumerate() {
                        let (sn, cs) = (wj * t).sin_cos();
                        dw[j] += s * t * (-sn * gr[2 * j] + cs * gr[2 * j + 1]);
                    }
                }
                self.acc_broadcast(*omega, dw);
            }
            Op::Reshape(a) => {
                self.acc_broadcast(*a, g.to_vec());
            }
            Op::Bce(p, labels) => {
                let g0 = g[0];
                let contrib = self
                    .data(*p)
                    .iter()
                    .zip(labels)
                    .map(|(&p, &y)| {
                        let dp = if p > BCE_EPS { -y / p } else { 0.0 }
                            + if 1.0 - p > BCE_EPS { (1.0 - y) / (1.0 - p) } else { 0.0 };
                        g0 * dp
                    })
                    .collect();
                self.acc_broadcast(*p, contrib);
            }
        }
        self.nodes[i].op = op;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}
