//! Independent oracles shared by the integration tests: central finite
//! differences, brute-force metrics and small fixtures.
#![allow(dead_code)]

use dicycle::data::{Behavior, Sample};
use dicycle::model::{Batch, Model};
use dicycle::tensor::{Graph, Tensor, Var};
use dicycle::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `true` if `a` and `b` agree to `abs` absolutely or to `rel` relatively.
pub fn within(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    let diff = (a - b).abs();
    diff <= abs || diff <= rel * a.abs().max(b.abs())
}

pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

fn projected(inputs: &[Tensor], build: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>, weights: &Tensor) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let y = build(&mut g, &vars).unwrap();
    let w = g.constant(weights.clone());
    let prod = g.mul(y, w).unwrap();
    let s = g.sum(prod);
    g.value(s).data()[0]
}

/// Compares backward against central differences of a random scalar projection
/// `Σ w ⊙ build(inputs)`. Returns a description of every mismatching element.
pub fn check_op(
    inputs: &[Tensor],
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
    rel: f64,
    seed: u64,
) -> Vec<String> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let y = build(&mut g, &vars).unwrap();
    let weights = random_tensor(&mut rng(seed ^ 0xabc), g.shape(y));
    let w = g.constant(weights.clone());
    let prod = g.mul(y, w).unwrap();
    let loss = g.sum(prod);
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(v).len()]))
        .collect();
    let mut failures = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        for k in 0..t.len() {
            let numeric = central_difference(
                |x| {
                    let mut xs = inputs.to_vec();
                    xs[i].data_mut()[k] = x;
                    projected(&xs, &build, &weights)
                },
                t.data()[k],
            );
            let a = analytic[i][k];
            if !within(a, numeric, rel, 1e-8) {
                failures.push(format!("input {i}[{k}]: analytic {a} numeric {numeric}"));
            }
        }
    }
    failures
}

/// Checks every element of every parameter tensor of `model` on `batch` with the
/// gate held at its current value. Returns `(elements checked, failures)`.
pub fn check_model(model: &Model, batch: &Batch, rel: f64, abs: f64) -> (usize, Vec<String>) {
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let gate = model.forward_on(&mut g, &bound, batch, None).unwrap().gate;
    let (_, _, grads) = model.gradients(batch, Some(&gate), 1.0).unwrap();
    let mut failures = Vec::new();
    let mut checked = 0;
    for (name, tensor) in model.named() {
        let analytic = &grads[&name];
        for k in 0..tensor.len() {
            let x0 = tensor.data()[k];
            let numeric = central_difference(
                |x| {
                    let mut m = model.clone();
                    for (n, t) in m.named_mut() {
                        if n == name {
                            t.data_mut()[k] = x;
                        }
                    }
                    m.loss(batch, Some(&gate)).unwrap()
                },
                x0,
            );
            checked += 1;
            if !within(analytic[k], numeric, rel, abs) {
                failures.push(format!("{name}[{k}]: analytic {} numeric {numeric}", analytic[k]));
            }
        }
    }
    (checked, failures)
}

/// Two samples over a 10-item vocabulary (9 real items), one with a full history
/// of 4 and one with 2 behaviors and padding.
pub fn tiny_batch() -> (Vec<Sample>, Batch) {
    let day = 86_400;
    let b = |item, t| Behavior { item, timestamp: t };
    let s1 = Sample {
        user: 0,
        behaviors: vec![b(3, 1_000), b(5, 1_000 + day), b(3, 3 * day + 7_200), b(8, 4 * day)],
        target_item: 3,
        target_time: 5 * day + 3_600,
        label: 1,
    };
    let s2 = Sample {
        user: 1,
        behaviors: vec![b(2, 40_000), b(9, 90_000)],
        target_item: 6,
        target_time: 200_000,
        label: 0,
    };
    let batch = Batch::with_len(&[&s1, &s2], 10, 4).unwrap();
    (vec![s1, s2], batch)
}

/// Exhaustive pair-counting AUC: ties count one half.
pub fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                if si > sj {
                    num += 1.0;
                } else if si == sj {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

pub type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// Every differentiable op with input shapes and a builder.
pub fn op_cases(rng: &mut impl Rng) -> Vec<(&'static str, Vec<Vec<usize>>, Build)> {
    let times: Vec<f64> = (0..5).map(|_| rng.random_range(-30.0..30.0)).collect();
    let labels: Vec<f64> = (0..6).map(|_| rng.random_range(0..2) as f64).collect();
    let idx: Vec<usize> = (0..7).map(|_| rng.random_range(0..4)).collect();
    let mask: Vec<bool> = (0..12).map(|i| i % 4 == 0 || rng.random_bool(0.6)).collect();
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("add", vec![vec![3, 2], vec![3, 2]], Box::new(|g, v| g.add(v[0], v[1]))),
        ("mul", vec![vec![3, 2], vec![3, 2]], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("scale", vec![vec![5]], Box::new(|g, v| Ok(g.scale(v[0], -1.7)))),
        ("relu", vec![vec![4, 3]], Box::new(|g, v| Ok(g.relu(v[0])))),
        ("sigmoid", vec![vec![4, 3]], Box::new(|g, v| Ok(g.sigmoid(v[0])))),
        ("cos", vec![vec![6]], Box::new(|g, v| Ok(g.cos(v[0])))),
        ("sin", vec![vec![6]], Box::new(|g, v| Ok(g.sin(v[0])))),
        ("sum", vec![vec![2, 3]], Box::new(|g, v| Ok(g.sum(v[0])))),
        ("add_bias", vec![vec![4, 3], vec![3]], Box::new(|g, v| g.add_bias(v[0], v[1]))),
        ("conv1d_depthwise", vec![vec![5, 3], vec![3, 3]], Box::new(|g, v| g.conv1d_depthwise(v[0], v[1]))),
        ("maxpool_over_length", vec![vec![5, 3]], Box::new(|g, v| g.maxpool_over_length(v[0]))),
        (
            "softmax_masked",
            vec![vec![3, 4]],
            Box::new(move |g, v| g.softmax_masked(v[0], &mask, false)),
        ),
        ("gather_rows", vec![vec![4, 3]], Box::new(move |g, v| g.gather_rows(v[0], &idx))),
        ("concat_rows", vec![vec![3], vec![2, 3]], Box::new(|g, v| g.concat_rows(&[v[0], v[1]]))),
        ("concat_cols", vec![vec![2, 3], vec![2, 1]], Box::new(|g, v| g.concat_cols(v[0], v[1]))),
        ("batch_dot", vec![vec![2, 3], vec![8, 3]], Box::new(|g, v| g.batch_dot(v[0], v[1], 4))),
        ("weighted_sum", vec![vec![2, 4], vec![8, 3]], Box::new(|g, v| g.weighted_sum(v[0], v[1]))),
        ("scale_rows", vec![vec![4, 3], vec![4]], Box::new(|g, v| g.scale_rows(v[0], v[1]))),
        (
            "fourier_features",
            vec![vec![3]],
            Box::new(move |g, v| g.fourier_features(v[0], &times)),
        ),
        ("reshape", vec![vec![2, 3]], Box::new(|g, v| g.reshape(v[0], &[3, 2]))),
        (
            "bce_sum",
            vec![vec![6]],
            Box::new(move |g, v| {
                let p = g.sigmoid(v[0]);
                g.bce_sum(p, &labels)
            }),
        ),
    ]
}
