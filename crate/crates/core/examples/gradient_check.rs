//! Differentiates a small expression on the tape and compares every input
//! gradient with central finite differences.

use dicycle::tensor::{Graph, Tensor};

fn loss(x: &Tensor, w: &Tensor) -> f64 {
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
    let y = forward(&mut g, xv, wv);
    g.value(y).data()[0]
}

fn forward(g: &mut Graph, x: dicycle::tensor::Var, w: dicycle::tensor::Var) -> dicycle::tensor::Var {
    let h = g.matmul(x, w).unwrap();
    let h = g.sigmoid(h);
    let s = g.sin(h);
    g.sum(s)
}

fn main() -> dicycle::Result<()> {
    let x = Tensor::matrix(2, 3, vec![0.3, -1.2, 0.8, 1.5, 0.1, -0.4])?;
    let w = Tensor::matrix(3, 2, vec![0.7, -0.2, 0.05, 0.9, -1.1, 0.4])?;

    let mut g = Graph::new();
    let (xv, wv) = (g.param(x.clone()), g.param(w.clone()));
    let out = forward(&mut g, xv, wv);
    g.backward(out)?;
    let analytic = g.grad(wv).unwrap().to_vec();

    let h = 1e-6;
    println!("{:>4} {:>14} {:>14} {:>10}", "w[k]", "backward", "finite diff", "rel err");
    for (k, a) in analytic.iter().enumerate() {
        let (mut up, mut down) = (w.clone(), w.clone());
        up.data_mut()[k] += h;
        down.data_mut()[k] -= h;
        let numeric = (loss(&x, &up) - loss(&x, &down)) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
        println!("{k:>4} {a:>14.9} {numeric:>14.9} {rel:>10.2e}");
    }
    Ok(())
}
