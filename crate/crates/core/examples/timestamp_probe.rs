//! Trains DiCycle, then slides the target time of one test positive forward
//! hour by hour and prints the score series with its autocorrelations.

use dicycle::config::ExperimentConfig;
use dicycle::experiment::{load_data, select_probe_sample, ProbeSelector};
use dicycle::metrics::autocorrelation;
use dicycle::model::Model;
use dicycle::train::train;

fn main() -> dicycle::Result<()> {
    let cfg = ExperimentConfig::default().with_seed(1);
    let data = load_data(&cfg)?;
    let model = Model::new(cfg.model.clone(), data.dataset.num_items, cfg.seed)?;
    let model = train(model, &data.dataset.train, &cfg.train)?.model;

    let idx = select_probe_sample(&data, &ProbeSelector::Auto)?;
    let sample = &data.dataset.test[idx];
    println!(
        "probing {} / {} with {} behaviors",
        data.dataset.users[sample.user],
        data.log.items()[sample.target_item - 1],
        sample.behaviors.len()
    );
    let series = model.probe_timestamp_sweep(sample, 72, 3600)?;
    let scores: Vec<f64> = series.iter().map(|&(_, s)| s).collect();
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (h, s) in series.iter().step_by(3) {
        let bar = "#".repeat(1 + ((s - lo) / (hi - lo).max(1e-12) * 40.0) as usize);
        println!("{h:>5}h {s:.4} {bar}");
    }
    for lag in [12, 24] {
        println!("acf lag {lag}h: {:+.3}", autocorrelation(&scores, lag)?);
    }
    Ok(())
}
