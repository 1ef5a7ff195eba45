//! Trains DiCycle on a small synthetic log, prints the per-epoch history and
//! the test report, and checks that a saved checkpoint reloads identically.

use dicycle::config::ExperimentConfig;
use dicycle::experiment::{load_data, load_run, train_run};

fn main() -> dicycle::Result<()> {
    let mut cfg = ExperimentConfig::default();
    if let Some(spec) = &mut cfg.data.synthetic {
        spec.users = 100;
    }
    let dir = std::env::temp_dir().join("dicycle-train-example");
    let run = train_run(&cfg, &dir, true)?;
    for r in &run.history {
        println!("epoch {:>2} {:<10} logloss {:.4} auc {:.4}", r.epoch, r.split, r.logloss, r.auc.unwrap_or(f64::NAN));
    }
    println!("kept epoch {}\n{}", run.best_epoch, run.report);

    let (_, reloaded) = load_run(&dir)?;
    let test = &load_data(&cfg)?.dataset.test;
    let same = reloaded.predict_samples(test, 256)? == run.model.predict_samples(test, 256)?;
    println!("\nreloaded checkpoint gives identical scores: {same}");
    Ok(())
}
