//! Trains DiCycle and the three ablations on the default synthetic log and
//! prints the AUC table. Pass a seed as the first argument.

use dicycle::config::ExperimentConfig;
use dicycle::experiment::ablate;

fn main() -> dicycle::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = ExperimentConfig::default().with_seed(seed);
    let dir = std::env::temp_dir().join(format!("dicycle-ablation-{seed}"));
    let a = ablate(&cfg, &dir, true)?;
    print!("{}", a.to_csv());
    println!("runs written under {}", dir.display());
    Ok(())
}
