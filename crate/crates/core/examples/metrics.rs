//! AUC, per-user GAUC, log-loss and relative improvement on a hand-made set of
//! scored examples.

use dicycle::metrics::{rela_impr, MetricReport, ScoredExample};

fn main() -> dicycle::Result<()> {
    let rows = [
        ("alice", 0.91, 1),
        ("alice", 0.40, 0),
        ("alice", 0.55, 0),
        ("bob", 0.30, 1),
        ("bob", 0.35, 0),
        ("carol", 0.70, 1),
        ("carol", 0.20, 0),
        ("dave", 0.60, 1),
    ];
    let examples: Vec<ScoredExample> = rows.iter().map(|&(u, s, l)| ScoredExample::new(u, s, l)).collect();
    let report = MetricReport::compute(&examples)?;
    println!("{report}\n");
    for u in report.per_user.iter().flatten() {
        println!("{:<6} auc {:.3} over {} examples", u.user, u.auc, u.examples);
    }
    println!("\nRelaImpr of 0.7801 over 0.7480: {:.2}%", rela_impr(0.7801, 0.7480)?);
    Ok(())
}
