//! The two time encoders: calendar-slot vectors that repeat weekly, and interval
//! features whose inner product depends only on the time difference.

use dicycle::time_encoding::{AbsoluteTimeConfig, AbsoluteTimeEncoder, RelativeTimeEncoder};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn main() -> dicycle::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let abs = AbsoluteTimeEncoder::new(AbsoluteTimeConfig::default(), 8, &mut rng)?;
    let monday_noon = 1_704_110_400; // 2024-01-01 12:00 UTC
    let a = abs.absolute_encode(monday_noon)?;
    let next_week = abs.absolute_encode(monday_noon + 7 * 86_400)?;
    let next_day = abs.absolute_encode(monday_noon + 86_400)?;
    println!("absolute: same slot a week later {}", a == next_week);
    println!("absolute: a day later differs by {:.4}", a.data().iter().zip(next_day.data()).map(|(x, y)| (x - y).abs()).sum::<f64>());

    let rel = RelativeTimeEncoder::new(16, 3600.0, &mut rng)?;
    let base = rel.relative_encode(0.0);
    println!("\nrelative: <phi(0), phi(dt)> by interval");
    for hours in [0.0, 1.0, 6.0, 12.0, 24.0, 48.0, 168.0] {
        let p = rel.relative_encode(hours * 3600.0);
        let shifted = dot(rel.relative_encode(5e6).data(), rel.relative_encode(5e6 + hours * 3600.0).data());
        println!("  {hours:>5}h  {:+.4}  (shifted origin {:+.4})", dot(base.data(), p.data()), shifted);
    }
    Ok(())
}
