//! Generates the default planted-cycle log and prints the two phenomena it
//! plants: hour-of-day peaks and 24-hour re-interaction gaps.

use dicycle::data::{generate_synthetic, SyntheticSpec};

fn main() -> dicycle::Result<()> {
    let g = generate_synthetic(&SyntheticSpec::default())?;
    let cats = &g.truth.spec.categories;
    println!("{} events, {} users, {} items", g.log.len(), g.log.users().len(), g.log.items().len());

    let mut hourly = vec![[0usize; 24]; cats.len()];
    let mut gaps = vec![vec![0usize; 73]; cats.len()];
    for history in g.log.positive_histories() {
        let mut last = vec![None; cats.len()];
        for (item, t) in history {
            let c = g.truth.item_category[item - 1];
            hourly[c][(t.rem_euclid(86_400) / 3600) as usize] += 1;
            if let Some(prev) = last[c] {
                let h = ((t - prev) / 3600) as usize;
                if h < gaps[c].len() {
                    gaps[c][h] += 1;
                }
            }
            last[c] = Some(t);
        }
    }
    for (c, cat) in cats.iter().enumerate() {
        let peak = (0..24).max_by_key(|&h| hourly[c][h]).unwrap();
        let mode = (1..gaps[c].len()).max_by_key(|&h| gaps[c][h]).unwrap();
        println!("{:<14} busiest hour {peak:>2}  most common gap {mode:>2}h", cat.name);
    }
    Ok(())
}
