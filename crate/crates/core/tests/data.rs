use std::collections::BTreeSet;

use dicycle::data::{
    build_samples, generate_synthetic, ingest_reader, CategoryProfile, EventLog, EventRecord, Peak, RtcProfile,
    SyntheticSpec,
};
use proptest::prelude::*;

fn single_category(cat: CategoryProfile, base: f64) -> SyntheticSpec {
    SyntheticSpec {
        users: 200,
        items: 20,
        categories: vec![cat],
        noise_fraction: 0.0,
        base_intensity: base,
        activity: 1.0,
        horizon_days: 60.0,
        ..SyntheticSpec::default()
    }
}

fn plain(name: &str) -> CategoryProfile {
    CategoryProfile {
        name: name.into(),
        noise: false,
        atc: Vec::new(),
        atc_width_hours: 1.0,
        rtc: None,
    }
}

fn hour_counts(log: &EventLog) -> [f64; 24] {
    let mut h = [0.0; 24];
    for r in log.records() {
        h[(r.timestamp.rem_euclid(86_400) / 3600) as usize] += 1.0;
    }
    h
}

#[test]
fn zero_amplitudes_give_flat_hours() {
    let mut cat = plain("flat");
    cat.atc = vec![Peak { hour: 11.0, amplitude: 0.0 }];
    let log = generate_synthetic(&single_category(cat, 0.01)).unwrap().log;
    let h = hour_counts(&log);
    let expected = log.len() as f64 / 24.0;
    let chi2: f64 = h.iter().map(|o| (o - expected).powi(2) / expected).sum();
    // 23 degrees of freedom: mean 23, sd sqrt(46).
    assert!(chi2 <= 23.0 + 3.0 * 46f64.sqrt(), "chi2 {chi2}, counts {h:?}");
}

#[test]
fn calendar_peak_dominates_its_hour() {
    let mut cat = plain("lunch");
    cat.atc = vec![Peak { hour: 11.0, amplitude: 5.0 }];
    let log = generate_synthetic(&single_category(cat, 0.01)).unwrap().log;
    let h = hour_counts(&log);
    let others = (h.iter().sum::<f64>() - h[11]) / 23.0;
    assert!(h[11] >= 2.0 * others, "hour 11 {} vs mean {others}", h[11]);
}

#[test]
fn relative_cycle_gap_mode_near_period() {
    let mut cat = plain("daily");
    cat.rtc = Some(RtcProfile {
        period_hours: 24.0,
        amplitude: 40.0,
        decay: 0.3,
        width_hours: 1.5,
    });
    let log = generate_synthetic(&single_category(cat, 0.004)).unwrap().log;
    let mut gaps = vec![0usize; 24 * 7];
    for h in log.positive_histories() {
        for w in h.windows(2) {
            let g = ((w[1].1 - w[0].1) / 3600) as usize;
            if g < gaps.len() {
                gaps[g] += 1;
            }
        }
    }
    let mode = (0..gaps.len()).max_by_key(|&g| (gaps[g], std::cmp::Reverse(g))).unwrap();
    assert!((22..=26).contains(&mode), "mode {mode}h, {:?}", &gaps[..30]);
}

#[test]
fn row_count_matches_poisson_expectation() {
    let mut spec = SyntheticSpec::default();
    for c in &mut spec.categories {
        c.rtc = None;
    }
    let g = generate_synthetic(&spec).unwrap();
    // Integrate every user-category intensity over the horizon on a fine grid.
    let hours = spec.horizon_days * 24.0;
    let steps = (hours * 60.0) as usize;
    let dt = hours / steps as f64;
    let mut expected = 0.0;
    for u in 0..spec.users {
        for c in 0..spec.categories.len() {
            if g.truth.rate[u][c] == 0.0 {
                continue;
            }
            expected += (0..steps)
                .map(|k| g.truth.intensity(u, c, (k as f64 + 0.5) * dt, None))
                .sum::<f64>()
                * dt;
        }
    }
    let n = g.log.len() as f64;
    assert!((n - expected).abs() <= 3.0 * expected.sqrt(), "{n} rows vs expected {expected}");
}

#[test]
fn generation_depends_only_on_spec() {
    let spec = SyntheticSpec {
        users: 30,
        ..SyntheticSpec::default()
    };
    let a = generate_synthetic(&spec).unwrap();
    assert_eq!(a.log, generate_synthetic(&spec).unwrap().log);
    let other = generate_synthetic(&SyntheticSpec { seed: 8, ..spec }).unwrap();
    assert_ne!(a.log, other.log);
}

#[test]
fn csv_round_trip() {
    let spec = SyntheticSpec {
        users: 20,
        ..SyntheticSpec::default()
    };
    let log = generate_synthetic(&spec).unwrap().log;
    let mut buf = Vec::new();
    log.write_csv(&mut buf).unwrap();
    let back = ingest_reader(buf.as_slice()).unwrap();
    assert_eq!(back.rejected, 0);
    assert_eq!(back.log.records(), log.records());
}

fn toy_log() -> impl Strategy<Value = Vec<EventRecord>> {
    prop::collection::vec((0u8..6, 0u8..15, 0i64..10_000), 1..80).prop_map(|rows| {
        rows.into_iter()
            .map(|(u, i, t)| EventRecord::click(format!("u{u}"), format!("i{i}"), t))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn protocol_holds_on_random_logs(records in toy_log(), max_len in 1usize..6, seed in any::<u64>()) {
        let log = EventLog::new(records).unwrap();
        let ds = build_samples(&log, max_len, 1, seed).unwrap();
        let histories = log.positive_histories();
        let retained: Vec<usize> = (0..histories.len()).filter(|&u| histories[u].len() >= 2).collect();
        for &u in &retained {
            prop_assert_eq!(ds.test.iter().filter(|s| s.user == u && s.label == 1).count(), 1);
        }
        prop_assert_eq!(ds.test.iter().filter(|s| s.label == 1).count(), retained.len());
        for s in ds.train.iter().chain(&ds.test) {
            s.validate().unwrap();
            prop_assert!(s.behaviors.len() <= max_len);
            if s.label == 0 {
                let seen: BTreeSet<usize> = histories[s.user].iter().map(|&(i, _)| i).collect();
                prop_assert!(!seen.contains(&s.target_item));
            }
        }
        let pos = ds.train.iter().chain(&ds.test).filter(|s| s.label == 1).count();
        let neg = ds.train.iter().chain(&ds.test).filter(|s| s.label == 0).count();
        prop_assert_eq!(pos, neg + ds.stats.skipped_negatives);
    }
}
