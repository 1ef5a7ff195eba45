use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{EventLog, EventRecord};

/// A Gaussian bump of click intensity centred on an hour of the day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub hour: f64,
    pub amplitude: f64,
}

/// Re-interaction bumps at multiples of `period_hours` after the user's previous
/// event in the same category, shrinking by `decay` per elapsed cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtcProfile {
    pub period_hours: f64,
    pub amplitude: f64,
    pub decay: f64,
    #[serde(default = "default_width")]
    pub width_hours: f64,
}

fn default_width() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryProfile {
    pub name: String,
    /// Noise categories ignore `atc` and `rtc` and click at a constant rate.
    #[serde(default)]
    pub noise: bool,
    #[serde(default)]
    pub atc: Vec<Peak>,
    #[serde(default = "default_atc_width")]
    pub atc_width_hours: f64,
    #[serde(default)]
    pub rtc: Option<RtcProfile>,
}

fn default_atc_width() -> f64 {
    1.0
}

impl CategoryProfile {
    /// Multiplicative hour-of-day factor `1 + Σ a·exp(-δ²/2w²)` with circular δ.
    pub fn atc_factor(&self, hour_of_day: f64) -> f64 {
        if self.noise {
            return 1.0;
        }
        let w2 = 2.0 * self.atc_width_hours * self.atc_width_hours;
        1.0 + self
            .atc
            .iter()
            .map(|p| {
                let d = (hour_of_day - p.hour).rem_euclid(24.0);
                let d = d.min(24.0 - d);
                p.amplitude * (-d * d / w2).exp()
            })
            .sum::<f64>()
    }

    /// Multiplicative factor for `elapsed` hours since the previous event.
    pub fn rtc_factor(&self, elapsed: Option<f64>) -> f64 {
        let (Some(rtc), Some(tau), false) = (self.rtc, elapsed, self.noise) else {
            return 1.0;
        };
        let m = (tau / rtc.period_hours).round().max(1.0);
        let d = tau - m * rtc.period_hours;
        let w2 = 2.0 * rtc.width_hours * rtc.width_hours;
        1.0 + rtc.amplitude * rtc.decay.powf(m - 1.0) * (-d * d / w2).exp()
    }

    fn max_factor(&self) -> f64 {
        if self.noise {
            return 1.0;
        }
        let atc = 1.0 + self.atc.iter().map(|p| p.amplitude).sum::<f64>();
        let rtc = 1.0 + self.rtc.map_or(0.0, |r| r.amplitude);
        atc * rtc
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("category {}: {what}", self.name)));
        if self.atc.iter().any(|p| !(p.amplitude >= 0.0) || !(0.0..24.0).contains(&p.hour)) {
            return bad("ATC amplitudes must be >= 0 and hours in [0, 24)");
        }
        if !(self.atc_width_hours > 0.0) {
            return bad("ATC width must be positive");
        }
        if let Some(r) = self.rtc {
            if !(r.period_hours > 0.0) || !(r.amplitude >= 0.0) || !(r.width_hours > 0.0) {
                return bad("RTC period and width must be positive, amplitude >= 0");
            }
            if !(0.0..=1.0).contains(&r.decay) {
                return bad("RTC decay must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Parameters of the planted-cycle event generator. Omitted fields take the
/// default spec's values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub categories: Vec<CategoryProfile>,
    /// Share of items assigned to noise categories.
    pub noise_fraction: f64,
    /// Events per hour of an active user-category pair before modulation.
    pub base_intensity: f64,
    /// Multiplier applied to `base_intensity` for noise categories.
    pub noise_intensity: f64,
    /// Probability that a user interacts with a given category at all.
    pub activity: f64,
    pub horizon_days: f64,
    /// Epoch-seconds of the start of the horizon.
    pub start_time: i64,
    pub seed: u64,
}

fn default_start() -> i64 {
    // 2024-01-01T00:00:00Z
    1_704_067_200
}

impl Default for SyntheticSpec {
    /// 200 users, 100 items, two calendar-cycle categories, two 24-hour
    /// re-interaction categories and one noise category over 60 days.
    fn default() -> Self {
        let atc = |name: &str, peaks: &[(f64, f64)]| CategoryProfile {
            name: name.into(),
            noise: false,
            atc: peaks.iter().map(|&(hour, amplitude)| Peak { hour, amplitude }).collect(),
            atc_width_hours: 1.0,
            rtc: None,
        };
        let rtc = |name: &str, period: f64| CategoryProfile {
            name: name.into(),
            noise: false,
            atc: Vec::new(),
            atc_width_hours: 1.0,
            rtc: Some(RtcProfile {
                period_hours: period,
                amplitude: 40.0,
                decay: 0.3,
                width_hours: 1.5,
            }),
        };
        Self {
            users: 200,
            items: 100,
            categories: vec![
                atc("meals", &[(11.0, 6.0), (18.0, 6.0), (21.0, 4.0)]),
                atc("commute", &[(8.0, 6.0), (17.0, 6.0)]),
                rtc("ride_hailing", 24.0),
                rtc("daily_checkin", 24.0),
                CategoryProfile {
                    name: "shopping".into(),
                    noise: true,
                    atc: Vec::new(),
                    atc_width_hours: 1.0,
                    rtc: None,
                },
            ],
            noise_fraction: 0.2,
            base_intensity: 0.004,
            noise_intensity: 2.0,
            activity: 0.6,
            horizon_days: 60.0,
            start_time: default_start(),
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.categories.is_empty() || self.items < self.categories.len() {
            return Err(Error::Config(
                "need at least one user, one category, and one item per category".into(),
            ));
        }
        for (name, v) in [("noise_fraction", self.noise_fraction), ("activity", self.activity)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.base_intensity > 0.0) || !(self.noise_intensity >= 0.0) || !(self.horizon_days > 0.0) {
            return Err(Error::Config(
                "base intensity and horizon must be positive, noise intensity >= 0".into(),
            ));
        }
        if self.start_time < 0 {
            return Err(Error::Config("start time must be non-negative".into()));
        }
        let noise = self.categories.iter().filter(|c| c.noise).count();
        if noise == self.categories.len() {
            return Err(Error::Config("at least one non-noise category is required".into()));
        }
        for c in &self.categories {
            c.validate()?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Contiguous item blocks per category: noise categories share
    /// `noise_fraction` of the items, the rest is split evenly.
    fn item_categories(&self) -> Vec<usize> {
        let noise: Vec<usize> = (0..self.categories.len()).filter(|&c| self.categories[c].noise).collect();
        let signal: Vec<usize> = (0..self.categories.len()).filter(|&c| !self.categories[c].noise).collect();
        let n_noise = if noise.is_empty() {
            0
        } else {
            ((self.items as f64 * self.noise_fraction).round() as usize)
                .clamp(noise.len(), self.items - signal.len())
        };
        let mut out = Vec::with_capacity(self.items);
        for (cats, total) in [(&signal, self.items - n_noise), (&noise, n_noise)] {
            for (k, &c) in cats.iter().enumerate() {
                let share = total / cats.len() + usize::from(k < total % cats.len());
                out.extend(std::iter::repeat_n(c, share));
            }
        }
        out
    }
}

pub fn item_name(i: usize) -> String {
    format!("item_{i:03}")
}

pub fn user_name(u: usize) -> String {
    format!("user_{u:03}")
}

/// Everything needed to evaluate the generating intensity after the fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SyntheticSpec,
    /// Category of each item, by vocabulary index.
    pub item_category: Vec<usize>,
    /// `rate[u][c]`: base events per hour of user `u` in category `c` (0 if inactive).
    pub rate: Vec<Vec<f64>>,
}

impl GroundTruth {
    /// Instantaneous intensity (events/hour) of user `u` in category `c` at
    /// `hours` since the start, given the elapsed hours since the previous event.
    pub fn intensity(&self, u: usize, c: usize, hours: f64, elapsed: Option<f64>) -> f64 {
        let cat = &self.spec.categories[c];
        let hour_of_day = (hours + (self.spec.start_time.rem_euclid(86_400)) as f64 / 3600.0).rem_euclid(24.0);
        self.rate[u][c] * cat.atc_factor(hour_of_day) * cat.rtc_factor(elapsed)
    }

    pub fn category_items(&self, c: usize) -> Vec<usize> {
        (0..self.item_category.len()).filter(|&i| self.item_category[i] == c).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticLog {
    pub log: EventLog,
    pub truth: GroundTruth,
}

/// Simulates every active user-category pair by thinning a dominating homogeneous
/// Poisson process. Each user draws from its own RNG stream, so the output does not
/// depend on how users are scheduled.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticLog> {
    spec.validate()?;
    let item_category = spec.item_categories();
    let horizon = spec.horizon_days * 24.0;
    let n_cat = spec.categories.len();
    let mut rate = vec![vec![0.0; n_cat]; spec.users];
    let mut per_user = Vec::with_capacity(spec.users);
    let cat_items: Vec<Vec<usize>> = (0..n_cat)
        .map(|c| (0..spec.items).filter(|&i| item_category[i] == c).collect())
        .collect();

    for (u, user_rate) in rate.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(u as u64);
        for (c, cat) in spec.categories.iter().enumerate() {
            let active = rng.random::<f64>() < spec.activity;
            let scale = rng.random_range(0.5..1.5);
            if active {
                let noise = if cat.noise { spec.noise_intensity } else { 1.0 };
                user_rate[c] = spec.base_intensity * noise * scale;
            }
        }
        per_user.push(rng);
    }
    let truth = GroundTruth {
        spec: spec.clone(),
        item_category,
        rate,
    };

    let mut records = Vec::new();
    for (u, mut rng) in per_user.into_iter().enumerate() {
        let mut events: Vec<(i64, usize)> = Vec::new();
        for (c, cat) in spec.categories.iter().enumerate() {
            let base = truth.rate[u][c];
            if base == 0.0 {
                continue;
            }
            let bound = base * cat.max_factor();
            let mut t = 0.0;
            let mut last: Option<f64> = None;
            loop {
                let step: f64 = -(1.0 - rng.random::<f64>()).ln() / bound;
                t += step;
                if t >= horizon {
                    break;
                }
                let lambda = truth.intensity(u, c, t, last.map(|l| t - l));
                if rng.random::<f64>() * bound < lambda {
                    let item = cat_items[c][rng.random_range(0..cat_items[c].len())];
                    let ts = spec.start_time + (t * 3600.0).floor() as i64;
                    events.push((ts, item));
                    last = Some(t);
                }
            }
        }
        events.sort_unstable();
        records.extend(
            events
                .into_iter()
                .map(|(ts, item)| EventRecord::click(user_name(u), item_name(item), ts)),
        );
    }
    let universe: Vec<String> = (0..spec.items).map(item_name).collect();
    Ok(SyntheticLog {
        log: EventLog::with_items(records, &universe)?,
        truth,
    })
}
