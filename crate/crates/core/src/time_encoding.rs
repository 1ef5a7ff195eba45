//! Absolute (calendar-slot) and relative (sinusoidal interval) time representations.
//!
//! The absolute encoder embeds each calendar granularity (hour of day, weekday,
//! ...) with a lookup table, then smooths the embedding over a circular window of
//! neighbouring slots: for every radius `j` the `(2j+1)` surrounding rows go through
//! a depthwise convolution, ReLU and a max-pool over the window. The pooled vectors
//! of all granularities and radii are summed.
//!
//! The relative encoder maps a time interval `Δ` to
//! `sqrt(2/d)·[cos(ω₁Δ), sin(ω₁Δ), …, cos(ω_{d/2}Δ), sin(ω_{d/2}Δ)]`, whose inner
//! products depend only on interval differences.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use chrono::{DateTime, Datelike};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// A calendar field that partitions time into a cycle of slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    HourOfDay,
    DayOfWeek,
    DayOfMonth,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Self::HourOfDay, Self::DayOfWeek, Self::DayOfMonth];

    pub fn name(self) -> &'static str {
        match self {
            Self::HourOfDay => "hour_of_day",
            Self::DayOfWeek => "day_of_week",
            Self::DayOfMonth => "day_of_month",
        }
    }

    pub fn cycle_length(self) -> usize {
        match self {
            Self::HourOfDay => 24,
            Self::DayOfWeek => 7,
            Self::DayOfMonth => 31,
        }
    }

    /// Slot index in `[0, cycle_length)` for epoch-seconds `t` shifted by a fixed
    /// UTC offset. Weekdays count from Monday = 0.
    pub fn slot(self, t: i64, utc_offset_seconds: i64) -> usize {
        let local = t + utc_offset_seconds;
        match self {
            Self::HourOfDay => (local.rem_euclid(86_400) / 3_600) as usize,
            // 1970-01-01 was a Thursday.
            Self::DayOfWeek => (local.div_euclid(86_400) + 3).rem_euclid(7) as usize,
            Self::DayOfMonth => DateTime::from_timestamp(local, 0)
                .map(|dt| dt.day0() as usize)
                .unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AbsoluteTimeConfig {
    pub granularities: Vec<Granularity>,
    /// Largest window radius `J`.
    pub surround: usize,
    /// Odd convolution width `n`.
    pub kernel_size: usize,
    /// Also sum the radius-0 (single slot) window.
    pub include_j0: bool,
    pub utc_offset_seconds: i64,
}

impl Default for AbsoluteTimeConfig {
    fn default() -> Self {
        Self {
            granularities: vec![Granularity::HourOfDay, Granularity::DayOfWeek],
            surround: 2,
            kernel_size: 3,
            include_j0: false,
            utc_offset_seconds: 0,
        }
    }
}

impl AbsoluteTimeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.granularities.is_empty() {
            return Err(Error::Config("at least one granularity is required".into()));
        }
        if self.surround == 0 {
            return Err(Error::Config("surround (J) must be at least 1".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }

    pub fn radii(&self) -> RangeInclusive<usize> {
        (if self.include_j0 { 0 } else { 1 })..=self.surround
    }
}

/// Learned slot tables (one per granularity) and one kernel per window radius,
/// shared across granularities.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsoluteTimeEncoder {
    pub config: AbsoluteTimeConfig,
    pub dim: usize,
    pub tables: Vec<Tensor>,
    pub kernels: Vec<Tensor>,
}

/// Graph handles for an [`AbsoluteTimeEncoder`]'s parameters.
#[derive(Debug, Clone)]
pub struct AbsoluteVars {
    pub tables: Vec<Var>,
    pub kernels: Vec<Var>,
}

impl AbsoluteTimeEncoder {
    /// Tables are uniform in `±1/√d`; kernels start near the identity filter.
    pub fn new(config: AbsoluteTimeConfig, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let bound = 1.0 / (dim as f64).sqrt();
        let tables = config
            .granularities
            .iter()
            .map(|g| {
                let n = g.cycle_length() * dim;
                let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                Tensor::new(&[g.cycle_length(), dim], data)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = config.kernel_size;
        let kernels = config
            .radii()
            .map(|_| {
                let data = (0..n * dim)
                    .map(|i| {
                        let center = if i / dim == n / 2 { 1.0 } else { 0.0 };
                        center + rng.random_range(-0.1..0.1)
                    })
                    .collect();
                Tensor::new(&[n, dim], data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            dim,
            tables,
            kernels,
        })
    }

    pub fn zeros(config: AbsoluteTimeConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        let tables = config
            .granularities
            .iter()
            .map(|g| Tensor::zeros(&[g.cycle_length(), dim]))
            .collect();
        let kernels = config
            .radii()
            .map(|_| Tensor::zeros(&[config.kernel_size, dim]))
            .collect();
        Ok(Self {
            config,
            dim,
            tables,
            kernels,
        })
    }

    pub fn table_name(g: Granularity) -> String {
        format!("abs.table.{}", g.name())
    }

    pub fn kernel_name(j: usize) -> String {
        format!("abs.kernel.{j}")
    }

    /// `(name, tensor)` pairs in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .config
            .granularities
            .iter()
            .zip(&self.tables)
            .map(|(g, t)| (Self::table_name(*g), t))
            .collect();
        out.extend(self.config.radii().zip(&self.kernels).map(|(j, k)| (Self::kernel_name(j), k)));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = self
            .config
            .granularities
            .iter()
            .zip(self.tables.iter_mut())
            .map(|(g, t)| (Self::table_name(*g), t))
            .collect();
        out.extend(
            self.config
                .radii()
                .zip(self.kernels.iter_mut())
                .map(|(j, k)| (Self::kernel_name(j), k)),
        );
        out
    }

    fn granularity_index(&self, g: Granularity) -> Result<usize> {
        self.config
            .granularities
            .iter()
            .position(|&x| x == g)
            .ok_or_else(|| Error::Config(format!("granularity {} is not enabled", g.name())))
    }

    fn check_radius(&self, j: usize) -> Result<()> {
        if !self.config.radii().contains(&j) {
            return Err(Error::Config(format!(
                "window radius {j} outside {:?}",
                self.config.radii()
            )));
        }
        Ok(())
    }

    /// Slot indices of the circular window of radius `j` around `center`.
    pub fn window_slots(g: Granularity, center: usize, j: usize) -> Vec<usize> {
        let c = g.cycle_length() as i64;
        (-(j as i64)..=j as i64)
            .map(|k| (center as i64 + k).rem_euclid(c) as usize)
            .collect()
    }

    /// The `(2j+1)×d` stack of slot embeddings surrounding `t`.
    pub fn surrounding_window(&self, g: Granularity, t: i64, j: usize) -> Result<Tensor> {
        self.check_radius(j)?;
        let gi = self.granularity_index(g)?;
        let center = g.slot(t, self.config.utc_offset_seconds);
        let table = &self.tables[gi];
        let rows: Vec<Vec<f64>> = Self::window_slots(g, center, j)
            .into_iter()
            .map(|s| table.row(s).to_vec())
            .collect();
        Tensor::from_rows(&rows)
    }

    pub fn bind(&self, graph: &mut Graph) -> AbsoluteVars {
        AbsoluteVars {
            tables: self.tables.iter().map(|t| graph.param(t.clone())).collect(),
            kernels: self.kernels.iter().map(|t| graph.param(t.clone())).collect(),
        }
    }

    /// Per-granularity `[cycle_length × d]` tables of smoothed slot vectors; row `s`
    /// is `Σ_j maxpool(relu(conv(window(s, j), K_j)))`.
    pub fn smoothed_tables(&self, graph: &mut Graph, vars: &AbsoluteVars) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(vars.tables.len());
        for (g, &table) in self.config.granularities.iter().zip(&vars.tables) {
            let mut rows = Vec::with_capacity(g.cycle_length());
            for slot in 0..g.cycle_length() {
                let mut acc: Option<Var> = None;
                for (j, &kernel) in self.config.radii().zip(&vars.kernels) {
                    let window = graph.gather_rows(table, &Self::window_slots(*g, slot, j))?;
                    let conv = graph.conv1d_depthwise(window, kernel)?;
                    let act = graph.relu(conv);
                    let pooled = graph.maxpool_over_length(act)?;
                    acc = Some(match acc {
                        None => pooled,
                        Some(a) => graph.add(a, pooled)?,
                    });
                }
                rows.push(acc.expect("radii is never empty"));
            }
            out.push(graph.concat_rows(&rows)?);
        }
        Ok(out)
    }

    /// Absolute-time vectors for each timestamp, `[N×d]`.
    pub fn encode_on(&self, graph: &mut Graph, vars: &AbsoluteVars, timestamps: &[i64]) -> Result<Var> {
        let smoothed = self.smoothed_tables(graph, vars)?;
        self.lookup(graph, &smoothed, timestamps)
    }

    /// Sums the rows of precomputed smoothed tables selected by each timestamp.
    pub fn lookup(&self, graph: &mut Graph, smoothed: &[Var], timestamps: &[i64]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (g, &table) in self.config.granularities.iter().zip(smoothed) {
            let idx: Vec<usize> = timestamps
                .iter()
                .map(|&t| g.slot(t, self.config.utc_offset_seconds))
                .collect();
            let rows = graph.gather_rows(table, &idx)?;
            acc = Some(match acc {
                None => rows,
                Some(a) => graph.add(a, rows)?,
            });
        }
        acc.ok_or_else(|| Error::Config("no granularities".into()))
    }

    /// Λ(t) as a plain `[d]` tensor.
    pub fn absolute_encode(&self, t: i64) -> Result<Tensor> {
        if t < 0 {
            return Err(Error::Data(format!("negative timestamp {t}")));
        }
        let mut graph = Graph::new();
        let vars = self.bind(&mut graph);
        let v = self.encode_on(&mut graph, &vars, &[t])?;
        graph.value(v).clone().reshape(&[self.dim])
    }
}

/// Sinusoidal interval encoder with trainable frequencies (radians per time unit).
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeTimeEncoder {
    pub omega: Tensor,
    pub time_unit_seconds: f64,
}

pub const MIN_PERIOD_HOURS: f64 = 1.0;
pub const MAX_PERIOD_HOURS: f64 = 30.0 * 24.0;

/// `d/2` frequencies whose periods are log-uniform between one hour and 30 days,
/// expressed in radians per `time_unit_seconds`.
pub fn init_frequencies(dim: usize, time_unit_seconds: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!("time embedding dimension must be even, got {dim}")));
    }
    if !(time_unit_seconds > 0.0) {
        return Err(Error::Config("time unit must be positive".into()));
    }
    let (lo, hi) = (MIN_PERIOD_HOURS.ln(), MAX_PERIOD_HOURS.ln());
    let units_per_hour = 3600.0 / time_unit_seconds;
    Ok((0..dim / 2)
        .map(|_| {
            let period_hours = rng.random_range(lo..=hi).exp();
            2.0 * PI / (period_hours * units_per_hour)
        })
        .collect())
}

impl RelativeTimeEncoder {
    pub const OMEGA_NAME: &'static str = "rel.omega";

    pub fn new(dim: usize, time_unit_seconds: f64, rng: &mut impl Rng) -> Result<Self> {
        let omega = init_frequencies(dim, time_unit_seconds, rng)?;
        Ok(Self {
            omega: Tensor::vector(omega),
            time_unit_seconds,
        })
    }

    pub fn with_frequencies(omega: Vec<f64>, time_unit_seconds: f64) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::Config("need at least one frequency".into()));
        }
        Ok(Self {
            omega: Tensor::vector(omega),
            time_unit_seconds,
        })
    }

    pub fn dim(&self) -> usize {
        2 * self.omega.len()
    }

    /// Converts signed second intervals into the encoder's time unit.
    pub fn scaled(&self, dt_seconds: &[f64]) -> Vec<f64> {
        dt_seconds.iter().map(|&s| s / self.time_unit_seconds).collect()
    }

    pub fn encode_on(&self, graph: &mut Graph, omega: Var, dt_seconds: &[f64]) -> Result<Var> {
        graph.fourier_features(omega, &self.scaled(dt_seconds))
    }

    /// Φ(Δ) as a plain `[d]` tensor.
    pub fn relative_encode(&self, dt_seconds: f64) -> Tensor {
        let s = (2.0 / self.dim() as f64).sqrt();
        let t = dt_seconds / self.time_unit_seconds;
        let mut out = Vec::with_capacity(self.dim());
        for &w in self.omega.data() {
            let (sn, cs) = (w * t).sin_cos();
            out.push(s * cs);
            out.push(s * sn);
        }
        Tensor::vector(out)
    }
}
