//! Run orchestration behind the command-line commands: data loading, run
//! directories, and the generate/train/eval/ablate/probe workflows.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::data::{build_samples, generate_synthetic, ingest, Dataset, EventLog, GroundTruth, Sample, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::{rela_impr, MetricReport};
use crate::model::{Model, ModelVariant};
use crate::tensor::checkpoint;
use crate::train::{evaluate, train, write_history, EpochRecord};

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const FAILED_FILE: &str = "FAILED";

pub const ABLATION_HEADER: &str = "variant,auc,gauc,logloss,dicycle_rela_impr_pct";
pub const PROBE_HEADER: &str = "offset_hours,score";

/// Log, samples and, for synthetic data, the generating profiles.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub log: EventLog,
    pub dataset: Dataset,
    pub truth: Option<GroundTruth>,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData> {
    let (log, truth) = match (&cfg.data.events_path, &cfg.data.synthetic) {
        (Some(path), _) => (ingest(path)?.log, None),
        (None, Some(spec)) => {
            let g = generate_synthetic(spec)?;
            (g.log, Some(g.truth))
        }
        (None, None) => return Err(Error::Config("no data source configured".into())),
    };
    let dataset = build_samples(&log, cfg.data.max_len, cfg.data.negative_ratio, cfg.data.seed)?;
    if dataset.train.is_empty() || dataset.test.is_empty() {
        return Err(Error::Data("too few interactions to build train and test sets".into()));
    }
    Ok(LoadedData { log, dataset, truth })
}

/// Creates `dir`. An existing path is an error unless `force`, which replaces it.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !force {
            return Err(Error::Config(format!("{} already exists (use --force to replace it)", dir.display())));
        }
        let removed = if dir.is_dir() { fs::remove_dir_all(dir) } else { fs::remove_file(dir) };
        removed.map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn prepare_file(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!("{} already exists (use --force to replace it)", path.display())));
    }
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    version: &'a str,
    started_unix: f64,
    finished_unix: f64,
    wall_seconds: f64,
}

fn write_metadata(dir: &Path, command: &str, started: f64, clock: Instant) -> Result<()> {
    let meta = Metadata {
        command,
        version: env!("CARGO_PKG_VERSION"),
        started_unix: started,
        finished_unix: unix_now(),
        wall_seconds: clock.elapsed().as_secs_f64(),
    };
    write(&dir.join(METADATA_FILE), serde_json::to_string_pretty(&meta)? + "\n")
}

#[derive(Debug, Clone)]
pub struct GenerateSummary {
    pub rows: usize,
    pub log_path: PathBuf,
    pub truth_path: PathBuf,
    pub hourly_path: PathBuf,
    pub gaps_path: PathBuf,
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("events");
    out.with_file_name(format!("{stem}.{suffix}"))
}

/// Writes the event log to `out` plus three sidecars next to it: the ground-truth
/// profiles (`<stem>.truth.json`), per-category hour-of-day counts
/// (`<stem>.hourly.csv`) and same-category inter-event gap counts in whole hours
/// up to one week (`<stem>.gaps.csv`).
pub fn generate(spec: &SyntheticSpec, out: &Path, force: bool) -> Result<GenerateSummary> {
    let g = generate_synthetic(spec)?;
    let summary = GenerateSummary {
        rows: g.log.len(),
        log_path: out.to_path_buf(),
        truth_path: sidecar(out, "truth.json"),
        hourly_path: sidecar(out, "hourly.csv"),
        gaps_path: sidecar(out, "gaps.csv"),
    };
    for p in [&summary.log_path, &summary.truth_path, &summary.hourly_path, &summary.gaps_path] {
        prepare_file(p, force)?;
    }
    g.log.save(out)?;
    write(&summary.truth_path, serde_json::to_string_pretty(&g.truth)? + "\n")?;
    let (hourly, gaps) = histograms(&g.log, &g.truth);
    write(&summary.hourly_path, hourly)?;
    write(&summary.gaps_path, gaps)?;
    Ok(summary)
}

fn histograms(log: &EventLog, truth: &GroundTruth) -> (String, String) {
    const MAX_GAP: usize = 168;
    let cats = &truth.spec.categories;
    let mut hourly = vec![[0usize; 24]; cats.len()];
    let mut gaps = vec![vec![0usize; MAX_GAP + 1]; cats.len()];
    let mut last: Vec<Vec<Option<i64>>> = vec![vec![None; cats.len()]; log.users().len()];
    for (u, history) in log.positive_histories().into_iter().enumerate() {
        for (item, t) in history {
            let c = truth.item_category[item - 1];
            hourly[c][(t.rem_euclid(86_400) / 3600) as usize] += 1;
            if let Some(prev) = last[u][c] {
                let h = ((t - prev) / 3600) as usize;
                if h <= MAX_GAP {
                    gaps[c][h] += 1;
                }
            }
            last[u][c] = Some(t);
        }
    }
    let mut h = String::from("category,hour,count\n");
    let mut g = String::from("category,gap_hours,count\n");
    for (c, cat) in cats.iter().enumerate() {
        for (hour, n) in hourly[c].iter().enumerate() {
            let _ = writeln!(h, "{},{hour},{n}", cat.name);
        }
        for (gap, n) in gaps[c].iter().enumerate() {
            let _ = writeln!(g, "{},{gap},{n}", cat.name);
        }
    }
    (h, g)
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub dir: PathBuf,
    pub model: Model,
    pub report: MetricReport,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Trains the configured variant and writes a run directory holding the exact
/// config, checkpoint, per-epoch history, test report and wall-clock metadata.
/// A failed run leaves a `FAILED` file with the error message.
pub fn train_run(cfg: &ExperimentConfig, dir: &Path, force: bool) -> Result<TrainRun> {
    let data = load_data(cfg)?;
    train_run_on(cfg, &data, dir, force)
}

/// As [`train_run`], on already loaded data.
pub fn train_run_on(cfg: &ExperimentConfig, data: &LoadedData, dir: &Path, force: bool) -> Result<TrainRun> {
    cfg.validate()?;
    prepare_dir(dir, force)?;
    let result = train_inner(cfg, data, dir);
    if let Err(e) = &result {
        let _ = fs::write(dir.join(FAILED_FILE), format!("{e}\n"));
    }
    result
}

fn train_inner(cfg: &ExperimentConfig, data: &LoadedData, dir: &Path) -> Result<TrainRun> {
    let started = unix_now();
    let clock = Instant::now();
    write(&dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    let model = Model::new(cfg.model.clone(), data.dataset.num_items, cfg.seed)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    let outcome = train(model, &data.dataset.train, &train_cfg)?;
    let report = evaluate(&outcome.model, &data.dataset.test, &data.dataset.users)?;
    checkpoint::save(&dir.join(CHECKPOINT_FILE), &outcome.model.to_checkpoint())?;
    let mut history = Vec::new();
    write_history(&outcome.history, &mut history).map_err(|e| Error::io(dir.join(HISTORY_FILE), e))?;
    write(&dir.join(HISTORY_FILE), history)?;
    write(&dir.join(REPORT_FILE), report_csv(&report))?;
    write_metadata(dir, "train", started, clock)?;
    Ok(TrainRun {
        dir: dir.to_path_buf(),
        model: outcome.model,
        report,
        history: outcome.history,
        best_epoch: outcome.best_epoch,
    })
}

fn report_csv(report: &MetricReport) -> String {
    format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row())
}

/// Config and trained model of a run directory.
pub fn load_run(dir: &Path) -> Result<(ExperimentConfig, Model)> {
    let cfg = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    if !ckpt.exists() {
        return Err(Error::Checkpoint(format!("{} not found", ckpt.display())));
    }
    let model = Model::from_checkpoint(cfg.model.clone(), &checkpoint::load(&ckpt)?)?;
    Ok((cfg, model))
}

/// Re-scores the test split of a run. With `baseline`, also returns the RelaImpr
/// table of this run over that report CSV.
pub fn eval_run(dir: &Path, baseline: Option<&Path>) -> Result<(MetricReport, Option<String>)> {
    let (cfg, model) = load_run(dir)?;
    let data = load_data(&cfg)?;
    if model.num_items() != data.dataset.num_items {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} items but the data has {}",
            model.num_items(),
            data.dataset.num_items
        )));
    }
    let report = evaluate(&model, &data.dataset.test, &data.dataset.users)?;
    let table = match baseline {
        Some(p) => Some(report.rela_impr_table(&MetricReport::read_csv(&read(p)?)?)?),
        None => None,
    };
    Ok((report, table))
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: ModelVariant,
    pub report: MetricReport,
    /// RelaImpr of DiCycle over this row, in percent; `None` when undefined.
    pub dicycle_rela_impr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Ablation {
    pub rows: Vec<AblationRow>,
    pub runs: Vec<TrainRun>,
}

impl Ablation {
    pub fn auc(&self, variant: ModelVariant) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == variant).map(|r| r.report.auc)
    }

    pub fn run(&self, variant: ModelVariant) -> Option<&TrainRun> {
        self.runs.iter().find(|r| r.model.variant() == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{ABLATION_HEADER}\n");
        for r in &self.rows {
            let ri = r.dicycle_rela_impr.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{ri}", r.variant, r.report.auc, r.report.gauc, r.report.logloss);
        }
        out
    }
}

/// Trains DiCycle and its three ablations on the same data and seed, each into
/// `dir/<variant>`, and writes `dir/ablation.csv`.
pub fn ablate(cfg: &ExperimentConfig, dir: &Path, force: bool) -> Result<Ablation> {
    cfg.validate()?;
    prepare_dir(dir, force)?;
    let started = unix_now();
    let clock = Instant::now();
    let data = load_data(cfg)?;
    let mut runs = Vec::new();
    for v in ModelVariant::ABLATION {
        let run_cfg = cfg.clone().with_variant(v);
        runs.push(train_run_on(&run_cfg, &data, &dir.join(v.name()), false)?);
    }
    let full = runs[0].report.auc;
    let rows = runs
        .iter()
        .map(|r| AblationRow {
            variant: r.model.variant(),
            report: r.report.clone(),
            dicycle_rela_impr: rela_impr(full, r.report.auc).ok(),
        })
        .collect();
    let ablation = Ablation { rows, runs };
    write(&dir.join(ABLATION_FILE), ablation.to_csv())?;
    write_metadata(dir, "ablate", started, clock)?;
    Ok(ablation)
}

/// Which test sample a probe sweeps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProbeSelector {
    /// The test positive in a relative-cycle category with the most same-category
    /// history (synthetic data), otherwise the test positive with the most
    /// repeats of its target item. Ties go to the earliest sample.
    Auto,
    /// Position in the test split.
    Index(usize),
    /// Test positive of this user with this target item.
    Pair { user: String, item: String },
}

impl FromStr for ProbeSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        if let Some(n) = s.strip_prefix("index:") {
            return n
                .parse()
                .map(Self::Index)
                .map_err(|_| Error::Config(format!("bad probe index {n:?}")));
        }
        match s.split_once(':') {
            Some((user, item)) if !user.is_empty() && !item.is_empty() => Ok(Self::Pair {
                user: user.into(),
                item: item.into(),
            }),
            _ => Err(Error::Config(format!(
                "probe selector must be auto, index:<n> or <user>:<item>, got {s:?}"
            ))),
        }
    }
}

/// Index into `data.dataset.test` of the sample chosen by `selector`.
pub fn select_probe_sample(data: &LoadedData, selector: &ProbeSelector) -> Result<usize> {
    let test = &data.dataset.test;
    match selector {
        ProbeSelector::Index(i) if *i < test.len() => Ok(*i),
        ProbeSelector::Index(i) => Err(Error::Config(format!("probe index {i} out of {} test samples", test.len()))),
        ProbeSelector::Pair { user, item } => {
            let u = data.log.user_index(user);
            let i = data.log.model_item(item);
            test.iter()
                .position(|s| s.label == 1 && Some(s.user) == u && Some(s.target_item) == i)
                .ok_or_else(|| Error::Config(format!("no test positive for user {user:?} and item {item:?}")))
        }
        ProbeSelector::Auto => {
            let score = |s: &Sample| -> Option<usize> {
                match &data.truth {
                    Some(truth) => {
                        let c = truth.item_category[s.target_item - 1];
                        truth.spec.categories[c].rtc.as_ref()?;
                        Some(s.behaviors.iter().filter(|b| truth.item_category[b.item - 1] == c).count())
                    }
                    None => Some(s.behaviors.iter().filter(|b| b.item == s.target_item).count()),
                }
            };
            let mut best: Option<(usize, usize)> = None;
            for (i, s) in test.iter().enumerate().filter(|(_, s)| s.label == 1) {
                if let Some(n) = score(s) {
                    if best.is_none_or(|(_, b)| n > b) {
                        best = Some((i, n));
                    }
                }
            }
            best.map(|(i, _)| i)
                .ok_or_else(|| Error::Data("no test positive qualifies for the probe".into()))
        }
    }
}

pub fn probe_csv(series: &[(f64, f64)]) -> String {
    let mut out = format!("{PROBE_HEADER}\n");
    for (h, s) in series {
        let _ = writeln!(out, "{h},{s}");
    }
    out
}

/// Sweeps the selected sample's target time hourly over `horizon` hours with the
/// model of run `dir`, writing `offset_hours,score` rows to `out`.
pub fn probe_run(dir: &Path, selector: &ProbeSelector, horizon: usize, out: &Path, force: bool) -> Result<Vec<(f64, f64)>> {
    let (cfg, model) = load_run(dir)?;
    let data = load_data(&cfg)?;
    let idx = select_probe_sample(&data, selector)?;
    let series = model.probe_timestamp_sweep(&data.dataset.test[idx], horizon, 3600)?;
    prepare_file(out, force)?;
    write(out, probe_csv(&series))?;
    Ok(series)
}
