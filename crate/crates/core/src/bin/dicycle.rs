use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dicycle::config::ExperimentConfig;
use dicycle::data::SyntheticSpec;
use dicycle::experiment::{self, ProbeSelector};
use dicycle::model::ModelVariant;
use dicycle::Result;

#[derive(Parser)]
#[command(name = "dicycle", version, about = "Time-cycle CTR experiments on event logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path; falls back to the config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replace existing outputs.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    variant: Option<ModelVariant>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        if let Some(v) = self.variant {
            cfg = cfg.with_variant(v);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_or(&self, fallback: &Path) -> PathBuf {
        self.out.clone().unwrap_or_else(|| fallback.to_path_buf())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic event log with ground-truth and histogram sidecars.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train one variant into a run directory.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Re-score the test split of a run directory.
    Eval {
        run: PathBuf,
        /// Report CSV to compute RelaImpr against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Also write the report CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train DiCycle and its three ablations and tabulate test AUC.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the target time of one test sample and write the scores.
    Probe {
        run: PathBuf,
        /// auto, index:<n> or <user>:<item>
        #[arg(long, default_value = "auto")]
        sample: String,
        #[arg(long, default_value_t = 72)]
        horizon: usize,
        #[arg(long, default_value = "probe.csv")]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common } => {
            let cfg = common.config()?;
            let mut spec = cfg.data.synthetic.clone().unwrap_or_else(SyntheticSpec::default);
            if let Some(seed) = common.seed {
                spec.seed = seed;
            }
            let out = common.out_or(Path::new("events.csv"));
            let s = experiment::generate(&spec, &out, common.force)?;
            println!("wrote {} events to {}", s.rows, s.log_path.display());
            println!("ground truth: {}", s.truth_path.display());
            println!("histograms: {}, {}", s.hourly_path.display(), s.gaps_path.display());
        }
        Command::Train { common } => {
            let cfg = common.config()?;
            let dir = common.out_or(&cfg.out_dir);
            let r = experiment::train_run(&cfg, &dir, common.force)?;
            println!("{} best epoch {} -> {}", cfg.model.variant, r.best_epoch, dir.display());
            println!("{}", r.report);
        }
        Command::Eval { run, baseline, out, force } => {
            let (report, table) = experiment::eval_run(&run, baseline.as_deref())?;
            println!("{report}");
            if let Some(t) = table {
                print!("\n{t}");
            }
            if let Some(out) = out {
                if out.exists() && !force {
                    return Err(dicycle::Error::Config(format!("{} already exists (use --force)", out.display())));
                }
                let text = format!("{}\n{}\n", dicycle::metrics::MetricReport::CSV_HEADER, report.csv_row());
                std::fs::write(&out, text).map_err(|e| dicycle::Error::Config(format!("{}: {e}", out.display())))?;
            }
        }
        Command::Ablate { common } => {
            let cfg = common.config()?;
            let dir = common.out_or(&cfg.out_dir);
            let a = experiment::ablate(&cfg, &dir, common.force)?;
            print!("{}", a.to_csv());
        }
        Command::Probe { run, sample, horizon, out, force } => {
            let selector: ProbeSelector = sample.parse()?;
            let series = experiment::probe_run(&run, &selector, horizon, &out, force)?;
            println!("wrote {} points to {}", series.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
