//! Command-line experiment runner for RBM state tomography.
//!
//! Every command is a pure function of the config file, flags, and seed;
//! the only nondeterministic output is the wall time in `summary.json`.

pub mod config;
pub mod diagnose;
pub mod experiment;
pub mod sweep;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mode_qst::states::MeasurementDataset;
use mode_qst::{QstError, Rbm};

use crate::config::{ExperimentConfig, StateSpec};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Capacity(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<QstError> for CliError {
    fn from(e: QstError) -> Self {
        match e {
            QstError::Capacity { .. } => CliError::Capacity(format!("{e}; use a smaller system")),
            QstError::Numerical(_) => CliError::Numerical(e.to_string()),
            QstError::Io(_) => CliError::Io(e.to_string()),
            QstError::Dimension { .. } | QstError::Config(_) | QstError::Parse(_) => CliError::Config(e.to_string()),
        }
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[derive(Debug, Parser)]
#[command(name = "mode-qst", version, about = "RBM quantum state tomography with mode-assisted training")]
pub struct Cli {
    /// JSON config file; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Parallel workers for sweeps.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample measurements of a state and write a dataset file.
    Generate(StateArgs),
    /// Train one model and write its trace, checkpoint, and summary.
    Train {
        #[command(flatten)]
        state: StateArgs,
        /// Train on this dataset instead of sampling one.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run a training grid and aggregate final fidelities.
    Sweep(StateArgs),
    /// Transition statistics and the state graph of a checkpoint.
    Diagnose {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Metrics of a checkpoint against a state and/or dataset.
    Eval {
        #[command(flatten)]
        state: StateArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StateKind {
    Ghz,
    W,
    #[value(name = "depolarized_w", alias = "depolarized-w")]
    DepolarizedW,
    Tffim,
    Toric,
}

#[derive(Debug, Default, Args)]
pub struct StateArgs {
    #[arg(long, value_enum)]
    pub state: Option<StateKind>,
    /// Qubit count (GHZ, W) or lattice side (TFFIM, toric code).
    #[arg(long)]
    pub n: Option<usize>,
    /// Depolarization level.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long)]
    pub l: Option<usize>,
    /// Number of measurements.
    #[arg(long)]
    pub count: Option<usize>,
}

impl StateArgs {
    fn spec(&self) -> Result<Option<StateSpec>, CliError> {
        let Some(kind) = self.state else { return Ok(None) };
        let name = kind.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
        let need = |v: Option<usize>, flag: &str| v.ok_or_else(|| CliError::Config(format!("--state {name} needs --{flag}")));
        Ok(Some(match kind {
            StateKind::Ghz => StateSpec::Ghz { n: need(self.n, "n")? },
            StateKind::W => StateSpec::W { n: need(self.n, "n")? },
            StateKind::DepolarizedW => StateSpec::DepolarizedW {
                n: need(self.n, "n")?,
                p: self.p.ok_or_else(|| CliError::Config("--state depolarized_w needs --p".into()))?,
            },
            StateKind::Tffim => StateSpec::Tffim {
                rows: need(self.rows.or(self.n), "rows")?,
                cols: need(self.cols.or(self.n), "cols")?,
                j: 1.0,
                h: 1.0,
            },
            StateKind::Toric => StateSpec::Toric { l: need(self.l.or(self.n), "l")? },
        }))
    }

    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        if let Some(spec) = self.spec()? {
            cfg.state = Some(spec);
        }
        if let Some(c) = self.count {
            cfg.count = c;
        }
        Ok(())
    }
}

/// Config file plus flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    match &cli.command {
        Command::Generate(s) | Command::Sweep(s) => s.apply(&mut cfg)?,
        Command::Train { state, dataset } => {
            state.apply(&mut cfg)?;
            if dataset.is_some() {
                cfg.dataset = dataset.clone();
            }
        }
        Command::Eval { state, checkpoint, dataset } => {
            state.apply(&mut cfg)?;
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint.clone();
            }
            if dataset.is_some() {
                cfg.dataset = dataset.clone();
            }
        }
        Command::Diagnose { checkpoint } => {
            if checkpoint.is_some() {
                cfg.diagnose.checkpoint = checkpoint.clone();
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_checkpoint(path: Option<&PathBuf>) -> Result<Rbm, CliError> {
    let path = path.ok_or_else(|| CliError::Config("no checkpoint given (--checkpoint)".into()))?;
    if !path.exists() {
        return Err(CliError::Io(format!("checkpoint not found: {}", path.display())));
    }
    Ok(Rbm::load_checkpoint(path)?)
}

fn load_dataset(path: &Path) -> Result<MeasurementDataset, CliError> {
    if !path.exists() {
        return Err(CliError::Io(format!("dataset not found: {}", path.display())));
    }
    Ok(MeasurementDataset::load(path)?)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Generate(_) => {
            let spec = cfg.state()?;
            let target = spec.target()?;
            let data = experiment::synthesize(spec, &target, cfg.count, cfg.seed)?;
            let path = cfg.out.join("dataset.txt");
            write_file(&path, &data.to_text())?;
            log::info!("wrote {} measurements to {}", data.total_count(), path.display());
        }
        Command::Train { .. } => {
            let target = cfg.state.as_ref().map(|s| s.target()).transpose()?;
            let data = match &cfg.dataset {
                Some(path) => load_dataset(path)?,
                None => experiment::synthesize(cfg.state()?, target.as_ref().unwrap(), cfg.count, cfg.seed)?,
            };
            let mut train_cfg = cfg.train.clone();
            train_cfg.seed = cfg.seed;
            let (_, summary) = experiment::train_to_dir(&data, target.as_ref(), &train_cfg, &cfg.out)?;
            log::info!("final metrics: {:?}", summary.final_metrics);
        }
        Command::Sweep(_) => {
            let spec = cfg.state()?;
            let runs = sweep::run_sweep(spec, &cfg.sweep, &cfg.train, cfg.seed, cfg.workers)?;
            let cells = sweep::summarize(spec, &runs);
            write_file(&cfg.out.join("sweep_runs.csv"), &sweep::runs_csv(spec, &runs))?;
            write_file(&cfg.out.join("sweep.csv"), &sweep::summary_csv(&cells))?;
            if !cfg.sweep.targets.is_empty() {
                let rows = sweep::measurements_to_fidelity(&runs, &cfg.sweep.targets);
                write_file(&cfg.out.join("measurements_to_fidelity.csv"), &sweep::thresholds_csv(&rows))?;
            }
        }
        Command::Diagnose { .. } => {
            let rbm = load_checkpoint(cfg.diagnose.checkpoint.as_ref())?;
            diagnose::diagnose(&rbm, &cfg.diagnose, cfg.seed, &cfg.out)?;
        }
        Command::Eval { .. } => {
            let rbm = load_checkpoint(cfg.checkpoint.as_ref())?;
            let target = cfg.state.as_ref().map(|s| s.target()).transpose()?;
            let data = cfg.dataset.as_deref().map(load_dataset).transpose()?;
            if target.is_none() && data.is_none() {
                return Err(CliError::Config("eval needs a state or a dataset".into()));
            }
            let metrics = experiment::evaluate(&rbm, target.as_ref(), data.as_ref())?;
            let json = serde_json::to_string_pretty(&metrics).map_err(|e| CliError::Io(e.to_string()))?;
            write_file(&cfg.out.join("eval.json"), &format!("{json}\n"))?;
            println!("{json}");
        }
    }
    Ok(())
}
