//! The `lab` experiment runner: one experiment per invocation, configured by a
//! TOML file, writing CSV tables, a summary and a run manifest.

pub mod config;
pub mod experiments;
pub mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use thiserror::Error;

pub use config::{Assertion, ExperimentConfig, ExperimentKind};
pub use experiments::{run_experiment, Outcome, RunContext};
pub use report::{AssertionResult, RunManifest, Summary};

pub const THREADS_VAR: &str = "LAB_THREADS";

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl LabError {
    pub fn exit_code(&self) -> u8 {
        match self {
            LabError::Config(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for LabError {
            fn from(e: $t) -> Self {
                LabError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    crate::phase_space::PhaseSpaceError,
    crate::symplectic_flow::FlowError,
    crate::weyl_quant::WeylError,
    crate::propagator::PropagatorError,
    crate::almost_diag::AlmostDiagError,
    crate::estimates::EstimateError,
    crate::microlocal::MicrolocalError
);

#[derive(Debug, Parser)]
#[command(name = "lab", version, about = "Run one phase-space experiment")]
pub struct Cli {
    /// Experiment to run.
    #[arg(value_enum)]
    pub kind: ExperimentKind,
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for random corpora; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Add log-scale columns to scan tables.
    #[arg(long)]
    pub emit_plot_data: bool,
    /// Directory for cached dense propagators.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Extra `[[assert]]` entries checked after the run.
    #[arg(long)]
    pub assert_file: Option<PathBuf>,
}

/// Everything a finished run produced.
#[derive(Debug)]
pub struct RunRecord {
    pub out_dir: PathBuf,
    pub summary: Summary,
    pub manifest: RunManifest,
}

impl RunRecord {
    pub fn passed(&self) -> bool {
        self.summary.passed
    }
}

fn threads_from_env() -> Result<Option<usize>, LabError> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(LabError::Config(format!(
                "{THREADS_VAR} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

/// Resolve the configuration from the command line and run it.
pub fn execute(cli: &Cli) -> Result<RunRecord, LabError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(k) = cfg.kind {
        if k != cli.kind {
            return Err(LabError::Config(format!(
                "config declares kind `{}` but `{}` was requested",
                k.name(),
                cli.kind.name()
            )));
        }
    }
    cfg.kind = Some(cli.kind);
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    if let Some(path) = &cli.assert_file {
        cfg.assertions.extend(ExperimentConfig::load_assertions(path)?);
    }
    if let Some(n) = threads_from_env()? {
        if !crate::par::set_threads(n) {
            log::debug!("thread pool already configured; {THREADS_VAR}={n} ignored");
        }
    }
    let ctx = RunContext {
        cache: cli.cache.clone(),
        emit_plot_data: cli.emit_plot_data,
    };
    run_config(cli.kind, &cfg, &ctx)
}

/// Run `kind` under `cfg` and write every artifact to the output directory.
pub fn run_config(kind: ExperimentKind, cfg: &ExperimentConfig, ctx: &RunContext) -> Result<RunRecord, LabError> {
    let out_dir = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(kind.name()));
    let hash = cfg.hash();
    let start = Instant::now();
    let outcome = run_experiment(kind, cfg, ctx)?;
    let wall = start.elapsed().as_secs_f64();
    let results = report::check_assertions(&cfg.assertions, &outcome.metrics);
    let summary = Summary::new(kind, cfg.seed(), &hash, &outcome, results);
    let manifest = report::write_outputs(&out_dir, kind, cfg.seed(), &hash, wall, &outcome, &summary)?;
    Ok(RunRecord {
        out_dir,
        summary,
        manifest,
    })
}

/// Process entry point: exit 0 on success, 1 on assertion or runtime
/// failure, 2 on configuration errors.
pub fn main_with(cli: Cli) -> ExitCode {
    match execute(&cli) {
        Ok(record) => {
            println!("{}", record.summary.headline(&record.out_dir));
            let failed: Vec<&AssertionResult> = record.summary.assertions.iter().filter(|a| !a.passed).collect();
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                for a in failed {
                    eprintln!("{}", a.diff());
                }
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("lab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
