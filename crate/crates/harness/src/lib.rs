//! Experiment harness around the ensemble distillation core: config parsing,
//! experiment execution, and report writing, shared by the `eekd` binary and
//! the integration tests.

pub mod config;
pub mod experiments;
pub mod report;

use std::fmt;
use std::path::{Path, PathBuf};

pub use config::{ExperimentConfig, ExperimentKind};
pub use experiments::RunContext;
pub use report::Report;

/// Harness failures, split by when they happen: config errors precede any
/// training and leave no output behind; runtime errors happen mid-run.
#[derive(Debug)]
pub enum HarnessError {
    Config(String),
    Runtime(String),
}

impl HarnessError {
    pub fn config_from_core(e: eekd_core::EekdError) -> HarnessError {
        HarnessError::Config(e.to_string())
    }

    pub fn runtime_from_core(e: eekd_core::EekdError) -> HarnessError {
        HarnessError::Runtime(e.to_string())
    }

    /// Process exit code: 1 for config errors, 2 for runtime errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Config(msg) => write!(f, "config error: {msg}"),
            HarnessError::Runtime(msg) => write!(f, "runtime error: {msg}"),
        }
    }
}

impl std::error::Error for HarnessError {}

/// Output directory resolution: the `EEKD_OUT` environment variable wins over
/// the config's `output_dir`.
pub fn resolve_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os("EEKD_OUT") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.output_dir.clone(),
    }
}

/// Full `run` subcommand: load and validate the config and datasets (config
/// phase, no side effects), then execute the experiment and write
/// `report.csv` and `report.json` into the output directory.
pub fn run(
    config_path: &Path,
    seed_override: Option<u64>,
    quiet: bool,
) -> Result<(), HarnessError> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    if let Some(seed) = seed_override {
        cfg.seeds = vec![seed];
    }
    let (train, test) = experiments::load_datasets(&cfg)?;
    let out_dir = resolve_out_dir(&cfg);

    let ctx = RunContext {
        train,
        test,
        out_dir: out_dir.clone(),
        quiet,
    };
    let report = experiments::execute(&cfg, &ctx)?;
    report.write(&out_dir)?;
    if !quiet {
        println!("wrote {}", out_dir.join("report.csv").display());
        println!("wrote {}", out_dir.join("report.json").display());
    }
    Ok(())
}
