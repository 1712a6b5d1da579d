//! Config-driven experiment runner for the switchjump simulator.
//!
//! `run` reads one TOML config, resolves the model from the built-in
//! catalog, runs the experiment and writes into the output directory:
//!
//! - data tables (`.csv` or `.json`),
//! - `summary.json` with results and acceptance checks,
//! - `manifest.json` with the resolved config, seed, versions, wall time and
//!   the SHA-256 of every other file.
//!
//! Data files and the summary depend only on the config and the seed, never
//! on the number of worker threads.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod config;
pub mod experiments;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;
use thiserror::Error;

use crate::experiments::Check;
use crate::output::{to_json_bytes, OutputDir};

pub const DEFAULT_OUTPUT_DIR: &str = "output";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub checks: Vec<Check>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// 0 when every acceptance check passed, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            4
        }
    }
}

pub fn run(config_path: &Path, overrides: &Overrides) -> Result<RunReport, CliError> {
    let started = Instant::now();
    let mut cfg = config::load(config_path)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = Some(seed);
    }
    cfg.seed = Some(cfg.seed.unwrap_or(0));
    if let Some(dir) = &overrides.output_dir {
        cfg.output_dir = Some(dir.clone());
    }
    let out_path = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    cfg.output_dir = Some(out_path.clone());
    if overrides.workers == Some(0) {
        return Err(CliError::Validation("--workers: must be positive".into()));
    }
    let kind = cfg.experiment()?;
    let entry = catalog::resolve(cfg.model()?)?;

    let outcome = match overrides.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Runtime(format!("--workers: {e}")))?
            .install(|| experiments::run(&cfg, &entry))?,
        None => experiments::run(&cfg, &entry)?,
    };

    let mut out = OutputDir::create(&out_path)?;
    for t in &outcome.tables {
        out.write_table(t, cfg.format)?;
    }
    let passed = outcome.checks.iter().all(|c| c.pass);
    let summary = json!({
        "experiment": kind.key(),
        "model": entry.model.name(),
        "seed": cfg.seed,
        "results": outcome.results,
        "checks": outcome.checks,
        "passed": passed,
    });
    out.write("summary.json", &to_json_bytes(&summary)?)?;
    let manifest = json!({
        "tool": "switchjump",
        "version": env!("CARGO_PKG_VERSION"),
        "config_file": config_path.display().to_string(),
        "config": cfg,
        "seed": cfg.seed,
        "workers": overrides.workers.unwrap_or_else(rayon::current_num_threads),
        "wall_time_seconds": started.elapsed().as_secs_f64(),
        "files": out.files,
    });
    let bytes = to_json_bytes(&manifest)?;
    std::fs::write(out_path.join("manifest.json"), bytes)
        .map_err(|e| CliError::Runtime(format!("output_dir: cannot write manifest: {e}")))?;
    Ok(RunReport {
        output_dir: out_path,
        checks: outcome.checks,
    })
}
