//! Experiment runner for the hermite-ito engine: configuration, seeded ensembles,
//! convergence summaries and PASS/FAIL verdicts.

pub mod config;
pub mod error;
pub mod experiments;
pub mod stats;
pub mod summarize;
pub mod verdict;

use std::path::Path;

use hermite_ito::levy::LevyPreset;
use rayon::{ThreadPool, ThreadPoolBuilder};

pub use config::{ExperimentConfig, Kind};
pub use error::{CliError, CliResult};
pub use verdict::{Check, Verdict};

/// Environment variable holding the worker count; unset means one worker per core.
pub const WORKERS_ENV: &str = "HITO_WORKERS";

pub fn worker_pool() -> CliResult<ThreadPool> {
    let n = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("{WORKERS_ENV}={v:?} is not a positive integer")))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {n} workers: {e}")))
}

/// Runs a parsed config and writes verdict.json into its output directory.
pub fn run_config(cfg: &ExperimentConfig, pool: &ThreadPool) -> CliResult<Verdict> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let ctx = experiments::Context {
        cfg,
        out: cfg.output_dir.clone(),
        pool,
    };
    let checks = experiments::run_kind(&ctx)?;
    let verdict = Verdict::new(cfg.kind.name(), cfg.master_seed, checks);
    verdict.write(&cfg.output_dir)?;
    Ok(verdict)
}

pub fn run(config_path: &Path) -> CliResult<Verdict> {
    let cfg = ExperimentConfig::load(config_path)?;
    run_config(&cfg, &worker_pool()?)
}

/// 0 when every check passed, 1 otherwise.
pub fn verdict_exit_code(v: &Verdict) -> i32 {
    if v.pass {
        0
    } else {
        1
    }
}

pub fn preset_listing() -> String {
    LevyPreset::ALL
        .iter()
        .map(|p| format!("{:<12} {}\n", p.name(), p.describe()))
        .collect()
}
