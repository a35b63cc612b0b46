//! Experiment harness for the safecover algorithms: configuration, seed
//! sweeps, oracle baselines and CSV reports.

pub mod config;
pub mod oracle;
pub mod report;
pub mod runner;

use std::path::{Path, PathBuf};

use anyhow::Result;
use rayon::prelude::*;

pub use config::{Algorithm, EnvironmentSource, ExperimentConfig};
pub use runner::{run_seed, RunRecord, RunStatus};

/// Runs every seed, in parallel when `parallel`, returning records in seed
/// order. Each run depends only on its seed, so both orders agree.
pub fn sweep(cfg: &ExperimentConfig, seeds: &[u64], parallel: bool) -> Vec<RunRecord> {
    if parallel {
        seeds.par_iter().map(|&s| run_seed(cfg, s)).collect()
    } else {
        seeds.iter().map(|&s| run_seed(cfg, s)).collect()
    }
}

/// Sweeps and writes one file per record.
pub fn sweep_to(cfg: &ExperimentConfig, seeds: &[u64], out: &Path) -> Result<Vec<PathBuf>> {
    sweep(cfg, seeds, true).iter().map(|r| r.write_to(out)).collect()
}
