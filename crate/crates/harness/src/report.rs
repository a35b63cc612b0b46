//! Aggregation of run records into CSV tables. A pure fold over the files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::runner::{RunRecord, RunStatus};

pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const SERIES_FILE: &str = "coverage_vs_samples.csv";

/// Linearly interpolated quantile of sorted data (the common "type 7").
pub fn quantile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Spread {
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
}

impl Spread {
    pub fn of(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        Self { median: quantile(&values, 0.5), q1: quantile(&values, 0.25), q3: quantile(&values, 0.75) }
    }
}

/// One row of the convergence table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub config_hash: String,
    pub algorithm: String,
    pub runs: usize,
    pub completed: usize,
    pub timed_out: usize,
    pub failed: usize,
    pub converged: usize,
    pub coverage_median: Option<f64>,
    pub coverage_q1: Option<f64>,
    pub coverage_q3: Option<f64>,
    pub samples_median: Option<f64>,
    pub samples_q1: Option<f64>,
    pub samples_q3: Option<f64>,
    /// Samples divided by the largest count any algorithm used on the same
    /// instance.
    pub normalized_samples_median: Option<f64>,
    pub normalized_samples_q1: Option<f64>,
    pub normalized_samples_q3: Option<f64>,
    pub safety_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeriesRow {
    pub config_hash: String,
    pub algorithm: String,
    pub seed: u64,
    pub round: usize,
    pub samples_total: usize,
    pub normalized_coverage: Option<f64>,
}

/// Reads every `run_*.json` in `dir`, sorted by file name.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        name.starts_with("run_") && name.ends_with(".json")
    });
    paths.sort();
    paths.iter().map(|p| RunRecord::read_from(p)).collect()
}

/// Per (instance, seed), each completed run's samples over the maximum.
fn normalized_samples(records: &[RunRecord]) -> Vec<Option<f64>> {
    let mut max: BTreeMap<(&str, u64), usize> = BTreeMap::new();
    for r in records.iter().filter(|r| r.status == RunStatus::Completed) {
        let m = max.entry((&r.instance_hash, r.seed)).or_default();
        *m = (*m).max(r.samples_total);
    }
    records
        .iter()
        .map(|r| {
            let m = *max.get(&(r.instance_hash.as_str(), r.seed))?;
            (r.status == RunStatus::Completed && m > 0).then(|| r.samples_total as f64 / m as f64)
        })
        .collect()
}

pub fn convergence_table(records: &[RunRecord]) -> Vec<ConvergenceRow> {
    let norm = normalized_samples(records);
    let mut groups: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry((r.algorithm.name(), &r.config_hash)).or_default().push(i);
    }
    groups
        .into_iter()
        .map(|((alg, hash), idx)| {
            let count = |s: RunStatus| idx.iter().filter(|&&i| records[i].status == s).count();
            let done: Vec<usize> = idx.iter().copied().filter(|&i| records[i].status == RunStatus::Completed).collect();
            let cov = Spread::of(done.iter().filter_map(|&i| records[i].final_coverage_normalized).collect());
            let samples = Spread::of(done.iter().map(|&i| records[i].samples_total as f64).collect());
            let ns = Spread::of(done.iter().filter_map(|&i| norm[i]).collect());
            ConvergenceRow {
                config_hash: hash.to_owned(),
                algorithm: alg.to_owned(),
                runs: idx.len(),
                completed: done.len(),
                timed_out: count(RunStatus::TimedOut),
                failed: count(RunStatus::Failed),
                converged: done.iter().filter(|&&i| records[i].converged).count(),
                coverage_median: cov.median,
                coverage_q1: cov.q1,
                coverage_q3: cov.q3,
                samples_median: samples.median,
                samples_q1: samples.q1,
                samples_q3: samples.q3,
                normalized_samples_median: ns.median,
                normalized_samples_q1: ns.q1,
                normalized_samples_q3: ns.q3,
                safety_violations: idx.iter().map(|&i| records[i].safety_violations).sum(),
            }
        })
        .collect()
}

pub fn coverage_series(records: &[RunRecord]) -> Vec<SeriesRow> {
    records
        .iter()
        .filter(|r| r.status == RunStatus::Completed)
        .flat_map(|r| {
            r.rounds_log.iter().map(move |l| SeriesRow {
                config_hash: r.config_hash.clone(),
                algorithm: r.algorithm.name().to_owned(),
                seed: r.seed,
                round: l.round,
                samples_total: l.samples_rho + l.samples_q,
                normalized_coverage: l.normalized_coverage,
            })
        })
        .collect()
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes both tables into `out` and returns their paths.
pub fn write_report(input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let records = load_records(input)?;
    if records.is_empty() {
        bail!("no run records in {}", input.display());
    }
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let a = out.join(CONVERGENCE_FILE);
    let b = out.join(SERIES_FILE);
    write_csv(&a, &convergence_table(&records))?;
    write_csv(&b, &coverage_series(&records))?;
    Ok(vec![a, b])
}
