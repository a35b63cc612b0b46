//! Baselines computed from the true environment.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use safecover::coverage::CoverageProblem;
use safecover::metrics::{optimum, OracleKind};
use safecover::safe_sets::true_reachable_set;
use safecover::{CellSet, DiskMode, EnvironmentTruth, LocationId};

use crate::config::ExperimentConfig;
use crate::runner::build_environment;

/// Agents whose true reachable sets intersect, with their joint sets.
#[derive(Clone, Debug, PartialEq)]
pub struct TrueBatch {
    /// Increasing agent indices.
    pub agents: Vec<usize>,
    /// `R̄_0` of the members' seeds.
    pub reachable: CellSet,
    /// `R̄_ε` of the members' seeds.
    pub reachable_eps: CellSet,
}

/// Groups agents by their true `R̄_0`, ordered by smallest member.
pub fn true_batches(env: &EnvironmentTruth, lipschitz: f64, eps_q: f64) -> Result<Vec<TrueBatch>> {
    let n = env.domain.len();
    let q = &env.constraint;
    let own: Vec<CellSet> = env
        .seeds
        .iter()
        .map(|&s| true_reachable_set(q, &env.domain, &CellSet::from_ids(n, [s]), 0.0, lipschitz))
        .collect::<safecover::Result<_>>()?;
    let mut group: Vec<usize> = (0..own.len()).collect();
    for i in 0..own.len() {
        for j in 0..i {
            if own[i].intersects(&own[j]) {
                let (gi, gj) = (group[i], group[j]);
                for g in group.iter_mut() {
                    if *g == gi {
                        *g = gj;
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    for i in 0..own.len() {
        if group[i] != i {
            continue;
        }
        let agents: Vec<usize> = (0..own.len()).filter(|&j| group[j] == i).collect();
        let seeds = CellSet::from_ids(n, agents.iter().map(|&j| env.seeds[j]));
        out.push(TrueBatch {
            reachable: true_reachable_set(q, &env.domain, &seeds, 0.0, lipschitz)?,
            reachable_eps: true_reachable_set(q, &env.domain, &seeds, eps_q, lipschitz)?,
            agents,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchBaseline {
    pub agents: Vec<usize>,
    pub reachable_cells: usize,
    pub reachable_eps_cells: usize,
    pub kind: OracleKind,
    pub placements: Vec<LocationId>,
    /// `F(X^B_*; ρ; R̄_ε)`.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnconstrainedBaseline {
    pub kind: OracleKind,
    pub placements: Vec<LocationId>,
    /// `F(X_*; ρ; V)`.
    pub value: f64,
}

/// Oracle quantities for one (config, seed) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub instance_hash: String,
    pub seed: u64,
    pub reachable_cells: usize,
    pub reachable_eps_cells: usize,
    /// `Σ_{R̄_0} ρ / |V|`, the coverage normalizer.
    pub reachable_mass: f64,
    pub batches: Vec<BatchBaseline>,
    /// Sum of the batch values.
    pub constrained_value: f64,
    pub unconstrained: UnconstrainedBaseline,
}

impl OracleRecord {
    pub fn file_name(&self) -> String {
        format!("oracle_{}_{}.json", self.instance_hash, self.seed)
    }

    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join(self.file_name());
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}

/// Exhaustive optima when enumerable, greedy-on-truth otherwise.
pub fn compute_oracle(cfg: &ExperimentConfig, seed: u64) -> Result<OracleRecord> {
    let env = build_environment(cfg, seed)?;
    oracle_for(&env, cfg.r, cfg.disk_mode, cfg.lipschitz.unwrap_or(env.lipschitz_q), cfg.eps_q(), cfg.instance_hash(), seed)
}

pub fn oracle_for(
    env: &EnvironmentTruth,
    radius: usize,
    mode: DiskMode,
    lipschitz: f64,
    eps_q: f64,
    instance_hash: String,
    seed: u64,
) -> Result<OracleRecord> {
    let rho = env.density.values();
    let batches = true_batches(env, lipschitz, eps_q)?;
    let mut reachable = env.domain.empty_set();
    let mut reachable_eps = env.domain.empty_set();
    let mut baselines = Vec::with_capacity(batches.len());
    for b in &batches {
        reachable.union_with(&b.reachable);
        reachable_eps.union_with(&b.reachable_eps);
        let problem = CoverageProblem::new(&env.domain, radius, Some(&b.reachable_eps), mode)?;
        let best = optimum(&problem, rho, b.agents.len())?;
        baselines.push(BatchBaseline {
            agents: b.agents.clone(),
            reachable_cells: b.reachable.len(),
            reachable_eps_cells: b.reachable_eps.len(),
            kind: best.kind,
            placements: best.assignment.agents.clone(),
            value: best.assignment.total_value,
        });
    }
    let full = CoverageProblem::new(&env.domain, radius, None, mode)?;
    let best = optimum(&full, rho, env.seeds.len())?;
    let mass = reachable.iter().map(|v| rho[v.0]).sum::<f64>() / env.domain.len() as f64;
    Ok(OracleRecord {
        instance_hash,
        seed,
        reachable_cells: reachable.len(),
        reachable_eps_cells: reachable_eps.len(),
        reachable_mass: mass,
        constrained_value: baselines.iter().map(|b| b.value).sum(),
        batches: baselines,
        unconstrained: UnconstrainedBaseline {
            kind: best.kind,
            placements: best.assignment.agents.clone(),
            value: best.assignment.total_value,
        },
    })
}
