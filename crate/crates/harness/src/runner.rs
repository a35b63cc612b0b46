//! One (config, seed) pair: build the environment, run the algorithm and
//! condense the outcome into a [`RunRecord`].

use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Duration;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use safecover::environment::{
    load_environment, obstacle_environment, sample_gp_environment, sample_seeds, GenerationParams, GpSampler,
    ObstacleSpec, Positivity,
};
use safecover::macopt::{macopt_run, FieldKind, Phase, Sampler};
use safecover::metrics::{coverage_within, normalized_coverage, reachable_region};
use safecover::safemac::{passivemac_run, safemac_run, two_stage_run, Heuristic};
use safecover::{rng, CellSet, EnvironmentTruth, GridDomain, LocationId, MacoptConfig, RunOutcome, SafemacConfig};

use crate::config::{Algorithm, EnvironmentSource, ExperimentConfig};

/// Builds the true environment of one seed.
pub fn build_environment(cfg: &ExperimentConfig, seed: u64) -> Result<EnvironmentTruth> {
    let params = GenerationParams {
        n_agents: cfg.n_agents,
        noise_rho: cfg.noise_var_rho.sqrt(),
        noise_q: cfg.noise_var_q.sqrt(),
        seed_margin: cfg.seed_margin,
        positivity: Positivity::Shift,
    };
    let grid = || GridDomain::new(cfg.grid.width, cfg.grid.height, cfg.grid.spacing).context("invalid grid");
    let env = match &cfg.environment {
        EnvironmentSource::Gp {} => {
            let d = grid()?;
            let rho = GpSampler::new(&d, &cfg.kernel_rho.spec()?)?;
            let q = GpSampler::new(&d, &cfg.kernel_q.spec()?)?;
            sample_gp_environment(&d, &rho, &q, &params, seed)?
        }
        EnvironmentSource::Obstacle { blocks, block_side } => {
            let d = grid()?;
            let spec = ObstacleSpec::random(&d, *blocks, *block_side, &mut rng::stream(seed, "obstacles", 0));
            let rho = GpSampler::new(&d, &cfg.kernel_rho.spec()?)?;
            obstacle_environment(&d, &spec, &rho, &params, seed)?
        }
        EnvironmentSource::File { density, constraint, meta, random_seeds } => {
            let mut env: EnvironmentTruth = load_environment(density, constraint, meta)
                .with_context(|| format!("cannot load environment from {}", density.display()))?;
            if *random_seeds {
                env.seeds = sample_seeds(&env.constraint, cfg.n_agents, cfg.seed_margin, &mut rng::stream(seed, "seeds", 0))?;
            }
            env
        }
    };
    Ok(env)
}

pub fn macopt_config(cfg: &ExperimentConfig) -> Result<MacoptConfig> {
    let sampler = match cfg.algorithm {
        Algorithm::MacoptH => Sampler::Hallucinated,
        Algorithm::Ucb => Sampler::UcbCenter,
        _ => Sampler::Uncertainty,
    };
    Ok(MacoptConfig {
        radius: cfg.r,
        disk_mode: cfg.disk_mode,
        kernel_rho: cfg.kernel_rho.spec()?,
        noise_var_rho: cfg.noise_var_rho,
        beta_sqrt_rho: cfg.beta_rho,
        eps_rho: cfg.eps_rho(),
        max_rounds: cfg.max_rounds,
        sampler,
    })
}

pub fn safemac_config(cfg: &ExperimentConfig, env: &EnvironmentTruth) -> Result<SafemacConfig> {
    Ok(SafemacConfig {
        coverage: macopt_config(cfg)?,
        kernel_q: cfg.kernel_q.spec()?,
        noise_var_q: cfg.noise_var_q,
        beta_sqrt_q: cfg.beta_q,
        eps_q: cfg.eps_q(),
        lipschitz: cfg.lipschitz.unwrap_or(env.lipschitz_q),
        heuristic: Heuristic::InverseDistance,
    })
}

/// Runs the configured algorithm to completion.
pub fn run_algorithm(cfg: &ExperimentConfig, env: &EnvironmentTruth, seed: u64) -> Result<RunOutcome> {
    let out = match cfg.algorithm {
        Algorithm::Macopt | Algorithm::MacoptH | Algorithm::Ucb => macopt_run(env, &macopt_config(cfg)?, seed)?,
        Algorithm::Safemac => safemac_run(env, &safemac_config(cfg, env)?, seed)?,
        Algorithm::Passivemac => passivemac_run(env, &safemac_config(cfg, env)?, seed)?,
        Algorithm::TwoStage => two_stage_run(env, &safemac_config(cfg, env)?, seed)?,
    };
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    TimedOut,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub agent: usize,
    pub at: LocationId,
    pub kind: FieldKind,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub phase: Phase,
    pub placements: Vec<LocationId>,
    pub goals: Vec<Option<LocationId>>,
    pub sum_max_width: f64,
    pub observations: Vec<ObservationRecord>,
    pub batches: Vec<Vec<usize>>,
    /// Per-agent `|S^p|`, empty for unconstrained algorithms.
    pub pessimistic_sizes: Vec<usize>,
    pub optimistic_sizes: Vec<usize>,
    pub recommendation: Vec<LocationId>,
    /// Algorithm's own estimate of the recommendation's value.
    pub recommendation_value: f64,
    /// True normalized coverage of the recommendation.
    pub normalized_coverage: Option<f64>,
    /// Cumulative counts after this round's measurements.
    pub samples_rho: usize,
    pub samples_q: usize,
}

/// Persisted outcome of one (config, seed) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub instance_hash: String,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub status: RunStatus,
    pub error: Option<String>,
    pub converged: bool,
    /// Round at which the stopping rule fired, absent when the cap hit first.
    pub convergence_round: Option<usize>,
    pub rounds: usize,
    pub samples_rho: usize,
    pub samples_q: usize,
    pub samples_total: usize,
    /// Measurements or recommendations at truly unsafe cells.
    pub safety_violations: usize,
    /// Measurements or recommendations outside the certified set.
    pub certified_set_violations: usize,
    pub recommendation: Vec<LocationId>,
    /// `F(X; ρ; R̄_0)`.
    pub final_coverage: Option<f64>,
    pub final_coverage_normalized: Option<f64>,
    /// `|R̄_0|` of the seeds.
    pub reachable_cells: Option<usize>,
    pub rounds_log: Vec<RoundRecord>,
}

impl RunRecord {
    fn empty(cfg: &ExperimentConfig, seed: u64, status: RunStatus, error: Option<String>) -> Self {
        Self {
            config_hash: cfg.hash(),
            instance_hash: cfg.instance_hash(),
            seed,
            algorithm: cfg.algorithm,
            status,
            error,
            converged: false,
            convergence_round: None,
            rounds: 0,
            samples_rho: 0,
            samples_q: 0,
            samples_total: 0,
            safety_violations: 0,
            certified_set_violations: 0,
            recommendation: Vec::new(),
            final_coverage: None,
            final_coverage_normalized: None,
            reachable_cells: None,
            rounds_log: Vec::new(),
        }
    }

    pub fn file_name(&self) -> String {
        format!("run_{}_{}.json", self.config_hash, self.seed)
    }

    /// Writes the record as a single JSON line.
    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join(self.file_name());
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("{} is not a run record", path.display()))
    }
}

/// Condenses an outcome; `region` is `R̄_0` of the seeds.
pub fn summarize(cfg: &ExperimentConfig, env: &EnvironmentTruth, seed: u64, out: &RunOutcome, region: &CellSet) -> RunRecord {
    let (r, mode) = (cfg.r, cfg.disk_mode);
    let mut rec = RunRecord::empty(cfg, seed, RunStatus::Completed, None);
    let mut samples_rho = 0;
    let mut samples_q = 0;
    rec.rounds_log = out
        .history
        .iter()
        .map(|log| {
            for o in &log.observations {
                match o.kind {
                    FieldKind::Density => samples_rho += 1,
                    FieldKind::Constraint => samples_q += 1,
                }
            }
            RoundRecord {
                round: log.round,
                phase: log.phase,
                placements: log.placements.clone(),
                goals: log.goals.clone(),
                sum_max_width: log.sum_max_width,
                observations: log
                    .observations
                    .iter()
                    .map(|o| ObservationRecord { agent: o.agent, at: o.at, kind: o.kind, value: o.value })
                    .collect(),
                batches: log.batches.clone(),
                pessimistic_sizes: log.pessimistic.iter().map(CellSet::len).collect(),
                optimistic_sizes: log.optimistic.iter().map(CellSet::len).collect(),
                recommendation: log.recommendation.clone(),
                recommendation_value: log.recommendation_value,
                normalized_coverage: normalized_coverage(env, &log.recommendation, r, mode, region),
                samples_rho,
                samples_q,
            }
        })
        .collect();
    rec.converged = out.converged;
    rec.convergence_round = out.converged.then_some(out.rounds);
    rec.rounds = out.rounds;
    rec.samples_rho = out.samples_rho;
    rec.samples_q = out.samples_q;
    rec.samples_total = out.samples_rho + out.samples_q;
    rec.safety_violations = out.audit.unsafe_count();
    rec.certified_set_violations = out.audit.violations.iter().filter(|v| v.outside_certified_set).count();
    rec.recommendation = out.recommendation.clone();
    rec.final_coverage = Some(coverage_within(&env.domain, env.density.values(), &out.recommendation, r, mode, region));
    rec.final_coverage_normalized = normalized_coverage(env, &out.recommendation, r, mode, region);
    rec.reachable_cells = Some(region.len());
    rec
}

/// Runs one seed and returns its record. Failures inside the algorithm are
/// recorded, not propagated; a run over the wall-clock cap is recorded as
/// timed out and its worker is left to finish under the round cap.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> RunRecord {
    let job = {
        let cfg = cfg.clone();
        move || -> Result<RunRecord> {
            let env = build_environment(&cfg, seed)?;
            let region = reachable_region(&env)?;
            let out = run_algorithm(&cfg, &env, seed)?;
            Ok(summarize(&cfg, &env, seed, &out, &region))
        }
    };
    let result = match cfg.wall_clock_cap_s {
        None => job(),
        Some(cap) => {
            let (tx, rx) = mpsc::channel();
            std::thread::spawn(move || {
                let _ = tx.send(job());
            });
            match rx.recv_timeout(Duration::from_secs_f64(cap)) {
                Ok(r) => r,
                Err(_) => return RunRecord::empty(cfg, seed, RunStatus::TimedOut, Some(format!("exceeded {cap} s"))),
            }
        }
    };
    result.unwrap_or_else(|e| RunRecord::empty(cfg, seed, RunStatus::Failed, Some(format!("{e:#}"))))
}
