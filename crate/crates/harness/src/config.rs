//! Experiment configuration: JSON with defaults for every field and unknown
//! keys rejected.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use safecover::{DiskMode, KernelFamily};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Uncertainty sampling in each agent's covered region.
    Macopt,
    /// Hallucinated uncertainty sampling.
    MacoptH,
    /// Measures at the disk centers.
    Ucb,
    #[default]
    Safemac,
    Passivemac,
    TwoStage,
}

impl Algorithm {
    pub fn is_constrained(self) -> bool {
        matches!(self, Self::Safemac | Self::Passivemac | Self::TwoStage)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Macopt => "macopt",
            Self::MacoptH => "macopt_h",
            Self::Ucb => "ucb",
            Self::Safemac => "safemac",
            Self::Passivemac => "passivemac",
            Self::TwoStage => "two_stage",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSource {
    /// Density and constraint sampled from the kernel priors.
    Gp {},
    /// Random rectangular obstacles with a GP-sampled density.
    Obstacle {
        #[serde(default = "default_blocks")]
        blocks: usize,
        /// Range of block side lengths in length units.
        #[serde(default = "default_block_side")]
        block_side: (f64, f64),
    },
    /// Grids loaded from disk.
    File {
        density: PathBuf,
        constraint: PathBuf,
        meta: PathBuf,
        /// Draw `n_agents` seeds per run instead of using the sidecar's.
        #[serde(default)]
        random_seeds: bool,
    },
}

impl Default for EnvironmentSource {
    fn default() -> Self {
        Self::Obstacle { blocks: default_blocks(), block_side: default_block_side() }
    }
}

fn default_blocks() -> usize {
    4
}

fn default_block_side() -> (f64, f64) {
    (0.3, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub spacing: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { width: 30, height: 30, spacing: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    #[serde(default = "default_family")]
    pub family: KernelFamily,
    #[serde(default = "default_lengthscale")]
    pub lengthscale: f64,
    #[serde(default = "default_output_scale")]
    pub output_scale: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { family: default_family(), lengthscale: default_lengthscale(), output_scale: default_output_scale() }
    }
}

fn default_family() -> KernelFamily {
    KernelFamily::Matern52
}

fn default_lengthscale() -> f64 {
    2.0
}

fn default_output_scale() -> f64 {
    1.0
}

impl KernelConfig {
    pub fn spec(&self) -> Result<safecover::KernelSpec> {
        Ok(safecover::KernelSpec::new(self.family, self.lengthscale, self.output_scale)?)
    }
}

/// Seeds as an explicit list or an inclusive range string `"a..b"`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range(String),
}

impl Default for SeedSpec {
    fn default() -> Self {
        Self::Range("0..49".into())
    }
}

impl SeedSpec {
    pub fn expand(&self) -> Result<Vec<u64>> {
        match self {
            Self::List(v) => Ok(v.clone()),
            Self::Range(s) => parse_seeds(s),
        }
    }
}

/// Parses `"a..b"` or `"a..=b"` (both inclusive) or a comma-separated list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let a: u64 = a.trim().parse().with_context(|| format!("bad range start in '{s}'"))?;
        let b: u64 = b.trim().parse().with_context(|| format!("bad range end in '{s}'"))?;
        if b < a {
            bail!("empty seed range '{s}'");
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|t| t.trim().parse::<u64>().with_context(|| format!("bad seed '{t}'"))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub environment: EnvironmentSource,
    pub n_agents: usize,
    pub grid: GridConfig,
    /// Sensing radius in graph hops.
    pub r: usize,
    pub disk_mode: DiskMode,
    pub kernel_rho: KernelConfig,
    pub kernel_q: KernelConfig,
    /// Observation noise variances, used both to simulate and to model.
    pub noise_var_rho: f64,
    pub noise_var_q: f64,
    /// Confidence multipliers on the posterior standard deviation.
    pub beta_rho: f64,
    pub beta_q: f64,
    /// Defaults to `0.1 · n_agents · kernel_rho.output_scale`.
    pub eps_rho: Option<f64>,
    /// Defaults to `0.1 · kernel_q.output_scale`.
    pub eps_q: Option<f64>,
    /// Defaults to the environment's Lipschitz bound.
    pub lipschitz: Option<f64>,
    /// Minimum true constraint value at a generated seed.
    pub seed_margin: f64,
    pub max_rounds: usize,
    /// Runs exceeding this many seconds are recorded as timed out.
    pub wall_clock_cap_s: Option<f64>,
    pub seeds: SeedSpec,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::default(),
            environment: EnvironmentSource::default(),
            n_agents: 3,
            grid: GridConfig::default(),
            r: 5,
            disk_mode: DiskMode::PathRestricted,
            kernel_rho: KernelConfig::default(),
            kernel_q: KernelConfig::default(),
            noise_var_rho: 1e-3,
            noise_var_q: 1e-3,
            beta_rho: 3.0,
            beta_q: 3.0,
            eps_rho: None,
            eps_q: None,
            lipschitz: None,
            seed_margin: 0.2,
            max_rounds: 300,
            wall_clock_cap_s: None,
            seeds: SeedSpec::default(),
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("invalid experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            bail!("n_agents must be at least 1");
        }
        if self.grid.width == 0 || self.grid.height == 0 || !(self.grid.spacing > 0.0) {
            bail!("grid must have positive width, height and spacing");
        }
        for (name, v) in [("noise_var_rho", self.noise_var_rho), ("noise_var_q", self.noise_var_q)] {
            if !(v > 0.0) || !v.is_finite() {
                bail!("{name} must be positive and finite, got {v}");
            }
        }
        for (name, v) in [("beta_rho", self.beta_rho), ("beta_q", self.beta_q)] {
            if !(v >= 0.0) || !v.is_finite() {
                bail!("{name} must be non-negative and finite, got {v}");
            }
        }
        for (name, v) in [("eps_rho", self.eps_rho), ("eps_q", self.eps_q)] {
            if let Some(v) = v {
                if !(v >= 0.0) {
                    bail!("{name} must be non-negative, got {v}");
                }
            }
        }
        if let Some(l) = self.lipschitz {
            if !(l > 0.0) || !l.is_finite() {
                bail!("lipschitz must be positive and finite, got {l}");
            }
        }
        if self.max_rounds == 0 {
            bail!("max_rounds must be at least 1");
        }
        if let Some(c) = self.wall_clock_cap_s {
            if !(c > 0.0) {
                bail!("wall_clock_cap_s must be positive, got {c}");
            }
        }
        if let EnvironmentSource::Obstacle { block_side: (a, b), .. } = self.environment {
            if !(a > 0.0 && a <= b) {
                bail!("block_side must satisfy 0 < min <= max, got ({a}, {b})");
            }
        }
        self.kernel_rho.spec()?;
        self.kernel_q.spec()?;
        self.seeds.expand()?;
        Ok(())
    }

    pub fn eps_rho(&self) -> f64 {
        self.eps_rho.unwrap_or(0.1 * self.n_agents as f64 * self.kernel_rho.output_scale)
    }

    pub fn eps_q(&self) -> f64 {
        self.eps_q.unwrap_or(0.1 * self.kernel_q.output_scale)
    }

    /// Hex SHA-256 prefix of the canonical JSON of every field except
    /// `seeds` and `output_dir`.
    pub fn hash(&self) -> String {
        self.hash_without(&["seeds", "output_dir"])
    }

    /// Hash of the fields that determine the environment of a seed, shared
    /// by all algorithms run on the same instances.
    pub fn instance_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let map = v.as_object_mut().expect("config is an object");
        let keep = ["environment", "n_agents", "grid", "kernel_rho", "kernel_q", "noise_var_rho", "noise_var_q", "seed_margin"];
        map.retain(|k, _| keep.contains(&k.as_str()));
        digest(&v)
    }

    fn hash_without(&self, drop: &[&str]) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let map = v.as_object_mut().expect("config is an object");
        for k in drop {
            map.remove(*k);
        }
        digest(&v)
    }
}

// serde_json's default map is ordered by key, so this is canonical.
fn digest(v: &serde_json::Value) -> String {
    let text = serde_json::to_string(v).expect("value serializes");
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}
