//! Ground-truth environments: GP-sampled fields, obstacle maps and
//! file-loaded grids.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coverage::DensityField;
use crate::domain::{GridDomain, LocationId};
use crate::error::{Error, Result};
use crate::gp::KernelSpec;
use crate::linalg;
use crate::rng;
use crate::scalar::Scalar;

/// Multiplier applied to an empirical Lipschitz estimate.
pub const LIPSCHITZ_SAFETY_FACTOR: f64 = 1.1;
/// Lower floor for Lipschitz constants of (near-)constant constraints.
pub const MIN_LIPSCHITZ: f64 = 1e-6;
/// Seed draws attempted before giving up.
pub const SEED_ATTEMPTS: usize = 100;
/// Constraint value assigned to cells inside an obstacle.
pub const OBSTACLE_INTERIOR_Q: f64 = -1e-6;

/// Everything the simulator knows and the learner does not.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentTruth<T> {
    pub domain: GridDomain<T>,
    pub density: DensityField<T>,
    pub constraint: Vec<T>,
    pub seeds: Vec<LocationId>,
    /// Standard deviation of density observation noise.
    pub noise_rho: T,
    /// Standard deviation of constraint observation noise.
    pub noise_q: T,
    pub lipschitz_q: T,
}

impl<T: Scalar> EnvironmentTruth<T> {
    /// Checks shapes, finiteness, seed safety and the Lipschitz bound.
    pub fn validate(&self) -> Result<()> {
        let n = self.domain.len();
        if self.density.len() != n || self.constraint.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "domain has {n} cells, density {}, constraint {}",
                self.density.len(),
                self.constraint.len()
            )));
        }
        if let Some(i) = self.constraint.iter().position(|q| !q.is_finite()) {
            let (row, col) = self.domain.row_col(LocationId(i));
            return Err(Error::NonFiniteCell { file: "constraint".into(), row, col });
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("at least one seed is required".into()));
        }
        for &s in &self.seeds {
            self.domain.check(s)?;
            let q = self.constraint[s.0];
            if !(q >= T::zero()) {
                return Err(Error::UnsafeSeed { seed: s, value: q.to_f64_lossy() });
            }
        }
        if !(self.lipschitz_q > T::zero()) {
            return Err(Error::InvalidParameter(format!("Lipschitz constant must be positive, got {}", self.lipschitz_q)));
        }
        Ok(())
    }

    pub fn is_safe(&self, v: LocationId) -> bool {
        self.constraint[v.0] >= T::zero()
    }
}

/// Maximum of `|q(a) − q(b)| / d(a, b)` over all pairs of distinct cells.
pub fn empirical_lipschitz<T: Scalar>(domain: &GridDomain<T>, q: &[T]) -> T {
    let mut best = T::zero();
    for a in domain.ids() {
        for b in domain.ids().skip(a.0 + 1) {
            let g = (q[a.0] - q[b.0]).abs() / domain.distance(a, b);
            if g > best {
                best = g;
            }
        }
    }
    best
}

/// Maximum gradient over grid edges only.
pub fn edge_lipschitz<T: Scalar>(domain: &GridDomain<T>, q: &[T]) -> T {
    let mut best = T::zero();
    for a in domain.ids() {
        for b in domain.neighbors(a).filter(|b| b.0 > a.0) {
            let g = (q[a.0] - q[b.0]).abs() / domain.distance(a, b);
            if g > best {
                best = g;
            }
        }
    }
    best
}

/// Empirical Lipschitz constant inflated by [`LIPSCHITZ_SAFETY_FACTOR`].
pub fn lipschitz_bound<T: Scalar>(domain: &GridDomain<T>, q: &[T]) -> T {
    (empirical_lipschitz(domain, q) * T::lit(LIPSCHITZ_SAFETY_FACTOR)).max(T::lit(MIN_LIPSCHITZ))
}

/// Exact joint prior draws over every domain cell.
#[derive(Clone, Debug)]
pub struct GpSampler<T> {
    n: usize,
    factor: Vec<T>,
}

impl<T: Scalar> GpSampler<T> {
    pub fn new(domain: &GridDomain<T>, kernel: &KernelSpec<T>) -> Result<Self> {
        kernel.validate()?;
        let ids: Vec<LocationId> = domain.ids().collect();
        let gram = kernel.gram(domain, &ids);
        let (factor, _) = linalg::cholesky_with_jitter(&gram, ids.len())?;
        Ok(Self { n: ids.len(), factor })
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<T> {
        let z: Vec<T> = (0..self.n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
        (0..self.n)
            .map(|i| self.factor[i * self.n..i * self.n + i + 1].iter().zip(&z).fold(T::zero(), |a, (&l, &x)| a + l * x))
            .collect()
    }
}

/// How a raw GP draw is made non-negative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positivity {
    /// Subtract the minimum.
    #[default]
    Shift,
    /// Replace negative values by zero.
    Clamp,
}

pub fn make_non_negative<T: Scalar>(raw: &[T], how: Positivity) -> DensityField<T> {
    match how {
        Positivity::Shift => {
            let m = raw.iter().copied().fold(T::infinity(), T::min);
            DensityField::clamped(&raw.iter().map(|&v| v - m).collect::<Vec<_>>())
        }
        Positivity::Clamp => DensityField::clamped(raw),
    }
}

/// Draws `n` distinct seeds uniformly among cells with `q ≥ margin`.
pub fn sample_seeds<T: Scalar>(q: &[T], n: usize, margin: T, rng: &mut ChaCha8Rng) -> Result<Vec<LocationId>> {
    let eligible: Vec<usize> = (0..q.len()).filter(|&i| q[i] >= margin).collect();
    if eligible.is_empty() {
        return Err(Error::NoSafeSeed { margin: margin.to_f64_lossy(), attempts: SEED_ATTEMPTS });
    }
    let mut seeds: Vec<LocationId> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut attempts = 0;
        loop {
            let pick = LocationId(eligible[rng.gen_range(0..eligible.len())]);
            attempts += 1;
            if !seeds.contains(&pick) || eligible.len() < n {
                seeds.push(pick);
                break;
            }
            if attempts >= SEED_ATTEMPTS {
                return Err(Error::NoSafeSeed { margin: margin.to_f64_lossy(), attempts });
            }
        }
    }
    Ok(seeds)
}

/// Parameters shared by the generated environments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenerationParams<T> {
    pub n_agents: usize,
    pub noise_rho: T,
    pub noise_q: T,
    /// Minimum true constraint value at a seed.
    pub seed_margin: T,
    pub positivity: Positivity,
}

/// Density and constraint both drawn from zero-mean GP priors.
pub fn sample_gp_environment<T: Scalar>(
    domain: &GridDomain<T>,
    rho: &GpSampler<T>,
    q: &GpSampler<T>,
    params: &GenerationParams<T>,
    seed: u64,
) -> Result<EnvironmentTruth<T>> {
    let density = make_non_negative(&rho.sample(&mut rng::stream(seed, "rho", 0)), params.positivity);
    let constraint = q.sample(&mut rng::stream(seed, "q", 0));
    let seeds = sample_seeds(&constraint, params.n_agents, params.seed_margin, &mut rng::stream(seed, "seeds", 0))?;
    let env = EnvironmentTruth {
        domain: domain.clone(),
        density,
        lipschitz_q: lipschitz_bound(domain, &constraint),
        constraint,
        seeds,
        noise_rho: params.noise_rho,
        noise_q: params.noise_q,
    };
    env.validate()?;
    Ok(env)
}

/// Axis-aligned block in length units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    /// Bottom-left corner.
    pub x0: f64,
    pub y0: f64,
    /// Top-right corner.
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    /// Euclidean distance from a point to the rectangle, 0 inside.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        let dx = (self.x0 - x).max(0.0).max(x - self.x1);
        let dy = (self.y0 - y).max(0.0).max(y - self.y1);
        dx.hypot(dy)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub blocks: Vec<Rect>,
}

impl ObstacleSpec {
    pub fn validate<T: Scalar>(&self, domain: &GridDomain<T>) -> Result<()> {
        let xmax = domain.width() as f64 * domain.spacing().to_f64_lossy();
        let ymax = domain.height() as f64 * domain.spacing().to_f64_lossy();
        for (i, b) in self.blocks.iter().enumerate() {
            let ok = b.x0 >= 0.0 && b.y0 >= 0.0 && b.x0 <= b.x1 && b.y0 <= b.y1 && b.x1 <= xmax && b.y1 <= ymax;
            if !ok {
                return Err(Error::InvalidParameter(format!("obstacle {i} ({b:?}) is outside the domain or inverted")));
            }
        }
        Ok(())
    }

    /// Distance from a cell center to the nearest block (infinite without blocks).
    pub fn nearest_distance<T: Scalar>(&self, domain: &GridDomain<T>, v: LocationId) -> f64 {
        let (x, y) = domain.coords(v);
        let (x, y) = (x.to_f64_lossy(), y.to_f64_lossy());
        self.blocks.iter().map(|b| b.distance(x, y)).fold(f64::INFINITY, f64::min)
    }

    /// `1 / (1 + exp(−1.5 d)) − 0.5`, with interior cells pushed to
    /// [`OBSTACLE_INTERIOR_Q`] so collisions are strictly unsafe.
    pub fn constraint<T: Scalar>(&self, domain: &GridDomain<T>) -> Vec<T> {
        domain
            .ids()
            .map(|v| {
                let d = self.nearest_distance(domain, v);
                if d == 0.0 {
                    T::lit(OBSTACLE_INTERIOR_Q)
                } else {
                    T::lit(obstacle_q(d))
                }
            })
            .collect()
    }

    /// Random blocks with sides drawn from `side` (length units).
    pub fn random<T: Scalar>(domain: &GridDomain<T>, count: usize, side: (f64, f64), rng: &mut ChaCha8Rng) -> Self {
        let xmax = domain.width() as f64 * domain.spacing().to_f64_lossy();
        let ymax = domain.height() as f64 * domain.spacing().to_f64_lossy();
        let blocks = (0..count)
            .map(|_| {
                let w = rng.gen_range(side.0..=side.1).min(xmax);
                let h = rng.gen_range(side.0..=side.1).min(ymax);
                let x0 = rng.gen_range(0.0..=(xmax - w));
                let y0 = rng.gen_range(0.0..=(ymax - h));
                Rect { x0, y0, x1: x0 + w, y1: y0 + h }
            })
            .collect();
        Self { blocks }
    }
}

/// Constraint value at obstacle distance `d`.
pub fn obstacle_q(d: f64) -> f64 {
    1.0 / (1.0 + (-1.5 * d).exp()) - 0.5
}

/// GP-sampled density over a map of block obstacles.
pub fn obstacle_environment<T: Scalar>(
    domain: &GridDomain<T>,
    spec: &ObstacleSpec,
    rho: &GpSampler<T>,
    params: &GenerationParams<T>,
    seed: u64,
) -> Result<EnvironmentTruth<T>> {
    spec.validate(domain)?;
    let constraint = spec.constraint(domain);
    if constraint.iter().all(|&q| q < T::zero()) {
        return Err(Error::NoFreeCell);
    }
    let density = make_non_negative(&rho.sample(&mut rng::stream(seed, "rho", 0)), params.positivity);
    let seeds = sample_seeds(&constraint, params.n_agents, params.seed_margin, &mut rng::stream(seed, "seeds", 0))?;
    let env = EnvironmentTruth {
        domain: domain.clone(),
        density,
        lipschitz_q: lipschitz_bound(domain, &constraint),
        constraint,
        seeds,
        noise_rho: params.noise_rho,
        noise_q: params.noise_q,
    };
    env.validate()?;
    Ok(env)
}

/// Sidecar accompanying a pair of grid files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentMeta {
    pub spacing: f64,
    /// `(row, col)` pairs.
    pub seeds: Vec<(usize, usize)>,
    #[serde(default)]
    pub noise_rho_sd: Option<f64>,
    #[serde(default)]
    pub noise_q_sd: Option<f64>,
    /// Computed from the constraint grid when absent.
    #[serde(default)]
    pub lipschitz_q: Option<f64>,
    /// Clamp negative densities to zero instead of rejecting them.
    #[serde(default)]
    pub clamp_density: bool,
}

fn read_grid(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { file: file.clone(), message: e.to_string() })?;
        let mut row = Vec::with_capacity(rec.len());
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                file: file.clone(),
                message: format!("row {r}, column {c}: '{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteCell { file: file.clone(), row: r, col: c });
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn shape(rows: &[Vec<f64>], file: &Path) -> Result<(usize, usize)> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if h == 0 || w == 0 || rows.iter().any(|r| r.len() != w) {
        return Err(Error::ShapeMismatch(format!("{} is not a non-empty rectangular grid", file.display())));
    }
    Ok((w, h))
}

/// Loads density and constraint grids plus their JSON sidecar.
///
/// Grids are comma-separated, one line per row, row 0 first.
pub fn load_environment<T: Scalar>(density_path: &Path, constraint_path: &Path, meta_path: &Path) -> Result<EnvironmentTruth<T>> {
    let rho = read_grid(density_path)?;
    let q = read_grid(constraint_path)?;
    let (w, h) = shape(&rho, density_path)?;
    if shape(&q, constraint_path)? != (w, h) {
        return Err(Error::ShapeMismatch(format!(
            "{} and {} differ in shape",
            density_path.display(),
            constraint_path.display()
        )));
    }
    let meta_text = fs::read_to_string(meta_path)?;
    let meta: EnvironmentMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::Parse { file: meta_path.display().to_string(), message: e.to_string() })?;
    let domain = GridDomain::new(w, h, T::lit(meta.spacing))?;
    let mut density = Vec::with_capacity(w * h);
    for (r, row) in rho.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v < 0.0 && !meta.clamp_density {
                return Err(Error::NegativeDensity { row: r, col: c, value: v });
            }
            density.push(T::lit(v.max(0.0)));
        }
    }
    let constraint: Vec<T> = q.iter().flatten().map(|&v| T::lit(v)).collect();
    let mut seeds = Vec::with_capacity(meta.seeds.len());
    for &(r, c) in &meta.seeds {
        if r >= h || c >= w {
            return Err(Error::OutOfDomain(LocationId(r * w + c)));
        }
        seeds.push(domain.id_at(r, c));
    }
    let lipschitz_q = match meta.lipschitz_q {
        Some(l) => T::lit(l),
        None => lipschitz_bound(&domain, &constraint),
    };
    let env = EnvironmentTruth {
        density: DensityField::new(density)?,
        constraint,
        seeds,
        noise_rho: T::lit(meta.noise_rho_sd.unwrap_or(1e-3f64.sqrt())),
        noise_q: T::lit(meta.noise_q_sd.unwrap_or(1e-3f64.sqrt())),
        lipschitz_q,
        domain,
    };
    env.validate()?;
    Ok(env)
}

fn write_grid<T: Scalar>(path: &Path, domain: &GridDomain<T>, values: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    for r in 0..domain.height() {
        // `{:?}` on f64 prints the shortest representation that parses back exactly.
        let row: Vec<String> = (0..domain.width()).map(|c| format!("{:?}", values[domain.id_at(r, c).0].to_f64_lossy())).collect();
        w.write_record(&row).map_err(|e| Error::Parse { file: path.display().to_string(), message: e.to_string() })?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the two grids and the sidecar.
pub fn save_environment<T: Scalar>(
    env: &EnvironmentTruth<T>,
    density_path: &Path,
    constraint_path: &Path,
    meta_path: &Path,
) -> Result<()> {
    write_grid(density_path, &env.domain, &env.density)?;
    write_grid(constraint_path, &env.domain, &env.constraint)?;
    let meta = EnvironmentMeta {
        spacing: env.domain.spacing().to_f64_lossy(),
        seeds: env.seeds.iter().map(|&s| env.domain.row_col(s)).collect(),
        noise_rho_sd: Some(env.noise_rho.to_f64_lossy()),
        noise_q_sd: Some(env.noise_q.to_f64_lossy()),
        lipschitz_q: Some(env.lipschitz_q.to_f64_lossy()),
        clamp_density: false,
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Parse {
        file: meta_path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(meta_path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize) -> GridDomain<f64> {
        GridDomain::new(w, w, 0.1).unwrap()
    }

    fn params() -> GenerationParams<f64> {
        GenerationParams { n_agents: 3, noise_rho: 0.03, noise_q: 0.03, seed_margin: 0.0, positivity: Positivity::Shift }
    }

    #[test]
    fn obstacle_formula() {
        assert_eq!(obstacle_q(0.0), 0.0);
        assert!((obstacle_q(1.0) - 0.3176).abs() < 1e-4);
        assert!((obstacle_q(50.0) - 0.5).abs() < 1e-12);
        let r = Rect { x0: 1.0, y0: 1.0, x1: 2.0, y1: 1.5 };
        assert_eq!(r.distance(1.5, 1.2), 0.0);
        assert!((r.distance(0.0, 0.0) - 2f64.sqrt()).abs() < 1e-12);
        assert!((r.distance(2.3, 1.2) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn obstacle_interiors_are_strictly_unsafe() {
        let d = grid(10);
        let spec = ObstacleSpec { blocks: vec![Rect { x0: 0.25, y0: 0.25, x1: 0.45, y1: 0.45 }] };
        let q: Vec<f64> = spec.constraint(&d);
        assert_eq!(q[d.id_at(3, 3).0], OBSTACLE_INTERIOR_Q);
        assert!(q[d.id_at(0, 0).0] > 0.0);
        assert!(q.iter().filter(|&&x| x < 0.0).count() == 4);
        let sampler = GpSampler::new(&d, &KernelSpec::matern52(2.0, 1.0).unwrap()).unwrap();
        let env = obstacle_environment(&d, &spec, &sampler, &params(), 1).unwrap();
        assert!(env.seeds.iter().all(|&s| env.is_safe(s)));
        assert!(env.lipschitz_q >= edge_lipschitz(&d, &env.constraint));
        let bad = ObstacleSpec { blocks: vec![Rect { x0: 0.0, y0: 0.0, x1: 1.0, y1: 1.0 }] };
        assert!(matches!(obstacle_environment(&d, &bad, &sampler, &params(), 1), Err(Error::NoFreeCell)));
    }

    #[test]
    fn gp_environment_is_deterministic_and_non_negative() {
        let d = grid(8);
        let s = GpSampler::new(&d, &KernelSpec::matern52(0.3, 1.0).unwrap()).unwrap();
        let a = sample_gp_environment(&d, &s, &s, &params(), 42).unwrap();
        let b = sample_gp_environment(&d, &s, &s, &params(), 42).unwrap();
        assert_eq!(a, b);
        assert!(a.density.iter().all(|&x| x >= 0.0));
        assert!(a.density.iter().any(|&x| x == 0.0));
        assert!(a.lipschitz_q >= edge_lipschitz(&d, &a.constraint));
        let c = sample_gp_environment(&d, &s, &s, &params(), 43).unwrap();
        assert_ne!(a.constraint, c.constraint);
    }

    #[test]
    fn sample_covariance_matches_kernel() {
        let d = GridDomain::new(6, 1, 0.1).unwrap();
        let k = KernelSpec::matern52(0.2, 1.0).unwrap();
        let s = GpSampler::new(&d, &k).unwrap();
        let mut r = rng::stream(9, "cov", 0);
        let m = 2000;
        let (a, b) = (LocationId(1), LocationId(3));
        let pairs: Vec<(f64, f64)> = (0..m).map(|_| {
            let f = s.sample(&mut r);
            (f[a.0], f[b.0])
        }).collect();
        let prod: Vec<f64> = pairs.iter().map(|(x, y)| x * y).collect();
        let mean = prod.iter().sum::<f64>() / m as f64;
        let var = prod.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let se = (var / m as f64).sqrt();
        assert!((mean - k.eval(d.distance(a, b))).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn long_lengthscale_fields_are_smooth() {
        let d = grid(30);
        let s = GpSampler::new(&d, &KernelSpec::matern52(2.0, 1.0).unwrap()).unwrap();
        let smooth = (0..20).filter(|&i| edge_lipschitz(&d, &s.sample(&mut rng::stream(i, "q", 0))) < 3.0).count();
        assert!(smooth >= 19);
    }

    #[test]
    fn file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = |n: &str| dir.path().join(n);
        let d = grid(6);
        let s = GpSampler::new(&d, &KernelSpec::matern52(0.3, 1.0).unwrap()).unwrap();
        let env = sample_gp_environment(&d, &s, &s, &params(), 5).unwrap();
        save_environment(&env, &p("rho.csv"), &p("q.csv"), &p("meta.json")).unwrap();
        let back: EnvironmentTruth<f64> = load_environment(&p("rho.csv"), &p("q.csv"), &p("meta.json")).unwrap();
        assert_eq!(back, env);

        fs::write(p("short.csv"), "1,2\n3,4\n").unwrap();
        assert!(matches!(load_environment::<f64>(&p("rho.csv"), &p("short.csv"), &p("meta.json")), Err(Error::ShapeMismatch(_))));
        fs::write(p("nan.csv"), "1,2\n3,NaN\n").unwrap();
        assert!(matches!(load_environment::<f64>(&p("nan.csv"), &p("nan.csv"), &p("meta.json")), Err(Error::NonFiniteCell { row: 1, col: 1, .. })));
        fs::write(p("neg.csv"), "1,-2\n3,4\n").unwrap();
        fs::write(p("ok.csv"), "1,2\n3,4\n").unwrap();
        fs::write(p("m2.json"), r#"{"spacing":0.1,"seeds":[[0,0]]}"#).unwrap();
        assert!(matches!(load_environment::<f64>(&p("neg.csv"), &p("ok.csv"), &p("m2.json")), Err(Error::NegativeDensity { .. })));
        fs::write(p("unsafe.csv"), "-1,2\n3,4\n").unwrap();
        assert!(matches!(load_environment::<f64>(&p("ok.csv"), &p("unsafe.csv"), &p("m2.json")), Err(Error::UnsafeSeed { .. })));
        fs::write(p("typo.json"), r#"{"spacing":0.1,"seeds":[[0,0]],"lipschitz":1}"#).unwrap();
        assert!(matches!(load_environment::<f64>(&p("ok.csv"), &p("ok.csv"), &p("typo.json")), Err(Error::Parse { .. })));
    }

    #[test]
    fn gorilla_sized_grid_loads() {
        let dir = tempfile::tempdir().unwrap();
        let row = vec!["0.5"; 34].join(",");
        let grid_text = format!("{}\n", vec![row; 34].join("\n"));
        fs::write(dir.path().join("r.csv"), &grid_text).unwrap();
        fs::write(dir.path().join("q.csv"), &grid_text).unwrap();
        fs::write(dir.path().join("m.json"), r#"{"spacing":0.1,"seeds":[[3,4],[10,10],[20,5]]}"#).unwrap();
        let env: EnvironmentTruth<f64> =
            load_environment(&dir.path().join("r.csv"), &dir.path().join("q.csv"), &dir.path().join("m.json")).unwrap();
        assert_eq!(env.domain.len(), 1156);
        assert_eq!(env.lipschitz_q, MIN_LIPSCHITZ);
    }

    #[test]
    fn seed_sampling_respects_margin() {
        let q = vec![0.0, 0.5, 0.1, 0.6];
        let s = sample_seeds(&q, 2, 0.4, &mut rng::stream(1, "seeds", 0)).unwrap();
        assert!(s.iter().all(|v| q[v.0] >= 0.4));
        assert_ne!(s[0], s[1]);
        assert!(matches!(sample_seeds(&q, 1, 0.9, &mut rng::stream(1, "seeds", 0)), Err(Error::NoSafeSeed { .. })));
    }
}
