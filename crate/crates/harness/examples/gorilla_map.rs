//! Writes the synthetic 34×34 nest-density map shipped under `data/gorilla/`.
//!
//! Usage: `cargo run --release -p safecover-harness --example gorilla_map -- data/gorilla`
//!
//! Nest sites are scattered around a few group centers and the density is a
//! Gaussian kernel density estimate over them, scaled to a maximum of 1.
//! The constraint is a GP-sampled cloud field offset so that part of the map
//! is unsafe; `constraint_safe.csv` is the same field shifted to be positive
//! everywhere.

use std::path::PathBuf;

use anyhow::Result;
use rand_distr::{Distribution, Normal};
use safecover::environment::{save_environment, GpSampler};
use safecover::{rng, DensityField, EnvironmentTruth, GridDomain, KernelSpec};

const SIDE: usize = 34;
const SPACING: f64 = 0.1;

/// Nesting groups: `(x, y, nests, spread)` in length units.
const GROUPS: [(f64, f64, usize, f64); 6] = [
    (0.7, 2.6, 30, 0.25),
    (2.7, 2.8, 18, 0.3),
    (2.4, 0.7, 14, 0.4),
    (1.6, 1.5, 8, 0.6),
    (0.5, 0.6, 6, 0.2),
    (3.0, 1.6, 6, 0.25),
];

/// Bandwidth of the density estimate.
const BANDWIDTH: f64 = 0.12;

/// Unit-variance cloud field; cells with `cloud > CLOUD_LIMIT` are unsafe.
const CLOUD_LIMIT: f64 = 0.3;

fn main() -> Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/gorilla".into()));
    std::fs::create_dir_all(&out)?;
    let d = GridDomain::new(SIDE, SIDE, SPACING)?;
    let mut rng = rng::stream(0, "nests", 0);
    let mut nests = Vec::new();
    for &(gx, gy, count, spread) in &GROUPS {
        let around = Normal::new(0.0, spread)?;
        for _ in 0..count {
            nests.push((gx + around.sample(&mut rng), gy + around.sample(&mut rng)));
        }
    }
    let raw: Vec<f64> = d
        .ids()
        .map(|v| {
            let (x, y) = d.coords(v);
            let h2 = 2.0 * BANDWIDTH * BANDWIDTH;
            nests.iter().map(|&(nx, ny)| (-((x - nx).powi(2) + (y - ny).powi(2)) / h2).exp()).sum()
        })
        .collect();
    let top = raw.iter().copied().fold(0.0, f64::max);
    let density = DensityField::new(raw.iter().map(|r| r / top).collect())?;

    let cloud = GpSampler::new(&d, &KernelSpec::matern52(0.8, 1.0)?)?.sample(&mut rng::stream(0, "clouds", 0));
    let q: Vec<f64> = cloud.iter().map(|c| CLOUD_LIMIT - c).collect();
    let low = q.iter().copied().fold(f64::INFINITY, f64::min);
    let q_safe: Vec<f64> = q.iter().map(|v| v - low + 0.05).collect();

    // Three seeds in the safe part of both maps, spread across the map.
    let seeds = [(4, 4), (17, 17), (29, 29)]
        .into_iter()
        .map(|(r, c)| nearest_safe(&d, &q, r, c))
        .collect::<Vec<_>>();
    let build = |constraint: Vec<f64>| EnvironmentTruth {
        density: density.clone(),
        lipschitz_q: safecover::environment::lipschitz_bound(&d, &constraint),
        constraint,
        seeds: seeds.clone(),
        noise_rho: 1e-3f64.sqrt(),
        noise_q: 1e-3f64.sqrt(),
        domain: d.clone(),
    };
    let rainy = build(q);
    rainy.validate()?;
    save_environment(&rainy, &out.join("density.csv"), &out.join("constraint.csv"), &out.join("meta.json"))?;
    let sunny = build(q_safe);
    sunny.validate()?;
    save_environment(&sunny, &out.join("density.csv"), &out.join("constraint_safe.csv"), &out.join("meta_safe.json"))?;
    let safe = rainy.constraint.iter().filter(|&&v| v >= 0.0).count();
    println!("wrote {} ({safe} of {} cells safe on the rainy map)", out.display(), d.len());
    Ok(())
}

fn nearest_safe(d: &GridDomain, q: &[f64], row: usize, col: usize) -> safecover::LocationId {
    let target = d.id_at(row, col);
    d.ids()
        .filter(|v| q[v.0] >= 0.2)
        .min_by_key(|&v| d.hop_distance(v, target))
        .expect("some cell is comfortably safe")
}
