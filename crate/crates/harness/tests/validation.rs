//! Acceptance suite. Every criterion writes one `criterion N: PASS|FAIL`
//! line to the process's stderr file, which libtest's output capture does
//! not intercept.
//!
//! Criteria 5, 6 and 8 share one set of 50 full-scale obstacle runs; the
//! suite takes several minutes on a single core.

use std::io::Write;
use std::path::PathBuf;
use std::sync::OnceLock;

use rand::Rng;

use safecover::coverage::CoverageProblem;
use safecover::metrics::{coverage_within, reachable_region, OracleKind};
use safecover::safe_sets::true_reachable_set;
use safecover::{rng, CellSet, DiskMode, EnvironmentTruth, GpModel, GridDomain, KernelFamily, KernelSpec, LocationId};
use safecover::{DomainPosterior, RunOutcome};

use safecover_harness::config::{Algorithm, EnvironmentSource, ExperimentConfig, GridConfig, KernelConfig};
use safecover_harness::oracle::oracle_for;
use safecover_harness::runner::{build_environment, run_algorithm, summarize};
use safecover_harness::{run_seed, sweep, RunRecord, RunStatus};

// Pinned tolerances and thresholds.
const GP_ABS_TOL: f64 = 1e-8;
const GP_CONFIGS: usize = 50;
const SUBMODULAR_TRIPLES: usize = 10_000;
const GREEDY_INSTANCES: usize = 200;
const MACOPT_INSTANCES: usize = 50;
const MACOPT_REQUIRED: usize = 47;
const OBSTACLE_SEEDS: u64 = 50;
const SMALL_INSTANCES: usize = 30;
const SAFEMAC_REQUIRED: usize = 28;
const TIE_MARGIN: f64 = 0.03;
const PASSIVE_MARGIN: f64 = 0.05;
const UCB_MARGIN: f64 = 0.05;
const UCB_SEEDS: u64 = 20;

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {n}: {verdict} {detail}");
    // The std handles are captured per test; the device file is not.
    match std::fs::OpenOptions::new().append(true).open("/dev/stderr") {
        Ok(mut f) => {
            let _ = writeln!(f, "{line}");
        }
        Err(_) => eprintln!("{line}"),
    }
}

fn factor() -> f64 {
    1.0 - (-1.0f64).exp()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Dense Gauss-Jordan inverse with partial pivoting.
fn naive_inverse(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs())).unwrap();
        for k in 0..n {
            m.swap(col * n + k, p * n + k);
            inv.swap(col * n + k, p * n + k);
        }
        let d = m[col * n + col];
        for k in 0..n {
            m[col * n + k] /= d;
            inv[col * n + k] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r * n + col];
                if f != 0.0 {
                    for k in 0..n {
                        m[r * n + k] -= f * m[col * n + k];
                        inv[r * n + k] -= f * inv[col * n + k];
                    }
                }
            }
        }
    }
    inv
}

#[test]
fn criterion_01_gp_matches_dense_inverse() {
    let d = GridDomain::new(15, 15, 0.1).unwrap();
    let mut worst: f64 = 0.0;
    for c in 0..GP_CONFIGS as u64 {
        let mut g = rng::stream(c, "c1", 0);
        let family = if g.gen_bool(0.5) { KernelFamily::Matern52 } else { KernelFamily::Rbf };
        let kernel = KernelSpec::new(family, g.gen_range(0.1..1.5), g.gen_range(0.3..2.0)).unwrap();
        let noise = 10f64.powf(g.gen_range(-3.0..-1.0));
        let m = g.gen_range(1..=40);
        let obs: Vec<(LocationId, f64)> = (0..m).map(|_| (LocationId(g.gen_range(0..d.len())), g.gen_range(-2.0..2.0))).collect();
        let model = GpModel::with_observations(kernel, noise, &d, &obs).unwrap();
        let (mu, var) = model.posterior_all();
        let post = DomainPosterior::from_model(&model).unwrap();

        let mut k = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                k[i * m + j] = kernel.eval(d.distance(obs[i].0, obs[j].0)) + if i == j { noise } else { 0.0 };
            }
        }
        let kinv = naive_inverse(&k, m);
        for v in d.ids() {
            let kv: Vec<f64> = obs.iter().map(|&(o, _)| kernel.eval(d.distance(o, v))).collect();
            let w: Vec<f64> = (0..m).map(|i| (0..m).map(|j| kinv[i * m + j] * kv[j]).sum()).collect();
            let mean: f64 = w.iter().zip(&obs).map(|(a, (_, y))| a * y).sum();
            let variance = kernel.eval(0.0) - w.iter().zip(&kv).map(|(a, b)| a * b).sum::<f64>();
            for e in [mu[v.0] - mean, var[v.0] - variance, post.mean(v) - mean, post.variance(v) - variance] {
                worst = worst.max(e.abs());
            }
        }
    }
    let pass = worst <= GP_ABS_TOL;
    report(1, pass, &format!("max |error| {worst:.2e} over {GP_CONFIGS} configs (tol {GP_ABS_TOL:e})"));
    assert!(pass);
}

#[test]
fn criterion_02_submodular_and_monotone() {
    let d = GridDomain::new(10, 10, 0.1).unwrap();
    let mut g = rng::stream(0, "c2", 0);
    let mut violations = 0;
    for _ in 0..SUBMODULAR_TRIPLES {
        let values: Vec<f64> = (0..d.len()).map(|_| g.gen_range(0.0..1.0)).collect();
        let r = g.gen_range(1..=3);
        let mode = if g.gen_bool(0.5) { DiskMode::PathRestricted } else { DiskMode::PlainIntersection };
        let restrict = g.gen_bool(0.3).then(|| {
            let mut s = CellSet::from_ids(d.len(), d.ids().filter(|_| g.gen_bool(0.7)));
            s.insert(LocationId(0));
            s
        });
        let p = CoverageProblem::new(&d, r, restrict.as_ref(), mode).unwrap();
        let cands: Vec<LocationId> = p.candidates().collect();
        let size = g.gen_range(0..=5);
        let b: Vec<LocationId> = (0..size).map(|_| cands[g.gen_range(0..cands.len())]).collect();
        let a: Vec<LocationId> = b.iter().copied().filter(|_| g.gen_bool(0.5)).collect();
        let e = cands[g.gen_range(0..cands.len())];
        let diminishing = p.marginal_gain(&values, &a, e).unwrap() >= p.marginal_gain(&values, &b, e).unwrap();
        let monotone = p.coverage_value(&values, &a).unwrap() <= p.coverage_value(&values, &b).unwrap();
        violations += usize::from(!diminishing) + usize::from(!monotone);
    }
    let pass = violations == 0;
    report(2, pass, &format!("{violations} violations in {SUBMODULAR_TRIPLES} triples"));
    assert!(pass);
}

#[test]
fn criterion_03_greedy_guarantee() {
    let d = GridDomain::new(6, 6, 0.1).unwrap();
    let mut g = rng::stream(0, "c3", 0);
    let mut failures = 0;
    let mut worst_ratio = f64::INFINITY;
    for i in 0..GREEDY_INSTANCES {
        let values: Vec<f64> = (0..d.len()).map(|_| if g.gen_bool(0.2) { 0.0 } else { g.gen_range(0.0..1.0) }).collect();
        let r = 1 + i % 2;
        let p = CoverageProblem::new(&d, r, None, DiskMode::PathRestricted).unwrap();
        let greedy = p.greedy(&values, 2).unwrap().total_value;
        let best = p.brute_force_optimal(&values, 2).unwrap().total_value;
        if greedy < factor() * best {
            failures += 1;
        }
        if best > 0.0 {
            worst_ratio = worst_ratio.min(greedy / best);
        }
    }
    let pass = failures == 0;
    report(3, pass, &format!("{failures} failures in {GREEDY_INSTANCES} instances, worst greedy/opt {worst_ratio:.4}"));
    assert!(pass);
}

#[test]
fn criterion_04_macopt_near_optimal() {
    let cfg = ExperimentConfig {
        algorithm: Algorithm::Macopt,
        environment: EnvironmentSource::Gp {},
        n_agents: 2,
        grid: GridConfig { width: 12, height: 12, spacing: 0.1 },
        r: 3,
        eps_rho: Some(0.05 * KernelConfig::default().output_scale),
        seed_margin: 0.0,
        ..ExperimentConfig::default()
    };
    let eps = cfg.eps_rho();
    let mut passed = 0;
    let mut converged = 0;
    // Draws whose constraint sample admits no seed are skipped; MaCOpt ignores the constraint.
    let instances: Vec<(u64, EnvironmentTruth)> =
        (0..).filter_map(|s| build_environment(&cfg, s).ok().map(|e| (s, e))).take(MACOPT_INSTANCES).collect();
    let skipped = instances.last().unwrap().0 as usize + 1 - MACOPT_INSTANCES;
    for (seed, env) in instances {
        let out = run_algorithm(&cfg, &env, seed).unwrap();
        converged += usize::from(out.converged);
        let p = CoverageProblem::new(&env.domain, cfg.r, None, cfg.disk_mode).unwrap();
        let rho = env.density.values();
        let best = p.brute_force_optimal(rho, cfg.n_agents).unwrap().total_value;
        let got = p.coverage_value(rho, &out.recommendation).unwrap();
        passed += usize::from(got >= factor() * best - eps);
    }
    let pass = passed >= MACOPT_REQUIRED;
    report(4, pass, &format!("{passed}/{MACOPT_INSTANCES} runs within (1-1/e)F* - eps (need {MACOPT_REQUIRED}), {converged} converged, {skipped} draws skipped"));
    assert!(pass);
}

struct FullScale {
    /// One entry per seed: (SafeMaC, PassiveMaC, Two-Stage).
    records: Vec<[RunRecord; 3]>,
    unsafe_total: usize,
    sandwich_failures: usize,
    rounds_checked: usize,
}

fn obstacle_config(algorithm: Algorithm) -> ExperimentConfig {
    ExperimentConfig { algorithm, ..ExperimentConfig::default() }
}

/// Every round's pessimistic sets lie inside the agents' true `R̄_0`.
fn sandwich_failures(env: &EnvironmentTruth, lipschitz: f64, out: &RunOutcome) -> (usize, usize) {
    let n = env.domain.len();
    let own: Vec<CellSet> = env
        .seeds
        .iter()
        .map(|&s| true_reachable_set(&env.constraint, &env.domain, &CellSet::from_ids(n, [s]), 0.0, lipschitz).unwrap())
        .collect();
    let mut failures = 0;
    let mut checked = 0;
    for log in &out.history {
        for (i, p) in log.pessimistic.iter().enumerate() {
            checked += 1;
            failures += usize::from(!p.is_subset(&own[i]));
        }
    }
    (failures, checked)
}

fn full_scale() -> &'static FullScale {
    static CELL: OnceLock<FullScale> = OnceLock::new();
    CELL.get_or_init(|| {
        let algs = [Algorithm::Safemac, Algorithm::Passivemac, Algorithm::TwoStage];
        let mut records = Vec::new();
        let (mut unsafe_total, mut sandwich, mut checked) = (0, 0, 0);
        for seed in 0..OBSTACLE_SEEDS {
            let row = algs.map(|alg| {
                let cfg = obstacle_config(alg);
                let env = build_environment(&cfg, seed).unwrap();
                let region = reachable_region(&env).unwrap();
                let out = run_algorithm(&cfg, &env, seed).unwrap();
                unsafe_total += out.audit.unsafe_count();
                let (f, c) = sandwich_failures(&env, cfg.lipschitz.unwrap_or(env.lipschitz_q), &out);
                sandwich += f;
                checked += c;
                summarize(&cfg, &env, seed, &out, &region)
            });
            records.push(row);
        }
        FullScale { records, unsafe_total, sandwich_failures: sandwich, rounds_checked: checked }
    })
}

#[test]
fn criterion_05_safety() {
    let fs = full_scale();
    let safemac_unsafe: usize = fs.records.iter().map(|r| r[0].safety_violations).sum();
    let pass = safemac_unsafe == 0 && fs.unsafe_total == 0;
    report(
        5,
        pass,
        &format!(
            "{safemac_unsafe} unsafe SafeMaC measurements/recommendations in {OBSTACLE_SEEDS} runs ({} across all three constrained algorithms)",
            fs.unsafe_total
        ),
    );
    assert!(pass);
}

/// Small obstacle instances that brute force can solve exactly.
fn small_config(algorithm: Algorithm) -> ExperimentConfig {
    ExperimentConfig {
        algorithm,
        environment: EnvironmentSource::Obstacle { blocks: 2, block_side: (0.1, 0.3) },
        grid: GridConfig { width: 8, height: 8, spacing: 0.1 },
        r: 2,
        kernel_rho: KernelConfig { lengthscale: 0.5, ..KernelConfig::default() },
        kernel_q: KernelConfig { lengthscale: 0.5, ..KernelConfig::default() },
        seed_margin: 0.05,
        max_rounds: 300,
        ..ExperimentConfig::default()
    }
}

/// The first `SMALL_INSTANCES` seeds whose environment generates.
fn small_instances() -> &'static Vec<(u64, EnvironmentTruth)> {
    static CELL: OnceLock<Vec<(u64, EnvironmentTruth)>> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = small_config(Algorithm::Safemac);
        (0..).filter_map(|s| build_environment(&cfg, s).ok().map(|e| (s, e))).take(SMALL_INSTANCES).collect()
    })
}

#[test]
fn criterion_06_safe_set_sandwich() {
    let fs = full_scale();
    let mut outer_failures = 0;
    let mut converged = 0;
    for (seed, env) in small_instances() {
        for alg in [Algorithm::Safemac, Algorithm::TwoStage] {
            let cfg = small_config(alg);
            let out = run_algorithm(&cfg, env, *seed).unwrap();
            let sets = out.final_sets.as_ref().unwrap();
            let n = env.domain.len();
            for (i, &s) in env.seeds.iter().enumerate() {
                let r_eps = true_reachable_set(&env.constraint, &env.domain, &CellSet::from_ids(n, [s]), cfg.eps_q(), env.lipschitz_q).unwrap();
                outer_failures += usize::from(!r_eps.is_subset(&sets.agents[i].optimistic));
            }
            converged += usize::from(out.converged);
        }
    }
    let pass = fs.sandwich_failures == 0 && outer_failures == 0;
    report(
        6,
        pass,
        &format!(
            "S^p ⊆ R̄_0 failed {}/{} agent-rounds at 30×30; R̄_ε ⊆ S^o failed {outer_failures} times on {} final 8×8 SafeMaC/Two-Stage runs ({converged} converged)",
            fs.sandwich_failures,
            fs.rounds_checked,
            2 * SMALL_INSTANCES
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_safemac_near_optimal() {
    let cfg = small_config(Algorithm::Safemac);
    let eps = cfg.eps_rho();
    let mut passed = 0;
    let mut enumerable = true;
    let mut converged = 0;
    for (seed, env) in small_instances() {
        let out = run_algorithm(&cfg, env, *seed).unwrap();
        converged += usize::from(out.converged);
        let oracle = oracle_for(env, cfg.r, cfg.disk_mode, env.lipschitz_q, cfg.eps_q(), String::new(), *seed).unwrap();
        enumerable &= oracle.batches.iter().all(|b| b.kind == OracleKind::BruteForce);
        let region = reachable_region(env).unwrap();
        let got = coverage_within(&env.domain, env.density.values(), &out.recommendation, cfg.r, cfg.disk_mode, &region);
        passed += usize::from(got >= factor() * oracle.constrained_value - eps);
    }
    let pass = enumerable && passed >= SAFEMAC_REQUIRED;
    report(
        7,
        pass,
        &format!("{passed}/{SMALL_INSTANCES} runs within (1-1/e)ΣF* - eps (need {SAFEMAC_REQUIRED}), {converged} converged, exact oracle: {enumerable}"),
    );
    assert!(pass);
}

#[test]
fn criterion_08_baseline_orderings() {
    let fs = full_scale();
    let col = |k: usize, f: &dyn Fn(&RunRecord) -> f64| median(fs.records.iter().map(|r| f(&r[k])).collect());
    let cov = |r: &RunRecord| r.final_coverage_normalized.unwrap_or(0.0);
    let samples = |r: &RunRecord| r.samples_total as f64;
    let (c_safe, c_passive, c_two) = (col(0, &cov), col(1, &cov), col(2, &cov));
    let (n_safe, n_two) = (col(0, &samples), col(2, &samples));
    let tie = (c_safe - c_two).abs() <= TIE_MARGIN;
    let above = c_safe - c_passive >= PASSIVE_MARGIN && c_two - c_passive >= PASSIVE_MARGIN;
    let cheaper = n_safe < n_two;
    let pass = tie && above && cheaper;
    report(
        8,
        pass,
        &format!(
            "median coverage SafeMaC {c_safe:.3} Two-Stage {c_two:.3} PassiveMaC {c_passive:.3} \
             (tie within {TIE_MARGIN}: {tie}, both ≥ passive + {PASSIVE_MARGIN}: {above}); \
             median samples SafeMaC {n_safe} < Two-Stage {n_two}: {cheaper}"
        ),
    );
    assert!(pass);
}

fn gorilla_config(algorithm: Algorithm) -> ExperimentConfig {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/gorilla");
    ExperimentConfig {
        algorithm,
        environment: EnvironmentSource::File {
            density: data.join("density.csv"),
            constraint: data.join("constraint_safe.csv"),
            meta: data.join("meta_safe.json"),
            random_seeds: true,
        },
        grid: GridConfig { width: 34, height: 34, spacing: 0.1 },
        kernel_rho: KernelConfig { lengthscale: 1.0, ..KernelConfig::default() },
        noise_var_q: 7e-3,
        ..ExperimentConfig::default()
    }
}

#[test]
fn criterion_09_macopt_beats_ucb() {
    let seeds: Vec<u64> = (0..UCB_SEEDS).collect();
    let med = |alg| {
        let recs = sweep(&gorilla_config(alg), &seeds, false);
        assert!(recs.iter().all(|r| r.status == RunStatus::Completed));
        median(recs.iter().map(|r| r.final_coverage_normalized.unwrap()).collect())
    };
    let (m, u) = (med(Algorithm::Macopt), med(Algorithm::Ucb));
    let pass = m - u >= UCB_MARGIN;
    report(9, pass, &format!("median normalized coverage MaCOpt {m:.3} vs UCB {u:.3} over {UCB_SEEDS} seeds (need gap ≥ {UCB_MARGIN})"));
    assert!(pass);
}

#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut identical = true;
    let cases = [(obstacle_config(Algorithm::Safemac), 3), (gorilla_config(Algorithm::Macopt), 1), (small_config(Algorithm::TwoStage), 2)];
    for (i, (cfg, seed)) in cases.iter().enumerate() {
        let a = run_seed(cfg, *seed).write_to(&dir.path().join(format!("a{i}"))).unwrap();
        let b = run_seed(cfg, *seed).write_to(&dir.path().join(format!("b{i}"))).unwrap();
        identical &= std::fs::read(a).unwrap() == std::fs::read(b).unwrap();
    }
    let cfg = small_config(Algorithm::Safemac);
    let seeds: Vec<u64> = (0..6).collect();
    let parallel_matches = sweep(&cfg, &seeds, true) == sweep(&cfg, &seeds, false);
    let pass = identical && parallel_matches;
    report(10, pass, &format!("re-runs byte-identical: {identical}; parallel sweep equals serial: {parallel_matches}"));
    assert!(pass);
}
