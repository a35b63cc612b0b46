//! Regret and coverage accounting against oracle quantities. Every function
//! here is a pure fold over a run history and the ground truth.

use serde::{Deserialize, Serialize};

use crate::coverage::{CoverageAssignment, CoverageProblem, BRUTE_FORCE_LIMIT};
use crate::domain::{CellSet, DiskMode, GridDomain, LocationId};
use crate::environment::EnvironmentTruth;
use crate::error::{Error, Result};
use crate::macopt::{FieldKind, RoundLog};
use crate::safe_sets::true_reachable_set;
use crate::scalar::Scalar;

/// Accounting for one history entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord<T> {
    pub round: usize,
    /// `(1 − 1/e)·F(X*) − F(X_t)`.
    pub simple_actual_regret: T,
    /// `Σ_i [max_x Δ(x | X^{1:i−1}) − Δ(x^i | X^{1:i−1})]`.
    pub per_agent_regret: T,
    pub cumulative_actual_regret: T,
    pub cumulative_per_agent_regret: T,
    /// `F(X_t)` under the true density on the evaluation sets.
    pub coverage_true: T,
    /// Density samples taken up to and including this entry.
    pub samples_rho: usize,
    pub samples_q: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// Exhaustive optimum.
    BruteForce,
    /// Greedy on the true density, used when enumeration is too large.
    Greedy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Oracle<T> {
    pub kind: OracleKind,
    pub assignment: CoverageAssignment<T>,
}

/// Number of multisets of size `k` drawn from `n` items, saturating.
fn multisets(n: usize, k: usize) -> u128 {
    let mut c: u128 = 1;
    for i in 0..k as u128 {
        c = c.saturating_mul(n as u128 + i) / (i + 1);
    }
    c
}

/// Best placement of `n_agents` on `values`: exhaustive when the instance is
/// enumerable, greedy otherwise.
pub fn optimum<T: Scalar>(problem: &CoverageProblem<'_, T>, values: &[T], n_agents: usize) -> Result<Oracle<T>> {
    if multisets(problem.candidates().count(), n_agents) <= BRUTE_FORCE_LIMIT {
        Ok(Oracle { kind: OracleKind::BruteForce, assignment: problem.brute_force_optimal(values, n_agents)? })
    } else {
        Ok(Oracle { kind: OracleKind::Greedy, assignment: problem.greedy(values, n_agents)? })
    }
}

/// `Σ_i [max_x Δ(x | X^{1:i−1}) − Δ(x^i | X^{1:i−1})]` in agent order.
pub fn per_agent_regret<T: Scalar>(problem: &CoverageProblem<'_, T>, values: &[T], placements: &[LocationId]) -> Result<T> {
    let mut covered = problem.domain().empty_set();
    let mut total = T::zero();
    for &x in placements {
        let gain = |c: LocationId, covered: &CellSet| -> Result<T> {
            let mut g = T::zero();
            for &v in problem.disk(c)? {
                if !covered.contains(v) {
                    g = g + values[v.0];
                }
            }
            Ok(g)
        };
        let mut best = T::zero();
        for c in problem.candidates() {
            best = best.max(gain(c, &covered)?);
        }
        total = total + (best - gain(x, &covered)?);
        for &v in problem.disk(x)? {
            covered.insert(v);
        }
    }
    Ok(total / T::lit(problem.domain().len() as f64))
}

fn sample_counts<T>(log: &RoundLog<T>, rho: &mut usize, q: &mut usize) {
    for o in &log.observations {
        match o.kind {
            FieldKind::Density => *rho += 1,
            FieldKind::Constraint => *q += 1,
        }
    }
}

fn factor<T: Scalar>() -> T {
    T::one() - (-T::one()).exp()
}

/// Regret of the placements of every history entry against a domain-wide
/// optimum value `opt_value`.
pub fn unconstrained_regret<T: Scalar>(
    history: &[RoundLog<T>],
    env: &EnvironmentTruth<T>,
    radius: usize,
    mode: DiskMode,
    opt_value: T,
) -> Result<Vec<RegretRecord<T>>> {
    let problem = CoverageProblem::new(&env.domain, radius, None, mode)?;
    let rho = env.density.values();
    let mut out: Vec<RegretRecord<T>> = Vec::with_capacity(history.len());
    let (mut srho, mut sq) = (0, 0);
    for log in history {
        sample_counts(log, &mut srho, &mut sq);
        let f = problem.coverage_value(rho, &log.placements)?;
        let r = factor::<T>() * opt_value - f;
        let pa = per_agent_regret(&problem, rho, &log.placements)?;
        out.push(record(out.last(), log.round, r, pa, f, srho, sq));
    }
    Ok(out)
}

fn record<T: Scalar>(prev: Option<&RegretRecord<T>>, round: usize, r: T, pa: T, f: T, srho: usize, sq: usize) -> RegretRecord<T> {
    let (ca, cp) = prev.map_or((T::zero(), T::zero()), |p| (p.cumulative_actual_regret, p.cumulative_per_agent_regret));
    RegretRecord {
        round,
        simple_actual_regret: r,
        per_agent_regret: pa,
        cumulative_actual_regret: ca + r,
        cumulative_per_agent_regret: cp + pa,
        coverage_true: f,
        samples_rho: srho,
        samples_q: sq,
    }
}

/// Oracle value for one group of agents on its reachable set.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchOptimum<T> {
    /// Increasing agent indices.
    pub agents: Vec<usize>,
    pub value: T,
}

/// Regret per history entry against per-batch reachable optima. Each
/// entry's gains are measured within its logged batches and restrictions.
pub fn constrained_regret<T: Scalar>(
    history: &[RoundLog<T>],
    env: &EnvironmentTruth<T>,
    radius: usize,
    mode: DiskMode,
    reachable_opt: &[BatchOptimum<T>],
) -> Result<Vec<RegretRecord<T>>> {
    let n = env.seeds.len();
    let mut seen = vec![false; n];
    for b in reachable_opt {
        for &i in &b.agents {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::BatchMismatch(format!("oracle batches do not partition {n} agents")));
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::BatchMismatch(format!("oracle batches do not cover all {n} agents")));
    }
    let opt = reachable_opt.iter().fold(T::zero(), |a, b| a + b.value);
    let rho = env.density.values();
    let mut out: Vec<RegretRecord<T>> = Vec::with_capacity(history.len());
    let (mut srho, mut sq) = (0, 0);
    for log in history {
        sample_counts(log, &mut srho, &mut sq);
        if log.placements.len() != n || log.batches.iter().map(Vec::len).sum::<usize>() != n {
            return Err(Error::BatchMismatch(format!("round {} does not place {n} agents in batches", log.round)));
        }
        let (mut f, mut pa) = (T::zero(), T::zero());
        for b in &log.batches {
            let restrict = log.restrictions.get(b[0]).filter(|r| r.capacity() > 0);
            let problem = CoverageProblem::new(&env.domain, radius, restrict, mode)?;
            let xs: Vec<LocationId> = b.iter().map(|&i| log.placements[i]).collect();
            f = f + problem.coverage_value(rho, &xs)?;
            pa = pa + per_agent_regret(&problem, rho, &xs)?;
        }
        out.push(record(out.last(), log.round, factor::<T>() * opt - f, pa, f, srho, sq));
    }
    Ok(out)
}

/// Whether `simple_actual_regret ≤ per_agent_regret + tol` on every record.
pub fn regret_bound_holds<T: Scalar>(records: &[RegretRecord<T>], tol: T) -> bool {
    records.iter().all(|r| r.simple_actual_regret <= r.per_agent_regret + tol)
}

/// `R̄_0` of the seeds: cells safely reachable under the true constraint.
pub fn reachable_region<T: Scalar>(env: &EnvironmentTruth<T>) -> Result<CellSet> {
    let seeds = CellSet::from_ids(env.domain.len(), env.seeds.iter().copied());
    true_reachable_set(&env.constraint, &env.domain, &seeds, T::zero(), env.lipschitz_q)
}

/// `F(X; ρ; region)` with path-restricted disks; placements outside the
/// region cover nothing.
pub fn coverage_within<T: Scalar>(
    domain: &GridDomain<T>,
    values: &[T],
    placements: &[LocationId],
    radius: usize,
    mode: DiskMode,
    region: &CellSet,
) -> T {
    let mut covered = domain.empty_set();
    for &x in placements {
        if region.contains(x) {
            for v in domain.disk_members(x, radius, Some(region), mode) {
                covered.insert(v);
            }
        }
    }
    let sum = covered.iter().fold(T::zero(), |a, v| a + values[v.0]);
    sum / T::lit(domain.len() as f64)
}

/// `F(X; ρ; R̄_0) / (Σ_{R̄_0} ρ / |V|)`; `None` when the reachable mass is zero.
pub fn normalized_coverage<T: Scalar>(
    env: &EnvironmentTruth<T>,
    placements: &[LocationId],
    radius: usize,
    mode: DiskMode,
    region: &CellSet,
) -> Option<T> {
    let rho = env.density.values();
    let mass = region.iter().fold(T::zero(), |a, v| a + rho[v.0]) / T::lit(env.domain.len() as f64);
    if !(mass > T::zero()) {
        return None;
    }
    Some(coverage_within(&env.domain, rho, placements, radius, mode, region) / mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::DensityField;
    use crate::macopt::{empty_log, Observation, Phase};
    use proptest::prelude::*;

    fn env(w: usize, h: usize, rho: Vec<f64>, q: Vec<f64>, seeds: Vec<LocationId>) -> EnvironmentTruth<f64> {
        EnvironmentTruth {
            domain: GridDomain::new(w, h, 0.1).unwrap(),
            density: DensityField::new(rho).unwrap(),
            constraint: q,
            seeds,
            noise_rho: 0.03,
            noise_q: 0.03,
            lipschitz_q: 1.0,
        }
    }

    fn log(round: usize, placements: Vec<LocationId>, n_rho: usize) -> RoundLog<f64> {
        let mut l = empty_log();
        l.round = round;
        l.phase = Phase::Coverage;
        l.batches = vec![(0..placements.len()).collect()];
        l.restrictions = vec![CellSet::empty(0); placements.len()];
        l.observations = (0..n_rho).map(|i| Observation { agent: i, at: LocationId(0), kind: FieldKind::Density, value: 0.0 }).collect();
        l.placements = placements;
        l
    }

    fn field(n: usize, seed: u64) -> Vec<f64> {
        (0..n).map(|i| ((i as u64 * 2654435761 + seed * 97) % 1000) as f64 / 1000.0).collect()
    }

    #[test]
    fn optimal_placements_have_negative_regret() {
        let e = env(6, 6, field(36, 1), vec![1.0; 36], vec![LocationId(0), LocationId(1)]);
        let p = CoverageProblem::new(&e.domain, 1, None, DiskMode::PathRestricted).unwrap();
        let opt = optimum(&p, e.density.values(), 2).unwrap();
        assert_eq!(opt.kind, OracleKind::BruteForce);
        let f = opt.assignment.total_value;
        let h: Vec<_> = (0..3).map(|t| log(t, opt.assignment.agents.clone(), 2)).collect();
        let r = unconstrained_regret(&h, &e, 1, DiskMode::PathRestricted, f).unwrap();
        let expected = -(-1f64).exp() * f;
        for (t, rec) in r.iter().enumerate() {
            assert!((rec.simple_actual_regret - expected).abs() < 1e-15);
            assert!((rec.cumulative_actual_regret - expected * (t + 1) as f64).abs() < 1e-14);
            assert_eq!(rec.samples_rho, 2 * (t + 1));
        }
    }

    #[test]
    fn zero_density_has_zero_regret() {
        let e = env(5, 5, vec![0.0; 25], vec![1.0; 25], vec![LocationId(3)]);
        let h = vec![log(0, vec![LocationId(7)], 1), log(1, vec![LocationId(12)], 1)];
        for rec in unconstrained_regret(&h, &e, 2, DiskMode::PathRestricted, 0.0).unwrap() {
            assert_eq!(rec.simple_actual_regret, 0.0);
            assert_eq!(rec.per_agent_regret, 0.0);
            assert_eq!(rec.cumulative_actual_regret, 0.0);
        }
    }

    #[test]
    fn large_instances_fall_back_to_greedy() {
        let d = GridDomain::new(40, 40, 0.1).unwrap();
        let p = CoverageProblem::new(&d, 1, None, DiskMode::PathRestricted).unwrap();
        let o = optimum(&p, &vec![1.0; 1600], 3).unwrap();
        assert_eq!(o.kind, OracleKind::Greedy);
    }

    #[test]
    fn constrained_matches_unconstrained_when_all_safe() {
        let e = env(6, 6, field(36, 4), vec![1.0; 36], vec![LocationId(0), LocationId(20)]);
        let h: Vec<_> = (0..4).map(|t| log(t, vec![LocationId(t * 5), LocationId(35 - t)], 2)).collect();
        let a = unconstrained_regret(&h, &e, 1, DiskMode::PathRestricted, 0.3).unwrap();
        let b = constrained_regret(&h, &e, 1, DiskMode::PathRestricted, &[BatchOptimum { agents: vec![0, 1], value: 0.3 }]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_mismatch_is_reported() {
        let e = env(4, 4, vec![1.0; 16], vec![1.0; 16], vec![LocationId(0), LocationId(15)]);
        let h = vec![log(0, vec![LocationId(0), LocationId(15)], 0)];
        let bad = [BatchOptimum { agents: vec![0], value: 0.1 }];
        assert!(matches!(constrained_regret(&h, &e, 1, DiskMode::PathRestricted, &bad), Err(Error::BatchMismatch(_))));
        let dup = [BatchOptimum { agents: vec![0, 0, 1], value: 0.1 }];
        assert!(matches!(constrained_regret(&h, &e, 1, DiskMode::PathRestricted, &dup), Err(Error::BatchMismatch(_))));
    }

    #[test]
    fn disconnected_batches_add_up() {
        // Two pockets separated by an unsafe column.
        let mut q = vec![0.15; 49];
        for r in 0..7 {
            q[r * 7 + 2] = 0.05;
            q[r * 7 + 3] = -1.0;
            q[r * 7 + 4] = 0.05;
        }
        let e = env(7, 7, field(49, 9), q, vec![LocationId(0), LocationId(6)]);
        let whole = reachable_region(&e).unwrap();
        let left = true_reachable_set(&e.constraint, &e.domain, &CellSet::from_ids(49, [LocationId(0)]), 0.0, 1.0).unwrap();
        let right = true_reachable_set(&e.constraint, &e.domain, &CellSet::from_ids(49, [LocationId(6)]), 0.0, 1.0).unwrap();
        assert!(!left.intersects(&right));
        let rho = e.density.values();
        let xs = [LocationId(8), LocationId(12)];
        let joint = coverage_within(&e.domain, rho, &xs, 2, DiskMode::PathRestricted, &whole);
        let split = coverage_within(&e.domain, rho, &xs[..1], 2, DiskMode::PathRestricted, &left)
            + coverage_within(&e.domain, rho, &xs[1..], 2, DiskMode::PathRestricted, &right);
        assert!((joint - split).abs() < 1e-15);
        let mut l = log(0, xs.to_vec(), 0);
        l.batches = vec![vec![0], vec![1]];
        l.restrictions = vec![left.clone(), right.clone()];
        let r = constrained_regret(&[l], &e, 2, DiskMode::PathRestricted, &[
            BatchOptimum { agents: vec![0], value: 0.0 },
            BatchOptimum { agents: vec![1], value: 0.0 },
        ])
        .unwrap();
        assert!((r[0].coverage_true - joint).abs() < 1e-15);
    }

    #[test]
    fn normalized_coverage_endpoints() {
        let e = env(5, 5, field(25, 2), vec![1.0; 25], vec![LocationId(12)]);
        let region = reachable_region(&e).unwrap();
        assert_eq!(region.len(), 25);
        let full = normalized_coverage(&e, &[LocationId(12)], 4, DiskMode::PathRestricted, &region).unwrap();
        assert!((full - 1.0).abs() < 1e-12);
        assert_eq!(normalized_coverage(&e, &[], 4, DiskMode::PathRestricted, &region), Some(0.0));
        let z = env(5, 5, vec![0.0; 25], vec![1.0; 25], vec![LocationId(12)]);
        assert_eq!(normalized_coverage(&z, &[LocationId(12)], 1, DiskMode::PathRestricted, &region), None);
    }

    proptest! {
        #[test]
        fn normalized_coverage_is_monotone(xs in prop::collection::vec(0usize..64, 1..5), s in 0u64..1000) {
            let e = env(8, 8, field(64, s), vec![1.0; 64], vec![LocationId(0)]);
            let region = reachable_region(&e).unwrap();
            let ids: Vec<LocationId> = xs.iter().map(|&i| LocationId(i)).collect();
            let mut prev = 0.0;
            for k in 0..=ids.len() {
                let c = normalized_coverage(&e, &ids[..k], 1, DiskMode::PathRestricted, &region).unwrap();
                prop_assert!(c >= prev);
                prev = c;
            }
        }

        #[test]
        fn per_agent_regret_bounds_actual_regret(
            rounds in prop::collection::vec(prop::collection::vec(0usize..36, 2), 1..6),
            s in 0u64..1000,
        ) {
            let e = env(6, 6, field(36, s), vec![1.0; 36], vec![LocationId(0), LocationId(1)]);
            let p = CoverageProblem::new(&e.domain, 1, None, DiskMode::PathRestricted).unwrap();
            let opt = optimum(&p, e.density.values(), 2).unwrap().assignment.total_value;
            let h: Vec<_> = rounds.iter().enumerate()
                .map(|(t, xs)| log(t, xs.iter().map(|&i| LocationId(i)).collect(), t % 3))
                .collect();
            let r = unconstrained_regret(&h, &e, 1, DiskMode::PathRestricted, opt).unwrap();
            prop_assert!(regret_bound_holds(&r, 1e-12));
            let (mut ca, mut cp, mut n) = (0.0, 0.0, 0);
            for (rec, l) in r.iter().zip(&h) {
                ca += rec.simple_actual_regret;
                cp += rec.per_agent_regret;
                n += l.observations.len();
                prop_assert_eq!(rec.cumulative_actual_regret, ca);
                prop_assert_eq!(rec.cumulative_per_agent_regret, cp);
                prop_assert_eq!(rec.samples_rho, n);
                let f = p.coverage_value(e.density.values(), &l.placements).unwrap();
                prop_assert_eq!(rec.coverage_true, f);
            }
            prop_assert_eq!(unconstrained_regret(&h, &e, 1, DiskMode::PathRestricted, opt).unwrap(), r);
        }
    }
}
