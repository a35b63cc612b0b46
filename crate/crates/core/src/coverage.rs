//! Disk-coverage objective, marginal gains, greedy placement and an
//! exhaustive oracle.
//!
//! `F(X) = Σ_{v ∈ ∪ D(x)} ρ(v) / |V|`. Sums always run over the covered
//! cells in increasing index order. With non-negative values and monotone
//! rounding this makes `F` monotone and `Δ(e | A)` antitone in `A` exactly,
//! not merely up to rounding.

use serde::{Deserialize, Serialize};

use crate::domain::{CellSet, DiskMode, GridDomain, LocationId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Exhaustive search refuses instances with more candidate tuples than this.
pub const BRUTE_FORCE_LIMIT: u128 = 10_000_000;

/// Non-negative per-location values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DensityField<T> {
    values: Vec<T>,
}

impl<T: Scalar> DensityField<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteObservation { at: LocationId(i), value: v.to_f64_lossy() });
            }
            if v < T::zero() {
                return Err(Error::InvalidParameter(format!("density at #{i} is negative ({v})")));
            }
        }
        Ok(Self { values })
    }

    /// Negative entries are replaced by zero.
    pub fn clamped(values: &[T]) -> Self {
        Self { values: values.iter().map(|&v| v.max(T::zero())).collect() }
    }

    pub fn uniform(n: usize, value: T) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl<T> std::ops::Deref for DensityField<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.values
    }
}

/// Agent placements with their disjointified covered regions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageAssignment<T> {
    pub agents: Vec<LocationId>,
    /// `D^{i−}`: cells of agent i's disk not covered by agents before it.
    pub effective_regions: Vec<Vec<LocationId>>,
    /// `F` of the placements for the field the assignment was built against.
    pub total_value: T,
    /// Agents whose effective region is empty.
    pub duplicates: Vec<bool>,
}

impl<T: Scalar> CoverageAssignment<T> {
    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn has_duplicates(&self) -> bool {
        self.duplicates.iter().any(|&d| d)
    }
}

/// Coverage geometry for one restriction set: the domain, disk radius and
/// a precomputed disk for every admissible center.
#[derive(Clone, Debug)]
pub struct CoverageProblem<'a, T> {
    domain: &'a GridDomain<T>,
    radius: usize,
    restrict: CellSet,
    mode: DiskMode,
    disks: Vec<Vec<LocationId>>,
}

impl<'a, T: Scalar> CoverageProblem<'a, T> {
    /// `restrict = None` means the whole domain.
    pub fn new(domain: &'a GridDomain<T>, radius: usize, restrict: Option<&CellSet>, mode: DiskMode) -> Result<Self> {
        let restrict = match restrict {
            Some(r) => {
                if r.capacity() != domain.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "restriction set has capacity {} for a domain of {}",
                        r.capacity(),
                        domain.len()
                    )));
                }
                r.clone()
            }
            None => domain.full_set(),
        };
        if restrict.is_empty() {
            return Err(Error::EmptyRestriction);
        }
        let full = restrict.len() == domain.len();
        let mut disks = vec![Vec::new(); domain.len()];
        for c in restrict.iter() {
            disks[c.0] = domain.disk_members(c, radius, (!full).then_some(&restrict), mode);
        }
        Ok(Self { domain, radius, restrict, mode, disks })
    }

    pub fn domain(&self) -> &GridDomain<T> {
        self.domain
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn restrict(&self) -> &CellSet {
        &self.restrict
    }

    pub fn mode(&self) -> DiskMode {
        self.mode
    }

    /// Admissible placements in index order.
    pub fn candidates(&self) -> impl Iterator<Item = LocationId> + '_ {
        self.restrict.iter()
    }

    pub fn check(&self, x: LocationId) -> Result<()> {
        self.domain.check(x)?;
        if self.restrict.contains(x) {
            Ok(())
        } else {
            Err(Error::OutsideRestriction(x))
        }
    }

    /// Disk of an admissible center, sorted by index.
    pub fn disk(&self, x: LocationId) -> Result<&[LocationId]> {
        self.check(x)?;
        Ok(&self.disks[x.0])
    }

    fn check_values(&self, values: &[T]) -> Result<()> {
        if values.len() != self.domain.len() {
            return Err(Error::ShapeMismatch(format!(
                "field has {} values for a domain of {}",
                values.len(),
                self.domain.len()
            )));
        }
        Ok(())
    }

    /// Union of the placements' disks.
    pub fn covered(&self, placements: &[LocationId]) -> Result<CellSet> {
        let mut c = self.domain.empty_set();
        for &x in placements {
            for &v in self.disk(x)? {
                c.insert(v);
            }
        }
        Ok(c)
    }

    fn normalize(&self, s: T) -> T {
        s / T::from_usize_lossy(self.domain.len())
    }

    fn sum_over(values: &[T], cells: &CellSet) -> T {
        cells.iter().fold(T::zero(), |acc, v| acc + values[v.0])
    }

    /// `F(X; values; restrict)`.
    pub fn coverage_value(&self, values: &[T], placements: &[LocationId]) -> Result<T> {
        self.check_values(values)?;
        let c = self.covered(placements)?;
        Ok(self.normalize(Self::sum_over(values, &c)))
    }

    /// `Δ(candidate | existing) = Σ_{v ∈ D(candidate) \ ∪D(existing)} value(v) / |V|`.
    pub fn marginal_gain(&self, values: &[T], existing: &[LocationId], candidate: LocationId) -> Result<T> {
        self.check_values(values)?;
        let c = self.covered(existing)?;
        let d = self.disk(candidate)?;
        Ok(self.normalize(Self::gain_raw(values, d, &c)))
    }

    fn gain_raw(values: &[T], disk: &[LocationId], covered: &CellSet) -> T {
        disk.iter().filter(|v| !covered.contains(**v)).fold(T::zero(), |acc, v| acc + values[v.0])
    }

    /// Builds the effective regions of fixed placements, in the given order.
    pub fn assignment(&self, values: &[T], placements: &[LocationId]) -> Result<CoverageAssignment<T>> {
        self.check_values(values)?;
        let mut covered = self.domain.empty_set();
        let mut regions = Vec::with_capacity(placements.len());
        for &x in placements {
            let region: Vec<LocationId> = self.disk(x)?.iter().copied().filter(|v| !covered.contains(*v)).collect();
            for &v in &region {
                covered.insert(v);
            }
            regions.push(region);
        }
        let duplicates = regions.iter().map(|r| r.is_empty()).collect();
        Ok(CoverageAssignment {
            agents: placements.to_vec(),
            effective_regions: regions,
            total_value: self.normalize(Self::sum_over(values, &covered)),
            duplicates,
        })
    }

    /// Sequential greedy: each agent takes the admissible center with the
    /// largest marginal gain, ties to the lowest index. Values may be
    /// negative (upper confidence bounds).
    pub fn greedy(&self, values: &[T], n_agents: usize) -> Result<CoverageAssignment<T>> {
        self.check_values(values)?;
        let mut covered = self.domain.empty_set();
        let mut placements = Vec::with_capacity(n_agents);
        for _ in 0..n_agents {
            let mut best: Option<(LocationId, T)> = None;
            for c in self.restrict.iter() {
                let g = Self::gain_raw(values, &self.disks[c.0], &covered);
                if best.map_or(true, |(_, b)| g > b) {
                    best = Some((c, g));
                }
            }
            let (x, _) = best.expect("restriction is non-empty");
            for &v in &self.disks[x.0] {
                covered.insert(v);
            }
            placements.push(x);
        }
        self.assignment(values, &placements)
    }

    /// Exact maximizer of `F` over unordered placements (repetition
    /// allowed), ties to the lexicographically first tuple.
    pub fn brute_force_optimal(&self, values: &[T], n_agents: usize) -> Result<CoverageAssignment<T>> {
        self.check_values(values)?;
        let cands: Vec<LocationId> = self.restrict.to_vec();
        let m = cands.len();
        let combos = (m as u128).checked_pow(n_agents as u32).unwrap_or(u128::MAX);
        if combos > BRUTE_FORCE_LIMIT {
            return Err(Error::InstanceTooLarge { combinations: combos as f64, limit: BRUTE_FORCE_LIMIT as f64 });
        }
        if n_agents == 0 {
            return self.assignment(values, &[]);
        }
        let mut idx = vec![0usize; n_agents];
        let mut best: Option<(Vec<usize>, T)> = None;
        let mut covered = self.domain.empty_set();
        loop {
            for &i in &idx {
                for &v in &self.disks[cands[i].0] {
                    covered.insert(v);
                }
            }
            let s = Self::sum_over(values, &covered);
            for &i in &idx {
                for &v in &self.disks[cands[i].0] {
                    covered.remove(v);
                }
            }
            if best.as_ref().map_or(true, |(_, b)| s > *b) {
                best = Some((idx.clone(), s));
            }
            // Next non-decreasing index tuple.
            let mut k = n_agents;
            loop {
                if k == 0 {
                    let (bi, _) = best.expect("at least one tuple");
                    let placements: Vec<LocationId> = bi.iter().map(|&i| cands[i]).collect();
                    return self.assignment(values, &placements);
                }
                k -= 1;
                if idx[k] + 1 < m {
                    let nv = idx[k] + 1;
                    for j in idx.iter_mut().skip(k) {
                        *j = nv;
                    }
                    break;
                }
            }
        }
    }
}

/// Per-agent argmax of `widths` over its effective region, ties to the
/// lowest index. Agents with an empty region get their own location.
pub fn uncertainty_goals<T: Scalar>(assignment: &CoverageAssignment<T>, widths: &[T]) -> Vec<LocationId> {
    assignment
        .agents
        .iter()
        .zip(&assignment.effective_regions)
        .map(|(&x, region)| argmax_by(region, |v| widths[v.0]).unwrap_or(x))
        .collect()
}

/// First element attaining the maximum key.
pub fn argmax_by<T: Scalar>(cells: &[LocationId], key: impl Fn(LocationId) -> T) -> Option<LocationId> {
    let mut best: Option<(LocationId, T)> = None;
    for &v in cells {
        let k = key(v);
        if best.map_or(true, |(_, b)| k > b) {
            best = Some((v, k));
        }
    }
    best.map(|(v, _)| v)
}

/// Output of greedy placement on upper bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct GreedyUcb<T> {
    pub assignment: CoverageAssignment<T>,
    pub goals: Vec<LocationId>,
    /// `Γ = Σ_i (upper − lower)(goal_i)`.
    pub sum_max_width: T,
}

/// Greedy placement on `upper`, then per-agent width-argmax goals.
pub fn greedy_ucb<T: Scalar>(
    problem: &CoverageProblem<'_, T>,
    upper: &[T],
    lower: &[T],
    n_agents: usize,
) -> Result<GreedyUcb<T>> {
    if lower.len() != upper.len() {
        return Err(Error::ShapeMismatch("upper and lower bounds differ in length".into()));
    }
    let assignment = problem.greedy(upper, n_agents)?;
    let widths: Vec<T> = upper.iter().zip(lower).map(|(&u, &l)| u - l).collect();
    let goals = uncertainty_goals(&assignment, &widths);
    let sum_max_width = goals.iter().map(|g| widths[g.0]).fold(T::zero(), |a, b| a + b);
    Ok(GreedyUcb { assignment, goals, sum_max_width })
}
