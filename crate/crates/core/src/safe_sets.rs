//! Lipschitz safety certification, ergodic expansion fixed points,
//! per-agent safe sets and agent batching.

use serde::{Deserialize, Serialize};

use crate::domain::{CellSet, GridDomain, LocationId};
use crate::error::{Error, Result};
use crate::gp::ConfidenceBounds;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyParams<T> {
    /// `L_q`, function units per length unit.
    pub lipschitz: T,
    /// Margin applied by the optimistic operator.
    pub eps_q: T,
}

impl<T: Scalar> SafetyParams<T> {
    pub fn new(lipschitz: T, eps_q: T) -> Result<Self> {
        if !(lipschitz > T::zero()) || !lipschitz.is_finite() {
            return Err(Error::InvalidParameter(format!("Lipschitz constant must be positive, got {lipschitz}")));
        }
        if !(eps_q >= T::zero()) || !eps_q.is_finite() {
            return Err(Error::InvalidParameter(format!("eps_q must be non-negative, got {eps_q}")));
        }
        Ok(Self { lipschitz, eps_q })
    }
}

/// Which confidence bound drives a certification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// Lower bound, no margin.
    Pessimistic,
    /// Upper bound minus `eps_q`.
    Optimistic,
}

/// A per-location value with a margin: `z` certifies `v` when
/// `value(z) − margin − L·d(v, z) ≥ 0`.
#[derive(Clone, Copy, Debug)]
pub struct Certifier<'a, T> {
    pub values: &'a [T],
    pub margin: T,
    pub lipschitz: T,
}

impl<'a, T: Scalar> Certifier<'a, T> {
    pub fn from_bounds(bounds: &'a ConfidenceBounds<T>, kind: OperatorKind, params: &SafetyParams<T>) -> Self {
        match kind {
            OperatorKind::Pessimistic => Self { values: &bounds.lower, margin: T::zero(), lipschitz: params.lipschitz },
            OperatorKind::Optimistic => Self { values: &bounds.upper, margin: params.eps_q, lipschitz: params.lipschitz },
        }
    }

    /// Calls `f` on every cell certified by `z`. Inclusive at equality.
    pub fn for_each_certified(&self, domain: &GridDomain<T>, z: LocationId, mut f: impl FnMut(LocationId)) {
        let slack = self.values[z.0] - self.margin;
        if !(slack >= T::zero()) {
            return;
        }
        let (zr, zc) = domain.row_col(z);
        // Cells farther than `reach` steps along either axis cannot qualify.
        let steps = (slack / (self.lipschitz * domain.spacing())).floor();
        let reach = steps.to_usize().map_or(usize::MAX, |s| s.saturating_add(1));
        let r0 = zr.saturating_sub(reach);
        let r1 = zr.saturating_add(reach).min(domain.height() - 1);
        let c0 = zc.saturating_sub(reach);
        let c1 = zc.saturating_add(reach).min(domain.width() - 1);
        for row in r0..=r1 {
            for col in c0..=c1 {
                let v = domain.id_at(row, col);
                if slack - self.lipschitz * domain.distance(v, z) >= T::zero() {
                    f(v);
                }
            }
        }
    }

    /// `{v | ∃ z ∈ base: value(z) − margin − L·d(v, z) ≥ 0}`.
    pub fn operator(&self, domain: &GridDomain<T>, base: &CellSet) -> CellSet {
        let mut out = domain.empty_set();
        for z in base.iter() {
            self.for_each_certified(domain, z, |v| {
                out.insert(v);
            });
        }
        out
    }

    /// Least fixed point of `S ↦ S ∪ {v ∈ op(S) | v connected to S through op(S)}`
    /// started from `seed`.
    pub fn ergodic_expand(&self, domain: &GridDomain<T>, seed: &CellSet) -> CellSet {
        let mut reached = seed.clone();
        let mut certified = domain.empty_set();
        let mut queue: Vec<LocationId> = seed.to_vec();
        let mut processed = 0usize;
        while let Some(z) = queue.pop() {
            processed += 1;
            assert!(processed <= domain.len(), "expansion processed a cell twice");
            let mut fresh = Vec::new();
            self.for_each_certified(domain, z, |v| {
                if certified.insert(v) {
                    fresh.push(v);
                }
            });
            for v in fresh {
                if !reached.contains(v) && domain.neighbors(v).any(|nb| reached.contains(nb)) {
                    reached.insert(v);
                    queue.push(v);
                }
            }
            for nb in domain.neighbors(z) {
                if certified.contains(nb) && reached.insert(nb) {
                    queue.push(nb);
                }
            }
        }
        reached
    }
}

/// `p_t(base)` from the lower bounds.
pub fn pessimistic_operator<T: Scalar>(
    bounds: &ConfidenceBounds<T>,
    domain: &GridDomain<T>,
    base: &CellSet,
    params: &SafetyParams<T>,
) -> CellSet {
    Certifier::from_bounds(bounds, OperatorKind::Pessimistic, params).operator(domain, base)
}

/// `o_t(base)` from the upper bounds with the `eps_q` margin.
pub fn optimistic_operator<T: Scalar>(
    bounds: &ConfidenceBounds<T>,
    domain: &GridDomain<T>,
    base: &CellSet,
    params: &SafetyParams<T>,
) -> CellSet {
    Certifier::from_bounds(bounds, OperatorKind::Optimistic, params).operator(domain, base)
}

pub fn ergodic_expand<T: Scalar>(
    kind: OperatorKind,
    bounds: &ConfidenceBounds<T>,
    domain: &GridDomain<T>,
    seed: &CellSet,
    params: &SafetyParams<T>,
) -> CellSet {
    Certifier::from_bounds(bounds, kind, params).ergodic_expand(domain, seed)
}

/// Largest set safely reachable from `seed` under the true constraint with
/// margin `eps`.
pub fn true_reachable_set<T: Scalar>(
    q: &[T],
    domain: &GridDomain<T>,
    seed: &CellSet,
    eps: T,
    lipschitz: T,
) -> Result<CellSet> {
    if q.len() != domain.len() {
        return Err(Error::ShapeMismatch(format!("constraint has {} values for {} cells", q.len(), domain.len())));
    }
    for s in seed.iter() {
        if !(q[s.0] >= T::zero()) {
            return Err(Error::UnsafeSeed { seed: s, value: q[s.0].to_f64_lossy() });
        }
    }
    Ok(Certifier { values: q, margin: eps, lipschitz }.ergodic_expand(domain, seed))
}

/// One agent's safe sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentSets {
    pub seed: LocationId,
    pub pessimistic: CellSet,
    pub optimistic: CellSet,
    pub union: CellSet,
}

impl AgentSets {
    /// Cells still to be classified: optimistic but not pessimistic.
    pub fn unclassified(&self) -> CellSet {
        self.optimistic.difference(&self.pessimistic)
    }
}

/// Safe sets of every agent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SafeSetState {
    pub agents: Vec<AgentSets>,
}

impl SafeSetState {
    /// Pessimistic sets start at the seeds; optimistic sets start at the
    /// whole domain until the first update.
    pub fn new<T: Scalar>(domain: &GridDomain<T>, seeds: &[LocationId]) -> Result<Self> {
        let mut agents = Vec::with_capacity(seeds.len());
        for &s in seeds {
            domain.check(s)?;
            let p = CellSet::from_ids(domain.len(), [s]);
            agents.push(AgentSets { seed: s, pessimistic: p, optimistic: domain.full_set(), union: domain.full_set() });
        }
        Ok(Self { agents })
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// Expands every agent's sets from its previous pessimistic set.
    pub fn update<T: Scalar>(&mut self, bounds: &ConfidenceBounds<T>, domain: &GridDomain<T>, params: &SafetyParams<T>) {
        let pess = Certifier::from_bounds(bounds, OperatorKind::Pessimistic, params);
        let opt = Certifier::from_bounds(bounds, OperatorKind::Optimistic, params);
        for a in &mut self.agents {
            let p = pess.ergodic_expand(domain, &a.pessimistic);
            let o = opt.ergodic_expand(domain, &a.pessimistic);
            a.union = p.union(&o);
            a.pessimistic = p;
            a.optimistic = o;
        }
    }

    pub fn updated<T: Scalar>(&self, bounds: &ConfidenceBounds<T>, domain: &GridDomain<T>, params: &SafetyParams<T>) -> Self {
        let mut next = self.clone();
        next.update(bounds, domain, params);
        next
    }

    pub fn batches(&self, kind: BatchKind) -> Vec<Batch> {
        compute_batches(self, kind)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchKind {
    /// Group by intersecting union sets.
    Union,
    /// Group by intersecting pessimistic sets.
    Pessimistic,
}

/// Agents whose sets overlap, directly or transitively.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Increasing agent indices.
    pub agents: Vec<usize>,
    /// Union of the members' sets of the batching kind.
    pub region: CellSet,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Partitions agents by the transitive closure of set intersection.
/// Batches are ordered by their smallest agent index.
pub fn compute_batches(state: &SafeSetState, kind: BatchKind) -> Vec<Batch> {
    let n = state.agents.len();
    let set = |i: usize| match kind {
        BatchKind::Union => &state.agents[i].union,
        BatchKind::Pessimistic => &state.agents[i].pessimistic,
    };
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if set(i).intersects(set(j)) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut out: Vec<Batch> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        if slot[root] == usize::MAX {
            slot[root] = out.len();
            out.push(Batch { agents: Vec::new(), region: CellSet::empty(set(i).capacity()) });
        }
        let b = &mut out[slot[root]];
        b.agents.push(i);
        b.region.union_with(set(i));
    }
    out
}
