//! Unconstrained coverage learning: greedy placement on upper bounds,
//! uncertainty sampling inside each agent's covered region, and the UCB
//! baseline that samples at disk centers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coverage::{argmax_by, CoverageProblem};
use crate::domain::{CellSet, DiskMode, GridDomain, LocationId};
use crate::environment::EnvironmentTruth;
use crate::error::{Error, Result};
use crate::gp::{DomainPosterior, FieldBelief, KernelSpec};
use crate::rng;
use crate::safe_sets::SafeSetState;
use crate::scalar::Scalar;

/// How each agent picks its density measurement site.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Largest confidence width in the agent's covered region.
    #[default]
    Uncertainty,
    /// Largest posterior deviation after conditioning on earlier agents' sites.
    Hallucinated,
    /// The agent's own placement.
    UcbCenter,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacoptConfig<T> {
    pub radius: usize,
    pub disk_mode: DiskMode,
    pub kernel_rho: KernelSpec<T>,
    /// Noise variance assumed by the density model.
    pub noise_var_rho: T,
    pub beta_sqrt_rho: T,
    pub eps_rho: T,
    pub max_rounds: usize,
    pub sampler: Sampler,
}

impl<T: Scalar> MacoptConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.kernel_rho.validate()?;
        if !(self.eps_rho >= T::zero()) {
            return Err(Error::InvalidParameter(format!("eps_rho must be non-negative, got {}", self.eps_rho)));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidParameter("max_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Density,
    Constraint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation<T> {
    pub agent: usize,
    pub at: LocationId,
    pub kind: FieldKind,
    pub value: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Density goals drive the round.
    Coverage,
    /// Constraint goals drive the round.
    Exploration,
    /// Final bookkeeping entry; nothing is measured.
    Terminal,
}

/// One iteration of a learning loop.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundLog<T> {
    /// Measurement rounds completed before this entry.
    pub round: usize,
    pub phase: Phase,
    pub placements: Vec<LocationId>,
    /// `None` for idle agents.
    pub goals: Vec<Option<LocationId>>,
    /// Density width at each goal, zero for idle agents.
    pub goal_widths: Vec<T>,
    /// `Γ`: sum of `goal_widths` in the coverage phase.
    pub sum_max_width: T,
    pub observations: Vec<Observation<T>>,
    /// Agent groups of the greedy solve.
    pub batches: Vec<Vec<usize>>,
    /// Per-agent restriction of the greedy solve; empty for the whole domain.
    pub restrictions: Vec<CellSet>,
    /// Per-agent effective regions of the placements.
    pub regions: Vec<Vec<LocationId>>,
    pub pessimistic: Vec<CellSet>,
    pub optimistic: Vec<CellSet>,
    pub recommendation: Vec<LocationId>,
    /// Worst-case value of `recommendation` under the density lower bound.
    pub recommendation_value: T,
}

/// Result of any of the learning loops.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome<T> {
    /// Placements of the last greedy solve.
    pub final_placements: Vec<LocationId>,
    /// Best safe placement found so far (the final placements when
    /// unconstrained).
    pub recommendation: Vec<LocationId>,
    pub history: Vec<RoundLog<T>>,
    pub converged: bool,
    pub rounds: usize,
    pub samples_rho: usize,
    pub samples_q: usize,
    pub audit: SafetyAudit,
    pub final_sets: Option<SafeSetState>,
}

/// A measurement or recommendation at a location that is unsafe in truth
/// or outside the set the algorithm restricted itself to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub round: usize,
    pub agent: usize,
    pub at: LocationId,
    pub truly_unsafe: bool,
    pub outside_certified_set: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SafetyAudit {
    pub checked: usize,
    pub violations: Vec<Violation>,
}

impl SafetyAudit {
    pub fn check<T: Scalar>(&mut self, env: &EnvironmentTruth<T>, round: usize, agent: usize, at: LocationId, certified: Option<&CellSet>) {
        self.checked += 1;
        let truly_unsafe = !env.is_safe(at);
        let outside_certified_set = certified.is_some_and(|c| !c.contains(at));
        if truly_unsafe || outside_certified_set {
            self.violations.push(Violation { round, agent, at, truly_unsafe, outside_certified_set });
        }
    }

    /// Count of measurements or recommendations at truly unsafe locations.
    pub fn unsafe_count(&self) -> usize {
        self.violations.iter().filter(|v| v.truly_unsafe).count()
    }
}

/// Noisy point evaluations of the true fields, one noise stream per agent
/// and field.
#[derive(Clone, Debug)]
pub struct Simulator<'a, T> {
    env: &'a EnvironmentTruth<T>,
    rho_streams: Vec<ChaCha8Rng>,
    q_streams: Vec<ChaCha8Rng>,
}

impl<'a, T: Scalar> Simulator<'a, T> {
    pub fn new(env: &'a EnvironmentTruth<T>, seed: u64) -> Self {
        let n = env.seeds.len() as u64;
        Self {
            env,
            rho_streams: (0..n).map(|i| rng::stream(seed, "noise_rho", i)).collect(),
            q_streams: (0..n).map(|i| rng::stream(seed, "noise_q", i)).collect(),
        }
    }

    pub fn env(&self) -> &EnvironmentTruth<T> {
        self.env
    }

    pub fn measure(&mut self, agent: usize, at: LocationId, kind: FieldKind) -> Observation<T> {
        let (truth, sd, stream) = match kind {
            FieldKind::Density => (self.env.density[at.0], self.env.noise_rho, &mut self.rho_streams[agent]),
            FieldKind::Constraint => (self.env.constraint[at.0], self.env.noise_q, &mut self.q_streams[agent]),
        };
        let eta: f64 = stream.sample(StandardNormal);
        Observation { agent, at, kind, value: truth + sd * T::lit(eta) }
    }
}

/// Greedy placements for every agent group.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan<T> {
    pub placements: Vec<LocationId>,
    pub regions: Vec<Vec<LocationId>>,
    pub batches: Vec<Vec<usize>>,
    /// Per-agent restriction; empty when unrestricted.
    pub restrictions: Vec<CellSet>,
    /// Per-agent full disk within its restriction.
    pub disks: Vec<Vec<LocationId>>,
    /// Sum over groups of the greedy objective on `values`.
    pub value: T,
}

/// Runs greedy on `values` separately for each `(agents, restriction)` group.
/// Agents of a group are placed in increasing index order.
pub fn plan_groups<T: Scalar>(
    domain: &GridDomain<T>,
    radius: usize,
    mode: DiskMode,
    groups: &[(Vec<usize>, Option<CellSet>)],
    values: &[T],
) -> Result<Plan<T>> {
    let n: usize = groups.iter().map(|(a, _)| a.len()).sum();
    let mut placements = vec![LocationId(0); n];
    let mut regions = vec![Vec::new(); n];
    let mut restrictions = vec![CellSet::empty(0); n];
    let mut disks = vec![Vec::new(); n];
    let mut value = T::zero();
    for (agents, restrict) in groups {
        let problem = CoverageProblem::new(domain, radius, restrict.as_ref(), mode)?;
        let a = problem.greedy(values, agents.len())?;
        value = value + a.total_value;
        for (k, &i) in agents.iter().enumerate() {
            placements[i] = a.agents[k];
            regions[i] = a.effective_regions[k].clone();
            disks[i] = problem.disk(a.agents[k])?.to_vec();
            if let Some(r) = restrict {
                restrictions[i] = r.clone();
            }
        }
    }
    Ok(Plan { placements, regions, batches: groups.iter().map(|(a, _)| a.clone()).collect(), restrictions, disks, value })
}

/// Per-agent goals for the density model. Cells in `excluded[i]` are never
/// chosen for agent `i`; an agent whose region is fully excluded idles.
pub fn density_goals<T: Scalar>(
    plan: &Plan<T>,
    belief: &FieldBelief<T>,
    sampler: Sampler,
    excluded: Option<&[CellSet]>,
) -> Result<Vec<Option<LocationId>>> {
    let allowed = |i: usize, v: LocationId| excluded.map_or(true, |e| !e[i].contains(v));
    match sampler {
        Sampler::Uncertainty => Ok(plan
            .regions
            .iter()
            .enumerate()
            .map(|(i, region)| {
                if region.is_empty() {
                    return allowed(i, plan.placements[i]).then_some(plan.placements[i]);
                }
                let cand: Vec<LocationId> = region.iter().copied().filter(|&v| allowed(i, v)).collect();
                argmax_by(&cand, |v| belief.width(v))
            })
            .collect()),
        Sampler::UcbCenter => Ok(plan.placements.iter().enumerate().map(|(i, &x)| allowed(i, x).then_some(x)).collect()),
        Sampler::Hallucinated => {
            let mut goals = Vec::with_capacity(plan.regions.len());
            let mut sites: Vec<LocationId> = Vec::new();
            for (i, region) in plan.regions.iter().enumerate() {
                let pool = if region.is_empty() { std::slice::from_ref(&plan.placements[i]) } else { &region[..] };
                let cand: Vec<LocationId> = pool.iter().copied().filter(|&v| allowed(i, v)).collect();
                let g = hallucinated_argmax(belief.posterior(), &sites, &cand)?;
                if let Some(g) = g {
                    sites.push(g);
                }
                goals.push(g);
            }
            Ok(goals)
        }
    }
}

/// Candidate with the largest posterior variance after value-free
/// conditioning on `sites`.
pub fn hallucinated_argmax<T: Scalar>(
    post: &DomainPosterior<T>,
    sites: &[LocationId],
    candidates: &[LocationId],
) -> Result<Option<LocationId>> {
    let vars = post.conditioned_variances(sites, candidates)?;
    let mut best: Option<(LocationId, T)> = None;
    for (&v, &s) in candidates.iter().zip(&vars) {
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((v, s));
        }
    }
    Ok(best.map(|(v, _)| v))
}

/// Widths at the goals (zero for idle agents) and their sum.
pub fn goal_widths<T: Scalar>(goals: &[Option<LocationId>], belief: &FieldBelief<T>) -> (Vec<T>, T) {
    let w: Vec<T> = goals.iter().map(|g| g.map_or(T::zero(), |v| belief.width(v))).collect();
    let s = w.iter().fold(T::zero(), |a, &b| a + b);
    (w, s)
}

/// State carried by a density-learning loop.
pub(crate) struct CoverageLoop<'s, 'e, T> {
    pub sim: &'s mut Simulator<'e, T>,
    pub belief: &'s mut FieldBelief<T>,
    pub history: Vec<RoundLog<T>>,
    pub rounds: usize,
    pub samples_rho: usize,
    pub audit: SafetyAudit,
}

impl<T: Scalar> CoverageLoop<'_, '_, T> {
    /// MaCOpt iterations on fixed groups until `Γ ≤ ε_ρ` or `max_rounds`
    /// measurement rounds have happened in total. Returns convergence and
    /// the final placements. `certified[i]` is the set agent `i` may measure in.
    pub fn run(
        &mut self,
        domain: &GridDomain<T>,
        cfg: &MacoptConfig<T>,
        groups: &[(Vec<usize>, Option<CellSet>)],
        certified: Option<&[CellSet]>,
        template: &RoundLog<T>,
    ) -> Result<(bool, Vec<LocationId>)> {
        loop {
            let plan = plan_groups(domain, cfg.radius, cfg.disk_mode, groups, self.belief.upper())?;
            let goals = density_goals(&plan, self.belief, cfg.sampler, None)?;
            let (widths, gamma) = goal_widths(&goals, self.belief);
            let mut log = RoundLog {
                round: self.rounds,
                phase: Phase::Coverage,
                placements: plan.placements.clone(),
                goals: goals.clone(),
                goal_widths: widths,
                sum_max_width: gamma,
                observations: Vec::new(),
                batches: plan.batches.clone(),
                restrictions: plan.restrictions.clone(),
                regions: plan.regions.clone(),
                ..template.clone()
            };
            if template.recommendation.is_empty() {
                log.recommendation = plan.placements.clone();
            }
            if gamma <= cfg.eps_rho || self.rounds >= cfg.max_rounds {
                log.phase = Phase::Terminal;
                self.history.push(log);
                return Ok((gamma <= cfg.eps_rho, plan.placements));
            }
            let mut batch = Vec::new();
            for (i, g) in goals.iter().enumerate() {
                if let Some(g) = *g {
                    self.audit.check(self.sim.env(), self.rounds, i, g, certified.map(|c| &c[i]));
                    let o = self.sim.measure(i, g, FieldKind::Density);
                    batch.push((o.at, o.value));
                    log.observations.push(o);
                }
            }
            self.belief.observe(&batch)?;
            self.samples_rho += batch.len();
            self.rounds += 1;
            self.history.push(log);
        }
    }
}

pub(crate) fn empty_log<T: Scalar>() -> RoundLog<T> {
    RoundLog {
        round: 0,
        phase: Phase::Coverage,
        placements: Vec::new(),
        goals: Vec::new(),
        goal_widths: Vec::new(),
        sum_max_width: T::zero(),
        observations: Vec::new(),
        batches: Vec::new(),
        restrictions: Vec::new(),
        regions: Vec::new(),
        pessimistic: Vec::new(),
        optimistic: Vec::new(),
        recommendation: Vec::new(),
        recommendation_value: T::zero(),
    }
}

/// Unconstrained coverage learning over the whole domain with as many
/// agents as `env` has seeds.
pub fn macopt_run<T: Scalar>(env: &EnvironmentTruth<T>, cfg: &MacoptConfig<T>, seed: u64) -> Result<RunOutcome<T>> {
    let belief = FieldBelief::new(cfg.kernel_rho, cfg.noise_var_rho, &env.domain, cfg.beta_sqrt_rho)?;
    macopt_run_with_belief(env, cfg, belief, seed)
}

/// As [`macopt_run`], starting from a given density belief.
pub fn macopt_run_with_belief<T: Scalar>(
    env: &EnvironmentTruth<T>,
    cfg: &MacoptConfig<T>,
    mut belief: FieldBelief<T>,
    seed: u64,
) -> Result<RunOutcome<T>> {
    cfg.validate()?;
    let mut sim = Simulator::new(env, seed);
    let n = env.seeds.len();
    let groups = vec![((0..n).collect::<Vec<_>>(), None)];
    let mut lp = CoverageLoop {
        sim: &mut sim,
        belief: &mut belief,
        history: Vec::new(),
        rounds: 0,
        samples_rho: 0,
        audit: SafetyAudit::default(),
    };
    let (converged, placements) = lp.run(&env.domain, cfg, &groups, None, &empty_log())?;
    Ok(RunOutcome {
        recommendation: placements.clone(),
        final_placements: placements,
        rounds: lp.rounds,
        samples_rho: lp.samples_rho,
        samples_q: 0,
        converged,
        history: std::mem::take(&mut lp.history),
        audit: std::mem::take(&mut lp.audit),
        final_sets: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::{uncertainty_goals, CoverageProblem, DensityField};
    use crate::environment::{GenerationParams, GpSampler, Positivity, sample_gp_environment};

    fn cfg(eps: f64, sampler: Sampler) -> MacoptConfig<f64> {
        MacoptConfig {
            radius: 1,
            disk_mode: DiskMode::PathRestricted,
            kernel_rho: KernelSpec::matern52(0.3, 1.0).unwrap(),
            noise_var_rho: 1e-3,
            beta_sqrt_rho: 3.0,
            eps_rho: eps,
            max_rounds: 300,
            sampler,
        }
    }

    fn env(w: usize, n: usize, seed: u64) -> EnvironmentTruth<f64> {
        let d = GridDomain::new(w, w, 0.1).unwrap();
        let s = GpSampler::new(&d, &KernelSpec::matern52(0.3, 1.0).unwrap()).unwrap();
        let p = GenerationParams { n_agents: n, noise_rho: 1e-3f64.sqrt(), noise_q: 1e-3f64.sqrt(), seed_margin: 0.0, positivity: Positivity::Shift };
        sample_gp_environment(&d, &s, &s, &p, seed).unwrap()
    }

    #[test]
    fn infinite_tolerance_stops_before_sampling() {
        let e = env(6, 2, 1);
        let out = macopt_run(&e, &cfg(f64::INFINITY, Sampler::Uncertainty), 1).unwrap();
        assert_eq!(out.history.len(), 1);
        assert!(out.history[0].observations.is_empty());
        assert!(out.converged);
        assert_eq!(out.samples_rho, 0);
    }

    #[test]
    fn converges_near_optimal_single_agent() {
        let mut e = env(5, 1, 3);
        e.noise_rho = 1e-6;
        let mut c = cfg(0.05, Sampler::Uncertainty);
        c.noise_var_rho = 1e-12;
        let out = macopt_run(&e, &c, 3).unwrap();
        assert!(out.converged);
        let p = CoverageProblem::new(&e.domain, 1, None, DiskMode::PathRestricted).unwrap();
        let opt = p.brute_force_optimal(&e.density, 1).unwrap();
        let got = p.coverage_value(&e.density, &out.final_placements).unwrap();
        assert!(got >= (1.0 - (-1f64).exp()) * opt.total_value - c.eps_rho);
    }

    #[test]
    fn bookkeeping_is_consistent_and_reproducible() {
        let e = env(8, 3, 5);
        let c = cfg(0.3, Sampler::Uncertainty);
        let a = macopt_run(&e, &c, 9).unwrap();
        let b = macopt_run(&e, &c, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.history.len() > 1);
        for log in &a.history {
            assert_eq!(log.goals.len(), 3);
            let s = log.goal_widths.iter().sum::<f64>();
            assert_eq!(log.sum_max_width, s);
            for o in &log.observations {
                assert!(log.regions[o.agent].contains(&o.at));
                assert_eq!(Some(o.at), log.goals[o.agent]);
            }
        }
    }

    #[test]
    fn ucb_center_measures_placements() {
        let e = env(8, 2, 7);
        let out = macopt_run(&e, &cfg(0.3, Sampler::UcbCenter), 2).unwrap();
        for log in &out.history {
            let expect: Vec<Option<LocationId>> = log.placements.iter().copied().map(Some).collect();
            assert_eq!(log.goals, expect);
        }
    }

    #[test]
    fn hallucination_for_one_agent_matches_uncertainty() {
        let d = GridDomain::new(6, 6, 0.1).unwrap();
        let b = FieldBelief::new(KernelSpec::matern52(0.2, 1.0).unwrap(), 1e-3, &d, 3.0).unwrap();
        let mut b2 = b.clone();
        b2.observe(&[(LocationId(7), 0.3), (LocationId(20), 0.1)]).unwrap();
        let plan = plan_groups(&d, 1, DiskMode::PathRestricted, &[(vec![0], None)], b2.upper()).unwrap();
        let h = density_goals(&plan, &b2, Sampler::Hallucinated, None).unwrap();
        let u = density_goals(&plan, &b2, Sampler::Uncertainty, None).unwrap();
        assert_eq!(h, u);
    }

    #[test]
    fn hallucination_moves_second_goal_away() {
        let d = GridDomain::new(10, 1, 0.1).unwrap();
        let b = FieldBelief::new(KernelSpec::matern52(0.3, 1.0).unwrap(), 1e-3, &d, 3.0).unwrap();
        let values = DensityField::uniform(10, 1.0).unwrap();
        let a = CoverageProblem::new(&d, 2, None, DiskMode::PathRestricted).unwrap().assignment(&values, &[LocationId(2), LocationId(5)]).unwrap();
        let plan = Plan {
            placements: a.agents.clone(),
            regions: a.effective_regions.clone(),
            batches: vec![vec![0, 1]],
            restrictions: vec![CellSet::empty(0); 2],
            disks: a.effective_regions.clone(),
            value: a.total_value,
        };
        let u = uncertainty_goals(&a, &b.widths());
        let h = density_goals(&plan, &b, Sampler::Hallucinated, None).unwrap();
        // Prior widths tie, so the uncertainty goal of agent 2 is its lowest cell,
        // right next to agent 1's goal.
        assert_eq!(u, vec![LocationId(0), LocationId(5)]);
        assert_eq!(h[0], Some(LocationId(0)));
        assert_eq!(h[1], Some(LocationId(7)));
        let post = b.posterior();
        let v = post.conditioned_variances(&[LocationId(0)], &[LocationId(0)]).unwrap();
        assert!(v[0] <= 1e-3);
    }
}
