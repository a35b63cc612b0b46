//! Coverage learning under an unknown safety constraint: the SafeMaC phase
//! machine, goal-directed safe expansion, the worst-case recommendation
//! rule and the PassiveMaC and Two-Stage baselines.

use serde::{Deserialize, Serialize};

use crate::coverage::{argmax_by, CoverageProblem};
use crate::domain::{hop_layers, CellSet, GridDomain, LocationId};
use crate::environment::EnvironmentTruth;
use crate::error::Result;
use crate::gp::{ConfidenceBounds, FieldBelief, KernelSpec};
use crate::macopt::{
    density_goals, empty_log, goal_widths, plan_groups, CoverageLoop, FieldKind, MacoptConfig, Phase, Plan, RoundLog,
    RunOutcome, SafetyAudit, Sampler, Simulator,
};
use crate::safe_sets::{pessimistic_operator, AgentSets, BatchKind, Certifier, SafeSetState, SafetyParams};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heuristic {
    /// `h(v) = 1 / (1 + hops to the nearest goal)`.
    #[default]
    InverseDistance,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SafemacConfig<T> {
    /// Density model, disk geometry, `eps_rho` and the round cap.
    pub coverage: MacoptConfig<T>,
    pub kernel_q: KernelSpec<T>,
    /// Noise variance assumed by the constraint model.
    pub noise_var_q: T,
    pub beta_sqrt_q: T,
    pub eps_q: T,
    pub lipschitz: T,
    pub heuristic: Heuristic,
}

impl<T: Scalar> SafemacConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.coverage.validate()?;
        self.kernel_q.validate()?;
        self.safety_params().map(|_| ())
    }

    pub fn safety_params(&self) -> Result<SafetyParams<T>> {
        SafetyParams::new(self.lipschitz, self.eps_q)
    }
}

/// Cells grouped by equal heuristic priority, highest priority first.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PriorityMap {
    pub levels: Vec<PriorityLevel>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PriorityLevel {
    /// Hop distance to the nearest goal.
    pub hops: usize,
    /// Increasing ids.
    pub cells: Vec<LocationId>,
}

impl PriorityLevel {
    pub fn priority<T: Scalar>(&self) -> T {
        inverse_distance_score(self.hops)
    }
}

pub fn inverse_distance_score<T: Scalar>(hops: usize) -> T {
    T::one() / (T::one() + T::lit(hops as f64))
}

/// Buckets `candidates` by hop distance to the nearest of `goals`. Empty
/// when `goals` is empty.
pub fn inverse_distance_heuristic<T: Scalar>(domain: &GridDomain<T>, candidates: &CellSet, goals: &CellSet) -> PriorityMap {
    if goals.is_empty() {
        return PriorityMap::default();
    }
    let hops = hop_layers(domain, goals);
    let mut levels: Vec<PriorityLevel> = Vec::new();
    let mut cells: Vec<(usize, LocationId)> = candidates.iter().map(|v| (hops[v.0], v)).collect();
    cells.sort_unstable();
    for (h, v) in cells {
        match levels.last_mut() {
            Some(l) if l.hops == h => l.cells.push(v),
            _ => levels.push(PriorityLevel { hops: h, cells: vec![v] }),
        }
    }
    PriorityMap { levels }
}

/// Intermediate sets of one safe-expansion step.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpanderState {
    /// `A_t` over `S^o \ p_t(S^p)`.
    pub priorities: PriorityMap,
    /// `W`: pessimistically safe cells with constraint width above `eps_q`.
    pub eps_uncertain: CellSet,
    /// Index into `priorities.levels` of the best level with an expander.
    pub alpha_star: Option<usize>,
    /// `G(α*)`, increasing ids.
    pub expanders: Vec<LocationId>,
}

pub fn expander_state<T: Scalar>(
    sets: &AgentSets,
    bounds_q: &ConfidenceBounds<T>,
    domain: &GridDomain<T>,
    goals: &CellSet,
    params: &SafetyParams<T>,
    heuristic: Heuristic,
) -> ExpanderState {
    let certified = pessimistic_operator(bounds_q, domain, &sets.pessimistic, params);
    let frontier = sets.optimistic.difference(&certified);
    let priorities = match heuristic {
        Heuristic::InverseDistance => inverse_distance_heuristic(domain, &frontier, goals),
    };
    let mut level_of = vec![usize::MAX; domain.len()];
    for (k, l) in priorities.levels.iter().enumerate() {
        for v in &l.cells {
            level_of[v.0] = k;
        }
    }
    let mut eps_uncertain = domain.empty_set();
    for v in sets.pessimistic.iter() {
        if bounds_q.width(v) > params.eps_q {
            eps_uncertain.insert(v);
        }
    }
    let optimistic = Certifier { values: &bounds_q.upper, margin: T::zero(), lipschitz: params.lipschitz };
    let mut best: Vec<(LocationId, usize)> = Vec::new();
    for v in eps_uncertain.iter() {
        let mut lvl = usize::MAX;
        optimistic.for_each_certified(domain, v, |z| lvl = lvl.min(level_of[z.0]));
        best.push((v, lvl));
    }
    let alpha = best.iter().map(|&(_, l)| l).min().filter(|&l| l != usize::MAX);
    let expanders = alpha.map_or_else(Vec::new, |a| best.iter().filter(|&&(_, l)| l == a).map(|&(v, _)| v).collect());
    ExpanderState { priorities, eps_uncertain, alpha_star: alpha, expanders }
}

/// Constraint measurement site that best expands `S^p` toward `goals`, or
/// `None` when no uncertain safe cell can certify a frontier cell.
pub fn safe_expansion_step<T: Scalar>(
    sets: &AgentSets,
    bounds_q: &ConfidenceBounds<T>,
    domain: &GridDomain<T>,
    goals: &CellSet,
    params: &SafetyParams<T>,
    heuristic: Heuristic,
) -> Option<LocationId> {
    let st = expander_state(sets, bounds_q, domain, goals, params, heuristic);
    argmax_by(&st.expanders, |v| bounds_q.width(v))
}

fn pessimistic_groups(sets: &SafeSetState) -> Vec<(Vec<usize>, Option<CellSet>)> {
    sets.batches(BatchKind::Pessimistic).into_iter().map(|b| (b.agents, Some(b.region))).collect()
}

/// Worst-case value `Σ_B F(X^B; max(l, 0); S^{p,B})` of placements lying in
/// their agents' pessimistic sets; `None` otherwise.
pub fn worst_case_value<T: Scalar>(
    domain: &GridDomain<T>,
    cfg: &MacoptConfig<T>,
    sets: &SafeSetState,
    lower: &[T],
    placements: &[LocationId],
) -> Result<Option<T>> {
    if placements.iter().zip(&sets.agents).any(|(&x, a)| !a.pessimistic.contains(x)) {
        return Ok(None);
    }
    let clamped: Vec<T> = lower.iter().map(|&l| l.max(T::zero())).collect();
    let mut total = T::zero();
    for (agents, region) in pessimistic_groups(sets) {
        let problem = CoverageProblem::new(domain, cfg.radius, region.as_ref(), cfg.disk_mode)?;
        let xs: Vec<LocationId> = agents.iter().map(|&i| placements[i]).collect();
        total = total + problem.coverage_value(&clamped, &xs)?;
    }
    Ok(Some(total))
}

/// Running argmax of the worst-case value over past greedy placements and
/// pessimistic-greedy solutions.
#[derive(Clone, Debug, PartialEq)]
pub struct Recommender<T> {
    pub best: Vec<LocationId>,
    pub value: T,
}

impl<T: Scalar> Recommender<T> {
    /// Starts at the seeds valued under `lower`.
    pub fn new(domain: &GridDomain<T>, cfg: &MacoptConfig<T>, sets: &SafeSetState, lower: &[T]) -> Result<Self> {
        let seeds: Vec<LocationId> = sets.agents.iter().map(|a| a.seed).collect();
        let value = worst_case_value(domain, cfg, sets, lower, &seeds)?.unwrap_or(T::zero());
        Ok(Self { best: seeds, value })
    }

    /// Offers `placements` and a fresh pessimistic-greedy solution. Returns
    /// whether the recommendation changed.
    pub fn consider(
        &mut self,
        domain: &GridDomain<T>,
        cfg: &MacoptConfig<T>,
        sets: &SafeSetState,
        lower: &[T],
        placements: &[LocationId],
    ) -> Result<bool> {
        let mut changed = false;
        if let Some(v) = worst_case_value(domain, cfg, sets, lower, placements)? {
            if v > self.value {
                self.best = placements.to_vec();
                self.value = v;
                changed = true;
            }
        }
        let clamped: Vec<T> = lower.iter().map(|&l| l.max(T::zero())).collect();
        let plan = plan_groups(domain, cfg.radius, cfg.disk_mode, &pessimistic_groups(sets), &clamped)?;
        if plan.value > self.value && plan.placements.iter().zip(&sets.agents).all(|(&x, a)| a.pessimistic.contains(x)) {
            self.best = plan.placements;
            self.value = plan.value;
            changed = true;
        }
        Ok(changed)
    }
}

fn beliefs<T: Scalar>(env: &EnvironmentTruth<T>, cfg: &SafemacConfig<T>) -> Result<(FieldBelief<T>, FieldBelief<T>)> {
    let c = &cfg.coverage;
    let rho = FieldBelief::new(c.kernel_rho, c.noise_var_rho, &env.domain, c.beta_sqrt_rho)?;
    let q = FieldBelief::new(cfg.kernel_q, cfg.noise_var_q, &env.domain, cfg.beta_sqrt_q)?;
    Ok((rho, q))
}

/// Shared state of the constrained loops.
struct Run<'e, T> {
    env: &'e EnvironmentTruth<T>,
    cfg: SafemacConfig<T>,
    params: SafetyParams<T>,
    sim: Simulator<'e, T>,
    rho: FieldBelief<T>,
    q: FieldBelief<T>,
    sets: SafeSetState,
    rec: Recommender<T>,
    history: Vec<RoundLog<T>>,
    rounds: usize,
    samples_rho: usize,
    samples_q: usize,
    audit: SafetyAudit,
}

impl<'e, T: Scalar> Run<'e, T> {
    fn new(env: &'e EnvironmentTruth<T>, cfg: &SafemacConfig<T>, rho: FieldBelief<T>, q: FieldBelief<T>, seed: u64) -> Result<Self> {
        env.validate()?;
        cfg.validate()?;
        let params = cfg.safety_params()?;
        let mut sets = SafeSetState::new(&env.domain, &env.seeds)?;
        // Prior bounds already certify what they can; with uninformative
        // bounds this leaves `S^p` at the seeds.
        sets.update(q.bounds(), &env.domain, &params);
        let rec = Recommender::new(&env.domain, &cfg.coverage, &sets, rho.lower())?;
        Ok(Self {
            env,
            cfg: *cfg,
            params,
            sim: Simulator::new(env, seed),
            rho,
            q,
            sets,
            rec,
            history: Vec::new(),
            rounds: 0,
            samples_rho: 0,
            samples_q: 0,
            audit: SafetyAudit::default(),
        })
    }

    fn domain(&self) -> &'e GridDomain<T> {
        &self.env.domain
    }

    fn recommend(&mut self, placements: &[LocationId]) -> Result<()> {
        let domain = self.domain();
        if self.rec.consider(domain, &self.cfg.coverage, &self.sets, self.rho.lower(), placements)? {
            for (i, &x) in self.rec.best.iter().enumerate() {
                self.audit.check(self.env, self.rounds, i, x, Some(&self.sets.agents[i].pessimistic));
            }
        }
        Ok(())
    }

    fn log(&self, phase: Phase, plan: &Plan<T>, goals: Vec<Option<LocationId>>, widths: Vec<T>, gamma: T) -> RoundLog<T> {
        RoundLog {
            round: self.rounds,
            phase,
            placements: plan.placements.clone(),
            goals,
            goal_widths: widths,
            sum_max_width: gamma,
            observations: Vec::new(),
            batches: plan.batches.clone(),
            restrictions: plan.restrictions.clone(),
            regions: plan.regions.clone(),
            pessimistic: self.sets.agents.iter().map(|a| a.pessimistic.clone()).collect(),
            optimistic: self.sets.agents.iter().map(|a| a.optimistic.clone()).collect(),
            recommendation: self.rec.best.clone(),
            recommendation_value: self.rec.value,
        }
    }

    /// Measures the constraint at `sites`, then updates the model and sets.
    /// Returns the agents whose pessimistic or optimistic set changed.
    fn measure_q(&mut self, sites: &[(usize, LocationId)], log: &mut RoundLog<T>) -> Result<Vec<usize>> {
        let mut batch = Vec::with_capacity(sites.len());
        for &(i, v) in sites {
            self.audit.check(self.env, self.rounds, i, v, Some(&self.sets.agents[i].pessimistic));
            let o = self.sim.measure(i, v, FieldKind::Constraint);
            batch.push((o.at, o.value));
            log.observations.push(o);
        }
        self.q.observe(&batch)?;
        self.samples_q += batch.len();
        let before = self.sets.clone();
        self.sets.update(self.q.bounds(), &self.env.domain, &self.params);
        Ok((0..before.len()).filter(|&i| before.agents[i] != self.sets.agents[i]).collect())
    }

    fn finish(self, converged: bool, final_placements: Vec<LocationId>) -> RunOutcome<T> {
        RunOutcome {
            final_placements,
            recommendation: self.rec.best,
            history: self.history,
            converged,
            rounds: self.rounds,
            samples_rho: self.samples_rho,
            samples_q: self.samples_q,
            audit: self.audit,
            final_sets: Some(self.sets),
        }
    }
}

/// SafeMaC with uninformative priors for both fields.
pub fn safemac_run<T: Scalar>(env: &EnvironmentTruth<T>, cfg: &SafemacConfig<T>, seed: u64) -> Result<RunOutcome<T>> {
    let (rho, q) = beliefs(env, cfg)?;
    safemac_run_with_beliefs(env, cfg, rho, q, seed)
}

/// SafeMaC from given density and constraint beliefs.
///
/// Each iteration re-solves greedy per union-set batch, then either measures
/// the constraint for agents whose goal is not pessimistically safe, or,
/// when every goal is safe and `Γ > eps_rho`, measures the density at all
/// goals. A goal for which safe expansion is infeasible is excluded for
/// that agent until one of its safe sets changes.
pub fn safemac_run_with_beliefs<T: Scalar>(
    env: &EnvironmentTruth<T>,
    cfg: &SafemacConfig<T>,
    rho: FieldBelief<T>,
    q: FieldBelief<T>,
    seed: u64,
) -> Result<RunOutcome<T>> {
    let mut run = Run::new(env, cfg, rho, q, seed)?;
    let domain = run.domain();
    let c = cfg.coverage;
    let n = env.seeds.len();
    let mut excluded = vec![domain.empty_set(); n];
    // Each idle iteration excludes at least one new cell.
    let idle_cap = n * domain.len() + 1;
    let mut idle = 0usize;
    loop {
        let groups: Vec<(Vec<usize>, Option<CellSet>)> =
            run.sets.batches(BatchKind::Union).into_iter().map(|b| (b.agents, Some(b.region))).collect();
        let plan = plan_groups(domain, c.radius, c.disk_mode, &groups, run.rho.upper())?;
        run.recommend(&plan.placements)?;
        let cov_goals = density_goals(&plan, &run.rho, Sampler::Uncertainty, Some(&excluded))?;
        let (cov_widths, gamma) = goal_widths(&cov_goals, &run.rho);
        let unclassified: Vec<Vec<LocationId>> = (0..n)
            .map(|i| {
                let a = &run.sets.agents[i];
                plan.disks[i]
                    .iter()
                    .copied()
                    .filter(|&v| a.optimistic.contains(v) && !a.pessimistic.contains(v) && !excluded[i].contains(v))
                    .collect()
            })
            .collect();
        let classified = unclassified.iter().all(|u| u.is_empty());
        let capped = run.rounds >= c.max_rounds || idle >= idle_cap;
        if (classified && gamma <= c.eps_rho) || capped {
            let log = run.log(Phase::Terminal, &plan, cov_goals, cov_widths, gamma);
            run.history.push(log);
            let converged = classified && gamma <= c.eps_rho;
            return Ok(run.finish(converged, plan.placements));
        }
        let (phase, goals) = if gamma > c.eps_rho {
            (Phase::Coverage, cov_goals)
        } else {
            let g = unclassified.iter().map(|u| argmax_by(u, |v| run.q.width(v))).collect();
            (Phase::Exploration, g)
        };
        let (widths, _) = goal_widths(&goals, &run.rho);
        let mut log = run.log(phase, &plan, goals.clone(), widths, gamma);
        let pending: Vec<(usize, LocationId)> = goals
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.filter(|&g| !run.sets.agents[i].pessimistic.contains(g)).map(|g| (i, g)))
            .collect();
        if !pending.is_empty() {
            let mut sites = Vec::new();
            for &(i, g) in &pending {
                let target = CellSet::from_ids(domain.len(), [g]);
                match safe_expansion_step(&run.sets.agents[i], run.q.bounds(), domain, &target, &run.params, cfg.heuristic) {
                    Some(v) => sites.push((i, v)),
                    None => {
                        excluded[i].insert(g);
                    }
                }
            }
            if sites.is_empty() {
                idle += 1;
                continue;
            }
            for i in run.measure_q(&sites, &mut log)? {
                excluded[i] = domain.empty_set();
            }
        } else {
            let mut batch = Vec::new();
            for (i, g) in goals.iter().enumerate() {
                if let Some(g) = *g {
                    run.audit.check(env, run.rounds, i, g, Some(&run.sets.agents[i].pessimistic));
                    let o = run.sim.measure(i, g, FieldKind::Density);
                    batch.push((o.at, o.value));
                    log.observations.push(o);
                }
            }
            run.rho.observe(&batch)?;
            run.samples_rho += batch.len();
        }
        idle = 0;
        run.rounds += 1;
        run.history.push(log);
    }
}

/// Baseline: coverage learning confined to the pessimistic batches, with a
/// constraint measurement alongside every density measurement.
pub fn passivemac_run<T: Scalar>(env: &EnvironmentTruth<T>, cfg: &SafemacConfig<T>, seed: u64) -> Result<RunOutcome<T>> {
    let (rho, q) = beliefs(env, cfg)?;
    let mut run = Run::new(env, cfg, rho, q, seed)?;
    let domain = run.domain();
    let c = cfg.coverage;
    loop {
        let groups = pessimistic_groups(&run.sets);
        let plan = plan_groups(domain, c.radius, c.disk_mode, &groups, run.rho.upper())?;
        run.recommend(&plan.placements)?;
        let goals = density_goals(&plan, &run.rho, c.sampler, None)?;
        let (widths, gamma) = goal_widths(&goals, &run.rho);
        if gamma <= c.eps_rho || run.rounds >= c.max_rounds {
            let log = run.log(Phase::Terminal, &plan, goals, widths, gamma);
            run.history.push(log);
            return Ok(run.finish(gamma <= c.eps_rho, plan.placements));
        }
        let mut log = run.log(Phase::Coverage, &plan, goals.clone(), widths, gamma);
        let mut batch = Vec::new();
        let mut sites = Vec::new();
        for (i, g) in goals.iter().enumerate() {
            if let Some(g) = *g {
                let region = plan.restrictions[i].clone();
                run.audit.check(env, run.rounds, i, g, Some(&region));
                let o = run.sim.measure(i, g, FieldKind::Density);
                batch.push((o.at, o.value));
                log.observations.push(o);
                sites.push((i, g));
            }
        }
        run.rho.observe(&batch)?;
        run.samples_rho += batch.len();
        // Goals lie in the batch's pessimistic union, which may exceed the
        // agent's own set; `measure_q` audits against the latter, so the
        // constraint batch is recorded directly.
        let mut qbatch = Vec::with_capacity(sites.len());
        for &(i, v) in &sites {
            let o = run.sim.measure(i, v, FieldKind::Constraint);
            qbatch.push((o.at, o.value));
            log.observations.push(o);
        }
        run.q.observe(&qbatch)?;
        run.samples_q += qbatch.len();
        run.sets.update(run.q.bounds(), domain, &run.params);
        run.rounds += 1;
        run.history.push(log);
    }
}

/// Baseline: safe expansion toward every unclassified cell until no agent
/// can expand, then coverage learning within the final pessimistic batches.
pub fn two_stage_run<T: Scalar>(env: &EnvironmentTruth<T>, cfg: &SafemacConfig<T>, seed: u64) -> Result<RunOutcome<T>> {
    let (rho, q) = beliefs(env, cfg)?;
    two_stage_run_with_beliefs(env, cfg, rho, q, seed)
}

/// As [`two_stage_run`], starting from given beliefs.
pub fn two_stage_run_with_beliefs<T: Scalar>(
    env: &EnvironmentTruth<T>,
    cfg: &SafemacConfig<T>,
    rho: FieldBelief<T>,
    q: FieldBelief<T>,
    seed: u64,
) -> Result<RunOutcome<T>> {
    let mut run = Run::new(env, cfg, rho, q, seed)?;
    let domain = run.domain();
    let c = cfg.coverage;
    let n = env.seeds.len();
    let mut stalled = vec![false; n];
    while run.rounds < c.max_rounds {
        let mut sites = Vec::new();
        let mut goals = vec![None; n];
        for i in 0..n {
            let u = run.sets.agents[i].unclassified();
            if stalled[i] || u.is_empty() {
                continue;
            }
            goals[i] = argmax_by(&u.to_vec(), |v| run.q.width(v));
            match safe_expansion_step(&run.sets.agents[i], run.q.bounds(), domain, &u, &run.params, cfg.heuristic) {
                Some(v) => sites.push((i, v)),
                None => stalled[i] = true,
            }
        }
        if sites.is_empty() {
            break;
        }
        let seeds_plan = Plan {
            placements: run.rec.best.clone(),
            regions: vec![Vec::new(); n],
            batches: Vec::new(),
            restrictions: vec![CellSet::empty(0); n],
            disks: vec![Vec::new(); n],
            value: T::zero(),
        };
        let mut log = run.log(Phase::Exploration, &seeds_plan, goals, vec![T::zero(); n], T::zero());
        for i in run.measure_q(&sites, &mut log)? {
            stalled[i] = false;
        }
        run.rounds += 1;
        run.history.push(log);
    }
    let groups = pessimistic_groups(&run.sets);
    let certified: Vec<CellSet> = (0..n)
        .map(|i| groups.iter().find(|(a, _)| a.contains(&i)).and_then(|(_, r)| r.clone()).expect("every agent belongs to a batch"))
        .collect();
    let mut template = empty_log();
    template.pessimistic = run.sets.agents.iter().map(|a| a.pessimistic.clone()).collect();
    template.optimistic = run.sets.agents.iter().map(|a| a.optimistic.clone()).collect();
    let mut lp = CoverageLoop {
        sim: &mut run.sim,
        belief: &mut run.rho,
        history: std::mem::take(&mut run.history),
        rounds: run.rounds,
        samples_rho: 0,
        audit: std::mem::take(&mut run.audit),
    };
    let explored = stalled.iter().enumerate().all(|(i, &s)| s || run.sets.agents[i].unclassified().is_empty());
    let (converged, placements) = lp.run(domain, &c, &groups, Some(&certified), &template)?;
    run.history = std::mem::take(&mut lp.history);
    run.rounds = lp.rounds;
    run.samples_rho = lp.samples_rho;
    run.audit = std::mem::take(&mut lp.audit);
    for (i, &x) in placements.iter().enumerate() {
        run.audit.check(env, run.rounds, i, x, Some(&certified[i]));
    }
    run.rec = Recommender { best: placements.clone(), value: T::zero() };
    if let Some(last) = run.history.last_mut() {
        last.recommendation = placements.clone();
    }
    Ok(run.finish(converged && explored, placements))
}
