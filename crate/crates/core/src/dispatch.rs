//! Two-stage dispatch: an outer search over quantized generator plans, each
//! scored by the inner MDP.
//!
//! Exhaustive search walks the product grid backward from the last slot.
//! `v_t` only depends on `g(t+1..=T)`, so every suffix is solved once and
//! shared by all prefixes, and the first layer is evaluated at `s(0)` only.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{lex_cmp, CostModel};
use crate::error::{Error, Result};
use crate::exec;
use crate::mdp::{
    self, improves, DpSolution, EvSpec, ExpectationMode, Kernel, MarkovPolicy, MdpModel, ValueTable,
};
use crate::prob::{DeadlineDistribution, ParamVector};

pub const DEFAULT_DELTA_G: f64 = 10.0;
pub const DEFAULT_MAX_CANDIDATES: usize = 2_000_000;

/// Everything but the dispatch plan.
#[derive(Debug, Clone)]
pub struct DispatchProblem {
    pub demand: Vec<f64>,
    pub evs: Vec<EvSpec>,
    pub params: ParamVector,
    pub costs: CostModel,
    pub ev_energy_value: f64,
}

impl DispatchProblem {
    pub fn horizon(&self) -> usize {
        self.demand.len()
    }

    pub fn model(&self, dispatch: &[f64]) -> MdpModel {
        MdpModel {
            demand: self.demand.clone(),
            dispatch: dispatch.to_vec(),
            evs: self.evs.clone(),
            params: self.params.clone(),
            costs: self.costs.clone(),
            ev_energy_value: self.ev_energy_value,
        }
    }

    pub fn with_params(&self, params: ParamVector) -> Self {
        Self { params, ..self.clone() }
    }

    /// The same system with EV `i` removed.
    pub fn without(&self, i: usize) -> Result<Self> {
        if i >= self.evs.len() {
            return Err(Error::EvIndexOutOfRange { index: i, count: self.evs.len() });
        }
        let mut out = self.clone();
        out.evs.remove(i);
        out.params.remove(i);
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.model(&vec![0.0; self.horizon()]).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CapRule {
    /// `quantize_up(d(t)) + sum of capacities`.
    Auto(AutoTag),
    PerSlot(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Default for CapRule {
    fn default() -> Self {
        CapRule::Auto(AutoTag::Auto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Exhaustive,
    Beam { width: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub delta_g: f64,
    pub cap: CapRule,
    pub mode: SearchMode,
    pub max_candidates: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            delta_g: DEFAULT_DELTA_G,
            cap: CapRule::default(),
            mode: SearchMode::Exhaustive,
            max_candidates: DEFAULT_MAX_CANDIDATES,
        }
    }
}

/// Candidate dispatch plans.
#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    /// Per-slot ascending value lists; the grid is their product.
    Product(Vec<Vec<f64>>),
    /// Explicit plans in lexicographic order.
    List(Vec<Vec<f64>>),
}

impl Grid {
    pub fn size(&self) -> f64 {
        match self {
            Grid::Product(slots) => slots.iter().map(|s| s.len() as f64).product(),
            Grid::List(plans) => plans.len() as f64,
        }
    }

    pub fn plans(&self) -> Vec<Vec<f64>> {
        match self {
            Grid::List(p) => p.clone(),
            Grid::Product(slots) => {
                let mut out: Vec<Vec<f64>> = vec![Vec::new()];
                for choices in slots {
                    out = out
                        .into_iter()
                        .flat_map(|p| {
                            choices.iter().map(move |&x| {
                                let mut v = p.clone();
                                v.push(x);
                                v
                            })
                        })
                        .collect();
                }
                out
            }
        }
    }
}

fn quantize_up(x: f64, step: f64) -> f64 {
    let k = (x / step - 1e-9).ceil().max(0.0);
    k * step
}

/// The search grid: joint generator tables list their plans, everything else
/// gets `{0, dg, ..., cap(t)}` per slot.
pub fn build_grid(problem: &DispatchProblem, config: &SolverConfig) -> Result<Grid> {
    if let Some(plans) = problem.costs.generator.joint_plans() {
        return Ok(Grid::List(plans));
    }
    let dg = config.delta_g;
    if !(dg.is_finite() && dg > 0.0) {
        return Err(Error::InvalidModel(format!("delta_g {dg} must be positive")));
    }
    let horizon = problem.horizon();
    let caps: Vec<f64> = match &config.cap {
        CapRule::Auto(_) => {
            let storage: f64 = problem.evs.iter().map(|e| e.capacity).sum();
            problem.demand.iter().map(|&d| quantize_up(d, dg) + storage).collect()
        }
        CapRule::PerSlot(c) => {
            if c.len() != horizon {
                return Err(Error::InvalidModel(format!(
                    "cap has {} entries for horizon {horizon}",
                    c.len()
                )));
            }
            c.clone()
        }
    };
    let slots = caps
        .iter()
        .map(|&cap| {
            let k = (cap / dg + 1e-9).floor().max(0.0) as usize;
            (0..=k).map(|j| j as f64 * dg).collect()
        })
        .collect();
    Ok(Grid::Product(slots))
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub g_star: Vec<f64>,
    pub policy: MarkovPolicy,
    pub values: ValueTable,
    pub q_star: f64,
    pub candidates_evaluated: usize,
}

impl SolveResult {
    pub fn to_json(&self) -> serde_json::Value {
        let sol = DpSolution { values: self.values.clone(), policy: self.policy.clone() };
        serde_json::json!({
            "g_star": self.g_star,
            "q_star": self.q_star,
            "candidates_evaluated": self.candidates_evaluated,
            "artifact": mdp::policy_artifact(&sol),
        })
    }
}

/// `c^g(g) + v_0(s(0))`.
pub fn beta_bar(problem: &DispatchProblem, g: &[f64]) -> Result<f64> {
    let model = problem.model(g);
    let sol = mdp::solve_dp(&model)?;
    Ok(problem.costs.generator.plan_cost(g) + sol.initial_value())
}

/// Expected cost of every candidate, in grid order.
pub fn evaluate_grid(problem: &DispatchProblem, grid: &Grid) -> Result<Vec<f64>> {
    problem.validate()?;
    let kernel = Kernel::new(&problem.model(&vec![0.0; problem.horizon()]));
    let generator = &problem.costs.generator;
    match grid {
        Grid::List(plans) => Ok(exec::map_collect(plans.iter().collect(), |g: &Vec<f64>| {
            let c = generator.plan_cost(g);
            if c.is_finite() {
                c + kernel.initial_value_for(g)
            } else {
                f64::INFINITY
            }
        })),
        Grid::Product(slots) => Ok(suffix_search(&kernel, problem, slots)),
    }
}

fn suffix_search(kernel: &Kernel, problem: &DispatchProblem, slots: &[Vec<f64>]) -> Vec<f64> {
    let horizon = slots.len();
    let mut stride = vec![1usize; horizon];
    for k in (0..horizon.saturating_sub(1)).rev() {
        stride[k] = stride[k + 1] * slots[k + 1].len();
    }
    let size = stride[0] * slots[0].len();
    let last = horizon - 1;
    let w_last = kernel.expectation(last, kernel.terminal());
    let branches: Vec<usize> = (0..slots[last].len()).collect();
    let chunks = exec::map_collect(branches, |j| {
        let mut plan = vec![0.0; horizon];
        plan[last] = slots[last][j];
        let mut out = Vec::new();
        let ctx = Ctx { kernel, problem, slots, stride: &stride };
        ctx.descend(last, &w_last, &mut plan, j * stride[last], &mut out);
        out
    });
    let mut q = vec![f64::INFINITY; size];
    for (idx, val) in chunks.into_iter().flatten() {
        q[idx] = val;
    }
    q
}

struct Ctx<'a> {
    kernel: &'a Kernel,
    problem: &'a DispatchProblem,
    slots: &'a [Vec<f64>],
    stride: &'a [usize],
}

impl Ctx<'_> {
    /// `plan[k]` is fixed; `w` is the expectation feeding the slot-`k+1` decision.
    fn descend(&self, k: usize, w: &[f64], plan: &mut [f64], index: usize, out: &mut Vec<(usize, f64)>) {
        if k == 0 {
            let c = self.problem.costs.generator.plan_cost(plan);
            let q = if c.is_finite() { c + self.kernel.initial_value(plan[0], w) } else { f64::INFINITY };
            out.push((index, q));
            return;
        }
        let v = self.kernel.layer(k, plan[k], w, None);
        let w_prev = self.kernel.expectation(k - 1, &v);
        for (j, &x) in self.slots[k - 1].iter().enumerate() {
            plan[k - 1] = x;
            self.descend(k - 1, &w_prev, plan, index + j * self.stride[k - 1], out);
        }
    }
}

/// Index of the smallest finite value; earlier indices win ties.
fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        match best {
            Some(b) if !improves(v, values[b]) => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Solve the outer program over an explicit grid.
pub fn solve_on_grid(problem: &DispatchProblem, grid: &Grid, config: &SolverConfig) -> Result<SolveResult> {
    let size = grid.size();
    let (g_star, evaluated) = match config.mode {
        SearchMode::Exhaustive => {
            if size > config.max_candidates as f64 {
                return Err(Error::GridTooLarge { size, limit: config.max_candidates as f64 });
            }
            let values = evaluate_grid(problem, grid)?;
            let best = argmin(&values).ok_or(Error::NoFeasibleDispatch)?;
            (nth_plan(grid, best), values.len())
        }
        SearchMode::Beam { width } => beam_search(problem, grid, width)?,
    };
    let model = problem.model(&g_star);
    let sol = mdp::solve_dp(&model)?;
    let q_star = problem.costs.generator.plan_cost(&g_star) + sol.initial_value();
    log::debug!("g* = {g_star:?}, q* = {q_star}, {evaluated} candidates");
    Ok(SolveResult {
        g_star,
        policy: sol.policy,
        values: sol.values,
        q_star,
        candidates_evaluated: evaluated,
    })
}

fn nth_plan(grid: &Grid, index: usize) -> Vec<f64> {
    match grid {
        Grid::List(p) => p[index].clone(),
        Grid::Product(slots) => {
            let mut rem = index;
            let mut plan = vec![0.0; slots.len()];
            for k in (0..slots.len()).rev() {
                plan[k] = slots[k][rem % slots[k].len()];
                rem /= slots[k].len();
            }
            plan
        }
    }
}

fn beam_search(problem: &DispatchProblem, grid: &Grid, width: usize) -> Result<(Vec<f64>, usize)> {
    if width == 0 {
        return Err(Error::InvalidModel("beam width must be at least 1".into()));
    }
    problem.validate()?;
    let slots = match grid {
        Grid::Product(s) => s.clone(),
        Grid::List(_) => {
            let values = evaluate_grid(problem, grid)?;
            let best = argmin(&values).ok_or(Error::NoFeasibleDispatch)?;
            return Ok((nth_plan(grid, best), values.len()));
        }
    };
    let kernel = Kernel::new(&problem.model(&vec![0.0; problem.horizon()]));
    let greedy: Vec<f64> = slots
        .iter()
        .zip(&problem.demand)
        .map(|(choices, &d)| {
            let mut best = choices[0];
            for &x in choices {
                if (x - d).abs() < (best - d).abs() {
                    best = x;
                }
            }
            best
        })
        .collect();
    let score = |plan: &Vec<f64>| {
        let c = problem.costs.generator.plan_cost(plan);
        if c.is_finite() {
            c + kernel.initial_value_for(plan)
        } else {
            f64::INFINITY
        }
    };
    let mut evaluated = 0usize;
    let mut beam: Vec<Vec<f64>> = vec![Vec::new()];
    for k in 0..slots.len() {
        let mut prefixes: Vec<Vec<f64>> = Vec::new();
        for p in &beam {
            for &x in &slots[k] {
                let mut q = p.clone();
                q.push(x);
                prefixes.push(q);
            }
        }
        let completed: Vec<Vec<f64>> = prefixes
            .iter()
            .map(|p| {
                let mut full = p.clone();
                full.extend_from_slice(&greedy[k + 1..]);
                full
            })
            .collect();
        evaluated += completed.len();
        let scores = exec::map_collect(completed.iter().collect(), score);
        let mut order: Vec<usize> = (0..prefixes.len()).collect();
        order.sort_by(|&a, &b| {
            scores[a]
                .total_cmp(&scores[b])
                .then_with(|| lex_cmp(&completed[a], &completed[b]))
        });
        // scores within the tie tolerance of each other keep lexicographic order
        order = tie_stable(order, &scores, &completed);
        beam = order.into_iter().take(width).map(|i| prefixes[i].clone()).collect();
        if k + 1 == slots.len() {
            let best = beam.first().cloned().ok_or(Error::NoFeasibleDispatch)?;
            if !score(&best).is_finite() {
                return Err(Error::NoFeasibleDispatch);
            }
            return Ok((best, evaluated));
        }
    }
    unreachable!("horizon is at least 1")
}

/// Re-sort runs of near-equal scores lexicographically.
fn tie_stable(order: Vec<usize>, scores: &[f64], plans: &[Vec<f64>]) -> Vec<usize> {
    let mut out = Vec::with_capacity(order.len());
    let mut run: Vec<usize> = Vec::new();
    for i in order {
        if let Some(&head) = run.first() {
            if improves(scores[head], scores[i]) {
                run.sort_by(|&a, &b| lex_cmp(&plans[a], &plans[b]));
                out.append(&mut run);
            }
        }
        run.push(i);
    }
    run.sort_by(|&a, &b| lex_cmp(&plans[a], &plans[b]));
    out.append(&mut run);
    out
}

pub fn solve_outer(problem: &DispatchProblem, config: &SolverConfig) -> Result<SolveResult> {
    let grid = build_grid(problem, config)?;
    solve_on_grid(problem, &grid, config)
}

pub fn q_star(problem: &DispatchProblem, config: &SolverConfig) -> Result<f64> {
    Ok(solve_outer(problem, config)?.q_star)
}

/// Optimal cost with EV `i` absent, searched over the full system's grid.
pub fn q_star_minus(problem: &DispatchProblem, i: usize, config: &SolverConfig) -> Result<f64> {
    let grid = build_grid(problem, config)?;
    let reduced = problem.without(i)?;
    Ok(solve_on_grid(&reduced, &grid, config)?.q_star)
}

/// `E[beta | deadline of EV i = t]` under `problem.params`.
pub fn conditional_beta(
    problem: &DispatchProblem,
    g: &[f64],
    policy: &MarkovPolicy,
    i: usize,
    t: usize,
) -> Result<f64> {
    if i >= problem.params.len() {
        return Err(Error::EvIndexOutOfRange { index: i, count: problem.params.len() });
    }
    if problem.params[i].prob(t) <= 0.0 {
        return Err(Error::ZeroProbabilitySlot { ev: i, slot: t });
    }
    let mut params = problem.params.clone();
    params[i] = DeadlineDistribution::point_mass(problem.horizon(), t)?;
    let model = MdpModel { params, ..problem.model(g) };
    mdp::expected_beta(&model, policy, ExpectationMode::Exact)
}

/// `2 sqrt(T) ||beta_i(.)||_2` for EV `i` at the optimum of `problem`;
/// zero-probability slots are skipped.
pub fn lipschitz_bound(problem: &DispatchProblem, solved: &SolveResult, i: usize) -> Result<f64> {
    let horizon = problem.horizon();
    let mut sq = 0.0;
    for t in 1..=horizon {
        if problem.params[i].prob(t) > 0.0 {
            let b = conditional_beta(problem, &solved.g_star, &solved.policy, i, t)?;
            sq += b * b;
        }
    }
    Ok(2.0 * (horizon as f64).sqrt() * sq.sqrt())
}

/// Running maximum of [`lipschitz_bound`] over sampled parameter vectors.
pub fn estimate_lipschitz_k(
    problem: &DispatchProblem,
    config: &SolverConfig,
    trials: usize,
    seed: u64,
    mut sampler: impl FnMut(&mut ChaCha8Rng) -> ParamVector,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut k = 0.0f64;
    for _ in 0..trials.max(1) {
        let p = problem.with_params(sampler(&mut rng));
        let solved = solve_outer(&p, config)?;
        for i in 0..p.evs.len() {
            k = k.max(lipschitz_bound(&p, &solved, i)?);
        }
    }
    Ok(k)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::cost::{CostForm, JointEntry};

    pub(crate) fn example1(p: f64) -> DispatchProblem {
        DispatchProblem {
            demand: vec![0.0, 1.0],
            evs: vec![EvSpec::binary(1.0)],
            params: vec![DeadlineDistribution::new(vec![p, 1.0 - p], 0.0).unwrap()],
            costs: CostModel {
                generator: CostForm::Joint {
                    entries: vec![
                        JointEntry { plan: vec![1.0, 0.0], cost: 0.0 },
                        JointEntry { plan: vec![0.0, 1.0], cost: 2.0 },
                    ],
                },
                reserves: CostForm::Table {
                    slots: vec![vec![[0.0, 0.0]], vec![[0.0, 0.0], [1.0, 11.0]]],
                },
            },
            ev_energy_value: 1.0,
        }
    }

    #[test]
    fn beta_bar_example1() {
        assert!((beta_bar(&example1(0.19), &[0.0, 1.0]).unwrap() - 2.0).abs() < 1e-12);
        assert!((beta_bar(&example1(0.19), &[1.0, 0.0]).unwrap() - 1.9).abs() < 1e-12);
        assert!((beta_bar(&example1(0.3), &[1.0, 0.0]).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn solve_outer_example1() {
        let cfg = SolverConfig::default();
        let r = solve_outer(&example1(0.19), &cfg).unwrap();
        assert_eq!(r.g_star, vec![1.0, 0.0]);
        assert!((r.q_star - 1.9).abs() < 1e-12);
        let r = solve_outer(&example1(0.21), &cfg).unwrap();
        assert_eq!(r.g_star, vec![0.0, 1.0]);
        assert!((r.q_star - 2.0).abs() < 1e-12);
        // tie at p = 0.2 goes to the lexicographically smaller plan
        let r = solve_outer(&example1(0.2), &cfg).unwrap();
        assert_eq!(r.g_star, vec![0.0, 1.0]);
        assert_eq!(r.candidates_evaluated, 2);
    }

    #[test]
    fn leave_one_out_example1() {
        let cfg = SolverConfig::default();
        assert!((q_star_minus(&example1(0.19), 0, &cfg).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(
            q_star_minus(&example1(0.19), 1, &cfg),
            Err(Error::EvIndexOutOfRange { .. })
        ));
    }

    #[test]
    fn conditional_beta_example1() {
        let p = example1(0.19);
        let r = solve_outer(&p, &SolverConfig::default()).unwrap();
        let b1 = conditional_beta(&p, &r.g_star, &r.policy, 0, 1).unwrap();
        let b2 = conditional_beta(&p, &r.g_star, &r.policy, 0, 2).unwrap();
        assert!((b1 - 10.0).abs() < 1e-12);
        assert!(b2.abs() < 1e-12);
        let k = lipschitz_bound(&p, &r, 0).unwrap();
        assert!((k - 20.0 * 2f64.sqrt()).abs() < 1e-9);
        let pm = p.with_params(vec![DeadlineDistribution::point_mass(2, 2).unwrap()]);
        assert!(matches!(
            conditional_beta(&pm, &r.g_star, &r.policy, 0, 1),
            Err(Error::ZeroProbabilitySlot { .. })
        ));
    }

    #[test]
    fn no_ev_linear_dispatch_matches_demand() {
        let p = DispatchProblem {
            demand: vec![10.0, 20.0],
            evs: vec![],
            params: vec![],
            costs: CostModel {
                generator: CostForm::linear(vec![10.0, 20.0]),
                reserves: CostForm::asym_lin_quad(vec![30.0, 30.0]),
            },
            ev_energy_value: 1.0,
        };
        assert!((beta_bar(&p, &[10.0, 20.0]).unwrap() - 0.5).abs() < 1e-12);
        let r = solve_outer(&p, &SolverConfig::default()).unwrap();
        assert_eq!(r.g_star, vec![10.0, 20.0]);
        // two slots of {0,10} and {0,10,20}
        assert_eq!(r.candidates_evaluated, 6);
    }

    #[test]
    fn grid_guard_and_beam() {
        let p = DispatchProblem {
            demand: vec![15.0, 25.0, 5.0],
            evs: vec![EvSpec::binary(10.0)],
            params: vec![DeadlineDistribution::new(vec![0.3, 0.3, 0.4], 0.0).unwrap()],
            costs: CostModel {
                generator: CostForm::linear(vec![12.0, 18.0, 30.0]),
                reserves: CostForm::asym_lin_quad(vec![28.0, 29.0, 31.0]),
            },
            ev_energy_value: 0.02,
        };
        let tight = SolverConfig { max_candidates: 10, ..SolverConfig::default() };
        assert!(matches!(solve_outer(&p, &tight), Err(Error::GridTooLarge { .. })));
        let ex = solve_outer(&p, &SolverConfig::default()).unwrap();
        let size = build_grid(&p, &SolverConfig::default()).unwrap().size() as usize;
        let beam = SolverConfig { mode: SearchMode::Beam { width: size }, ..SolverConfig::default() };
        let b = solve_outer(&p, &beam).unwrap();
        assert_eq!(b.g_star, ex.g_star);
        assert!((b.q_star - ex.q_star).abs() < 1e-12);
        // exhaustive values agree with per-plan DP
        let grid = build_grid(&p, &SolverConfig::default()).unwrap();
        let vals = evaluate_grid(&p, &grid).unwrap();
        for (plan, v) in grid.plans().iter().zip(&vals) {
            assert!((beta_bar(&p, plan).unwrap() - v).abs() < 1e-9);
        }
    }

    #[test]
    fn auto_cap() {
        let p = example1(0.5);
        let mut q = p.clone();
        q.costs.generator = CostForm::linear(vec![1.0, 1.0]);
        q.demand = vec![12.0, 0.0];
        let g = build_grid(&q, &SolverConfig::default()).unwrap();
        assert_eq!(
            g,
            Grid::Product(vec![vec![0.0, 10.0, 20.0], vec![0.0]])
        );
    }
}
