//! Experiment drivers shared by the command line and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{lipschitz_estimate, random_pmf, ConfigFile};
use crate::cost::{CostForm, CostModel};
use crate::dispatch::{solve_on_grid, solve_outer, DispatchProblem, Grid, SolverConfig};
use crate::error::Result;
use crate::exec;
use crate::fmt::fmt_sig;
use crate::mdp::EvSpec;
use crate::oracle::brute_force_oracle;
use crate::prob::{alpha, dominates, DeadlineDistribution};
use crate::sim::{self, BiddingStrategy, RealtimeRule, SimSettings};

/// Comparison slack for orderings of solver outputs.
pub const ORDER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub p: f64,
    pub q_star: f64,
    pub g_star: Vec<f64>,
}

/// Solve the single-EV preset for every `p` in `ps`, with pmf `(p, 1 - p)`.
pub fn example1_sweep(config: &ConfigFile, ps: &[f64]) -> Result<Vec<SweepRow>> {
    let base = config.problem()?;
    let solver = config.solver_config();
    ps.iter()
        .map(|&p| {
            let theta = DeadlineDistribution::new(vec![p, 1.0 - p], config.epsilon_theta)?;
            let r = solve_outer(&base.with_params(vec![theta]), &solver)?;
            Ok(SweepRow { p, q_star: r.q_star, g_star: r.g_star })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("p,q_star,g_star\n");
    for r in rows {
        let g: Vec<String> = r.g_star.iter().map(|x| fmt_sig(*x, 12)).collect();
        out.push_str(&format!("{},{},{}\n", fmt_sig(r.p, 12), fmt_sig(r.q_star, 12), g.join(";")));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig2Cell {
    pub profile: String,
    pub n_evs: usize,
    pub q_star: f64,
    pub g_star: Vec<f64>,
    pub candidates: usize,
}

/// `q*` for `n` copies of each profile, `n` in `0..=max_evs`. The EV template
/// is the config's first EV.
pub fn fig2(config: &ConfigFile, profiles: &[&str], max_evs: usize) -> Result<Vec<Fig2Cell>> {
    let base = config.problem()?;
    let template = config.ev_specs()?.first().cloned().unwrap_or_else(|| EvSpec::binary(10.0));
    let solver = config.solver_config();
    let mut cells: Vec<(String, usize, DeadlineDistribution)> = Vec::new();
    for name in profiles {
        let theta = config.profile(name)?;
        for n in 0..=max_evs {
            cells.push((name.to_string(), n, theta.clone()));
        }
    }
    let empty = DispatchProblem { evs: vec![], params: vec![], ..base.clone() };
    let bare = solve_outer(&empty, &solver)?;
    let solved = exec::map_collect(cells, |(name, n, theta)| -> Result<Fig2Cell> {
        if n == 0 {
            return Ok(Fig2Cell {
                profile: name,
                n_evs: 0,
                q_star: bare.q_star,
                g_star: bare.g_star.clone(),
                candidates: bare.candidates_evaluated,
            });
        }
        let p = DispatchProblem { evs: vec![template.clone(); n], params: vec![theta; n], ..base.clone() };
        let r = solve_outer(&p, &solver)?;
        Ok(Fig2Cell { profile: name, n_evs: n, q_star: r.q_star, g_star: r.g_star, candidates: r.candidates_evaluated })
    });
    solved.into_iter().collect()
}

pub fn fig2_csv(cells: &[Fig2Cell]) -> String {
    let mut out = String::from("profile,n_evs,q_star,g_star,candidates\n");
    for c in cells {
        let g: Vec<String> = c.g_star.iter().map(|x| fmt_sig(*x, 12)).collect();
        out.push_str(&format!("{},{},{},{},{}\n", c.profile, c.n_evs, fmt_sig(c.q_star, 12), g.join(";"), c.candidates));
    }
    out
}

fn cell(cells: &[Fig2Cell], profile: &str, n: usize) -> Option<f64> {
    cells.iter().find(|c| c.profile == profile && c.n_evs == n).map(|c| c.q_star)
}

/// Nonincreasing in fleet size, and ordered by the profile dominances.
pub fn fig2_checks(cells: &[Fig2Cell], orderings: &[(&str, &str)]) -> Vec<Check> {
    let mut checks = Vec::new();
    let mut profiles: Vec<&str> = cells.iter().map(|c| c.profile.as_str()).collect();
    profiles.dedup();
    let max_n = cells.iter().map(|c| c.n_evs).max().unwrap_or(0);
    for p in &profiles {
        let mut bad = Vec::new();
        for n in 1..=max_n {
            if let (Some(a), Some(b)) = (cell(cells, p, n - 1), cell(cells, p, n)) {
                if b > a + ORDER_TOL {
                    bad.push(format!("n={n}: {b} > {a}"));
                }
            }
        }
        checks.push(Check::new(format!("nonincreasing[{p}]"), bad.is_empty(), bad.join("; ")));
    }
    for (lo, hi) in orderings {
        let mut bad = Vec::new();
        for n in 0..=max_n {
            if let (Some(a), Some(b)) = (cell(cells, lo, n), cell(cells, hi, n)) {
                if a > b + ORDER_TOL {
                    bad.push(format!("n={n}: {a} > {b}"));
                }
            }
        }
        checks.push(Check::new(format!("q*[{lo}] <= q*[{hi}]"), bad.is_empty(), bad.join("; ")));
    }
    checks
}

/// The Table I dominance orderings as `(lower cost, higher cost)` pairs.
pub const TABLE1_ORDERINGS: [(&str, &str); 4] = [
    ("theta_E", "theta_D"),
    ("theta_D", "theta_B"),
    ("theta_B", "theta_A"),
    ("theta_D", "theta_C"),
];

pub const TABLE1_PROFILES: [&str; 5] = ["theta_A", "theta_B", "theta_C", "theta_D", "theta_E"];

/// A random instance small enough for the brute-force oracle.
pub fn random_tiny(rng: &mut ChaCha8Rng) -> (DispatchProblem, Grid) {
    let horizon = rng.gen_range(1..=3usize);
    let n = rng.gen_range(1..=2usize);
    let per_slot = match horizon {
        1 => rng.gen_range(2..=9usize),
        2 => 3,
        _ => 2,
    };
    let demand: Vec<f64> = (0..horizon).map(|_| 5.0 * rng.gen_range(0..=4) as f64).collect();
    let slots: Vec<Vec<f64>> = (0..horizon)
        .map(|_| {
            let start = 10.0 * rng.gen_range(0..=1) as f64;
            (0..per_slot).map(|k| start + 10.0 * k as f64).collect()
        })
        .collect();
    let rates = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (0..horizon).map(|_| rng.gen_range(lo..hi)).collect::<Vec<_>>();
    let generator = CostForm::linear(rates(rng, 5.0, 35.0));
    let reserves = if rng.gen_bool(0.5) {
        CostForm::asym_lin_quad(rates(rng, 20.0, 40.0))
    } else {
        CostForm::linear(rates(rng, 20.0, 40.0))
    };
    let capacity = if rng.gen_bool(0.5) { 10.0 } else { 5.0 };
    let params = (0..n)
        .map(|_| {
            if rng.gen_bool(0.2) {
                DeadlineDistribution::point_mass(horizon, rng.gen_range(1..=horizon)).expect("slot in range")
            } else {
                random_pmf(rng, horizon, 0.0)
            }
        })
        .collect();
    let problem = DispatchProblem {
        demand,
        evs: vec![EvSpec::binary(capacity); n],
        params,
        costs: CostModel { generator, reserves },
        ev_energy_value: rng.gen_range(0.0..0.06),
    };
    (problem, Grid::Product(slots))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCase {
    pub index: usize,
    pub horizon: usize,
    pub n_evs: usize,
    pub grid_size: usize,
    pub solver: f64,
    pub oracle: f64,
}

/// Solver against brute force on `count` random tiny instances.
pub fn dp_vs_oracle(count: usize, seed: u64) -> Result<Vec<OracleCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances: Vec<(usize, DispatchProblem, Grid)> = (0..count)
        .map(|k| {
            let (p, g) = random_tiny(&mut rng);
            (k, p, g)
        })
        .collect();
    exec::map_collect(instances, |(index, problem, grid)| -> Result<OracleCase> {
        let solver = solve_on_grid(&problem, &grid, &SolverConfig::default())?.q_star;
        let oracle = brute_force_oracle(&problem, &grid)?;
        Ok(OracleCase {
            index,
            horizon: problem.horizon(),
            n_evs: problem.evs.len(),
            grid_size: grid.size() as usize,
            solver,
            oracle,
        })
    })
    .into_iter()
    .collect()
}

/// A random instance for the monotonicity and Lipschitz suites.
pub fn random_small(rng: &mut ChaCha8Rng) -> DispatchProblem {
    let horizon = 3;
    let n = rng.gen_range(1..=2usize);
    let rates = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (0..horizon).map(|_| rng.gen_range(lo..hi)).collect::<Vec<_>>();
    DispatchProblem {
        demand: (0..horizon).map(|_| rng.gen_range(0.0..25.0)).collect(),
        evs: vec![EvSpec::binary(10.0); n],
        params: (0..n).map(|_| random_pmf(rng, horizon, 0.02)).collect(),
        costs: CostModel {
            generator: CostForm::linear(rates(rng, 5.0, 35.0)),
            reserves: CostForm::asym_lin_quad(rates(rng, 20.0, 40.0)),
        },
        ev_energy_value: rng.gen_range(0.0..0.06),
    }
}

/// A distribution whose CDF is `max(F_lambda, F_other)`, so it dominates `lambda`.
pub fn dominating(lambda: &DeadlineDistribution, other: &DeadlineDistribution) -> Result<DeadlineDistribution> {
    let mut prev = 0.0;
    let pmf = (1..=lambda.horizon())
        .map(|t| {
            let f = lambda.cdf_at(t).max(other.cdf_at(t));
            let p = f - prev;
            prev = f;
            p.max(0.0)
        })
        .collect();
    DeadlineDistribution::normalized(pmf, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairCase {
    pub index: usize,
    /// `alpha(theta, phi)` with `theta` the dominating (earlier) law.
    pub alpha: f64,
    pub q_theta: f64,
    pub q_phi: f64,
    pub k_hat: f64,
    pub monotone: bool,
    pub lipschitz: bool,
}

/// Random dominated pairs on EV 0 of random small instances.
pub fn dominated_pairs(count: usize, seed: u64) -> Result<Vec<PairCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: Vec<(usize, DispatchProblem, DeadlineDistribution, u64)> = (0..count)
        .map(|k| {
            let problem = random_small(&mut rng);
            let other = random_pmf(&mut rng, problem.horizon(), 0.02);
            let theta = dominating(&problem.params[0], &other).expect("valid cdf");
            (k, problem, theta, rng.gen())
        })
        .collect();
    let solver = SolverConfig::default();
    exec::map_collect(cases, |(index, problem, theta, k_seed)| -> Result<PairCase> {
        let phi = problem.params[0].clone();
        debug_assert!(dominates(&theta, &phi).unwrap_or(false));
        let mut with_theta = problem.params.clone();
        with_theta[0] = theta.clone();
        let q_phi = solve_outer(&problem, &solver)?.q_star;
        let q_theta = solve_outer(&problem.with_params(with_theta), &solver)?.q_star;
        let a = alpha(&theta, &phi)?;
        let k_hat = lipschitz_estimate(&problem, &solver, 3, k_seed)?;
        Ok(PairCase {
            index,
            alpha: a,
            q_theta,
            q_phi,
            k_hat,
            monotone: q_theta >= q_phi - ORDER_TOL,
            lipschitz: a <= 0.0 || q_theta - q_phi <= k_hat * a + ORDER_TOL,
        })
    })
    .into_iter()
    .collect()
}

fn single_ev(config: &ConfigFile, theta: &DeadlineDistribution) -> Result<DispatchProblem> {
    let base = config.problem()?;
    let template = config.ev_specs()?.first().cloned().unwrap_or_else(|| EvSpec::binary(10.0));
    Ok(DispatchProblem { evs: vec![template], params: vec![theta.clone()], ..base })
}

/// The config's mechanism schedules over `days`; `j_m` only moves utilities,
/// which these drivers do not inspect.
fn settings(config: &ConfigFile, days: u64, seed: u64) -> SimSettings {
    SimSettings { days, ..config.sim_settings(seed, 0.0) }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissRate {
    pub alpha: f64,
    pub days: u64,
    pub miss_rate: f64,
    pub penalty_count: u64,
}

/// An EV whose bid is one slot later than its truth, steering its reports
/// onto the bid histogram.
pub fn histogram_adversary_miss_rate(config: &ConfigFile, truth: &str, days: u64, seed: u64) -> Result<MissRate> {
    let theta = config.profile(truth)?;
    let phi = sim::shift_later(&theta)?;
    let problem = single_ev(config, &theta)?;
    let strategy = BiddingStrategy { day_ahead_bid: phi.clone(), realtime_rule: RealtimeRule::HistogramMatch(None) };
    let out = sim::run_horizon(&problem, &[strategy], &config.solver_config(), &settings(config, days, seed))?;
    let acc = &out.diagnostics.accounts[0];
    Ok(MissRate { alpha: alpha(&theta, &phi)?, days, miss_rate: acc.miss_rate(), penalty_count: acc.penalty_count })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LateEvents {
    pub seed: u64,
    /// Penalty events (any EV) strictly after `after_day`.
    pub events: u64,
}

/// Truthful fleets: penalty events after `after_day`, per seed.
pub fn truthful_late_events(config: &ConfigFile, seeds: &[u64], days: u64, after_day: u64) -> Result<Vec<LateEvents>> {
    let problem = config.problem()?;
    let strategies: Vec<BiddingStrategy> = problem.params.iter().map(BiddingStrategy::truthful).collect();
    let da = sim::day_ahead(&problem, problem.params.clone(), &config.solver_config())?;
    exec::map_collect(seeds.to_vec(), |seed| -> Result<LateEvents> {
        let out = sim::replay(&problem, &strategies, &da, &settings(config, days, seed))?;
        let events = out
            .trace
            .rows
            .iter()
            .filter(|r| r.day > after_day)
            .map(|r| r.evs.iter().filter(|e| e.ledger.event).count() as u64)
            .sum();
        Ok(LateEvents { seed, events })
    })
    .into_iter()
    .collect()
}

/// Running average penalty `(1/L) sum_{l<=L} J_p(l) [event l]` of a
/// fixed-slot reporter bidding `bid`.
pub fn fixed_reporter_penalties(config: &ConfigFile, bid: &str, slot: usize, days: u64, seed: u64) -> Result<Vec<f64>> {
    let theta = config.profile(bid)?;
    let problem = single_ev(config, &theta)?;
    let strategy = BiddingStrategy { day_ahead_bid: theta, realtime_rule: RealtimeRule::Fixed(slot) };
    let out = sim::run_horizon(&problem, &[strategy], &config.solver_config(), &settings(config, days, seed))?;
    let mut total = 0.0;
    Ok(out
        .trace
        .rows
        .iter()
        .map(|r| {
            total += r.evs[0].ledger.penalty;
            total / r.day as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;

    #[test]
    fn sweep_flips_at_threshold() {
        let c = preset("example1").unwrap();
        let rows = example1_sweep(&c, &[0.15, 0.2, 0.25]).unwrap();
        assert_eq!(rows[0].g_star, vec![1.0, 0.0]);
        assert_eq!(rows[1].g_star, vec![0.0, 1.0]);
        assert_eq!(rows[2].g_star, vec![0.0, 1.0]);
        assert!(sweep_csv(&rows).starts_with("p,q_star,g_star\n0.15,1.5,1;0\n"));
    }

    #[test]
    fn dominating_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = random_pmf(&mut rng, 4, 0.02);
            let b = random_pmf(&mut rng, 4, 0.02);
            let d = dominating(&a, &b).unwrap();
            assert!(dominates(&d, &a).unwrap());
            assert!(d.pmf().iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn tiny_oracle_agreement_smoke() {
        for case in dp_vs_oracle(3, 11).unwrap() {
            assert!((case.solver - case.oracle).abs() < 1e-9, "{case:?}");
        }
    }
}
