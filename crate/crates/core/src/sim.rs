//! Multi-day market chronology with strategic EVs.
//!
//! Bids are collected once, the ISO solves and fixes payments, then every day
//! true deadlines are drawn, EVs report, the policy is replayed against the
//! reports and each EV is settled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dispatch::{q_star_minus, solve_outer, DispatchProblem, SolveResult, SolverConfig};
use crate::error::{Error, Result};
use crate::exec;
use crate::fmt::fmt_sig;
use crate::mdp::{self, MdpModel};
use crate::mechanism::{
    self, day_ahead_payment, max_abs, DayAheadPayment, EmpiricalRecord, LedgerRow, PenaltySchedule,
    WindowSchedule,
};
use crate::prob::DeadlineDistribution;

const PLAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum RealtimeRule {
    Truthful,
    Fixed(usize),
    /// Leave at the earliest slot (not after the true deadline) with maximal
    /// planned charge.
    EarlyExit,
    /// Steer the report histogram towards `target`, or the day-ahead bid when `None`.
    HistogramMatch(Option<DeadlineDistribution>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiddingStrategy {
    pub day_ahead_bid: DeadlineDistribution,
    pub realtime_rule: RealtimeRule,
}

impl BiddingStrategy {
    pub fn truthful(theta: &DeadlineDistribution) -> Self {
        Self { day_ahead_bid: theta.clone(), realtime_rule: RealtimeRule::Truthful }
    }
}

/// `-value * h * [reported <= true] + j_m * [reported > true]`.
pub fn ev_cost(true_deadline: usize, reported: usize, terminal_charge: f64, value: f64, j_m: f64) -> f64 {
    if reported > true_deadline {
        j_m
    } else {
        -value * terminal_charge
    }
}

/// The report an EV files given its true deadline.
///
/// `planned[t - 1]` is the charge the EV would leave with if it reported `t`.
pub fn realtime_report(
    rule: &RealtimeRule,
    bid: &DeadlineDistribution,
    true_deadline: usize,
    record: &EmpiricalRecord,
    planned: &[f64],
) -> usize {
    match rule {
        RealtimeRule::Truthful => true_deadline,
        RealtimeRule::Fixed(t) => *t,
        RealtimeRule::EarlyExit => {
            let best = planned[..true_deadline].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (1..=true_deadline)
                .find(|&t| planned[t - 1] >= best - PLAN_TOL)
                .unwrap_or(true_deadline)
        }
        RealtimeRule::HistogramMatch(target) => {
            histogram_match(target.as_ref().unwrap_or(bid), true_deadline, record, planned)
        }
    }
}

fn histogram_match(
    target: &DeadlineDistribution,
    true_deadline: usize,
    record: &EmpiricalRecord,
    planned: &[f64],
) -> usize {
    let horizon = target.horizon();
    let l = record.days();
    let deficit = |t: usize| {
        let share = if l == 0 { 0.0 } else { record.counts()[t - 1] as f64 / l as f64 };
        share - target.prob(t)
    };
    // most underrepresented slot the EV can still honor
    let mut best: Option<usize> = None;
    for t in 1..=true_deadline {
        let d = deficit(t);
        if d >= 0.0 {
            continue;
        }
        best = match best {
            None => Some(t),
            Some(b) => {
                let db = deficit(b);
                if d < db - PLAN_TOL || (d <= db + PLAN_TOL && planned[t - 1] > planned[b - 1] + PLAN_TOL) {
                    Some(t)
                } else {
                    Some(b)
                }
            }
        };
    }
    if let Some(t) = best {
        return t;
    }
    // otherwise the report that leaves the smallest deviation, any slot
    let mut choice = 1;
    let mut choice_dev = f64::INFINITY;
    let mut choice_ok = false;
    for t in 1..=horizon {
        let mut next = record.clone();
        next.record(t).expect("slot in range");
        let dev = max_abs(&mechanism::empirical_deviation(&next, target).expect("nonempty"));
        let ok = t <= true_deadline;
        let better = dev < choice_dev - PLAN_TOL
            || (dev <= choice_dev + PLAN_TOL && ok && !choice_ok);
        if better {
            choice = t;
            choice_dev = dev;
            choice_ok = ok;
        }
    }
    choice
}

/// Long-run bookkeeping for one EV.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AgentAccount {
    pub cumulative_utility: f64,
    pub cumulative_ev_cost: f64,
    pub cumulative_payment: f64,
    pub cumulative_penalty: f64,
    pub penalty_count: u64,
    pub missed_deadlines: u64,
    pub days: u64,
}

impl AgentAccount {
    pub fn average_utility(&self) -> f64 {
        self.cumulative_utility / self.days.max(1) as f64
    }

    pub fn miss_rate(&self) -> f64 {
        self.missed_deadlines as f64 / self.days.max(1) as f64
    }

    pub fn average_penalty(&self) -> f64 {
        self.cumulative_penalty / self.days.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvDay {
    pub true_deadline: usize,
    pub reported: usize,
    pub storage: Vec<f64>,
    pub realized_charge: f64,
    pub ledger: LedgerRow,
    pub ev_cost: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayRow {
    pub day: u64,
    pub evs: Vec<EvDay>,
    pub mismatch: Vec<f64>,
    pub reserve_cost: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimTrace {
    pub rows: Vec<DayRow>,
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| fmt_sig(*x, 12)).collect::<Vec<_>>().join(";")
}

impl SimTrace {
    pub const HEADER: &'static str = "day,kind,ev,true_deadline,reported,storage,p_da,charge_gap,penalty,event,total_payment,ev_cost,utility,mismatch,reserve_cost,beta";

    /// One line per EV per day, then one system line per day.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for row in &self.rows {
            for (i, e) in row.evs.iter().enumerate() {
                let l = &e.ledger;
                out.push_str(&format!(
                    "{},ev,{},{},{},{},{},{},{},{},{},{},{},,,\n",
                    row.day,
                    i,
                    e.true_deadline,
                    e.reported,
                    join(&e.storage),
                    fmt_sig(l.p_da, 12),
                    fmt_sig(l.charge_gap, 12),
                    fmt_sig(l.penalty, 12),
                    u8::from(l.event),
                    fmt_sig(l.total_payment, 12),
                    fmt_sig(e.ev_cost, 12),
                    fmt_sig(e.utility, 12),
                ));
            }
            out.push_str(&format!(
                "{},system,,,,,,,,,,,,{},{},{}\n",
                row.day,
                join(&row.mismatch),
                fmt_sig(row.reserve_cost, 12),
                fmt_sig(row.beta, 12)
            ));
        }
        out
    }

    /// Mechanism ledger: one line per EV per day.
    pub fn ledger_csv(&self) -> String {
        let mut out = String::from(LedgerRow::HEADER);
        out.push('\n');
        for row in &self.rows {
            for e in &row.evs {
                out.push_str(&e.ledger.to_csv());
                out.push('\n');
            }
        }
        out
    }

    pub fn utilities(&self, ev: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.evs[ev].utility).collect()
    }

    pub fn betas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.beta).collect()
    }
}

/// Mean, sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub mean: f64,
    pub std: f64,
    /// `3 std / sqrt(L)`.
    pub half_width: f64,
    /// Mean over the last quarter of days.
    pub last_quartile_mean: f64,
}

impl Band {
    pub fn of(xs: &[f64]) -> Self {
        let (mean, std) = mean_std(xs);
        let q = xs.len() - xs.len() / 4;
        let (last_quartile_mean, _) = mean_std(&xs[q.min(xs.len().saturating_sub(1))..]);
        Self { mean, std, half_width: 3.0 * std / (xs.len().max(1) as f64).sqrt(), last_quartile_mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub days: u64,
    pub q_star_bids: f64,
    pub g_star: Vec<f64>,
    pub beta: Band,
    pub average_reserve_cost: f64,
    pub utility: Vec<Band>,
    pub accounts: Vec<AgentAccount>,
    pub day_ahead: Vec<DayAheadPayment>,
}

#[derive(Debug, Clone)]
pub struct SimSettings {
    pub days: u64,
    pub seed: u64,
    pub window: WindowSchedule,
    pub penalty: PenaltySchedule,
    pub j_m: f64,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub trace: SimTrace,
    pub diagnostics: Diagnostics,
}

/// Output of the day-ahead phase, reusable across seeds.
#[derive(Debug, Clone)]
pub struct DayAhead {
    pub bid_problem: DispatchProblem,
    pub solve: SolveResult,
    pub payments: Vec<DayAheadPayment>,
}

/// Day-ahead phase: solve on the bids and price every EV.
pub fn day_ahead(problem: &DispatchProblem, bids: Vec<DeadlineDistribution>, solver: &SolverConfig) -> Result<DayAhead> {
    let bid_problem = problem.with_params(bids);
    let solve = solve_outer(&bid_problem, solver)?;
    let payments = (0..bid_problem.evs.len())
        .map(|i| {
            let qm = q_star_minus(&bid_problem, i, solver)?;
            day_ahead_payment(&bid_problem, i, &solve, qm)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DayAhead { bid_problem, solve, payments })
}

/// Deterministic per-EV deadline stream.
pub fn ev_rng(seed: u64, ev: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ev as u64 + 1);
    rng
}

/// Replay `days` market days. `problem.params` holds the true deadline laws.
pub fn run_horizon(
    problem: &DispatchProblem,
    strategies: &[BiddingStrategy],
    solver: &SolverConfig,
    settings: &SimSettings,
) -> Result<SimOutcome> {
    let bids: Vec<_> = strategies.iter().map(|s| s.day_ahead_bid.clone()).collect();
    let da = day_ahead(problem, bids, solver)?;
    replay(problem, strategies, &da, settings)
}

/// Market days against an already computed day-ahead phase.
pub fn replay(
    problem: &DispatchProblem,
    strategies: &[BiddingStrategy],
    da: &DayAhead,
    settings: &SimSettings,
) -> Result<SimOutcome> {
    let n = problem.evs.len();
    if strategies.len() != n {
        return Err(Error::InvalidModel(format!("{} strategies for {n} EVs", strategies.len())));
    }
    if settings.days == 0 {
        return Err(Error::InvalidModel("days must be at least 1".into()));
    }
    if strategies.iter().zip(&da.bid_problem.params).any(|(s, b)| &s.day_ahead_bid != b) {
        return Err(Error::InvalidModel("strategies do not match the day-ahead bids".into()));
    }
    settings.window.validate()?;
    settings.penalty.validate()?;
    let run = Replay {
        problem,
        bid_model: da.bid_problem.model(&da.solve.g_star),
        solve: &da.solve,
        payments: &da.payments,
        strategies,
        settings,
    };
    run.days()
}

struct Replay<'a> {
    problem: &'a DispatchProblem,
    bid_model: MdpModel,
    solve: &'a SolveResult,
    payments: &'a [DayAheadPayment],
    strategies: &'a [BiddingStrategy],
    settings: &'a SimSettings,
}

impl Replay<'_> {
    /// Charge EV `i` would leave with if it reported `t` and the others reported truthfully.
    fn planned(&self, i: usize, truth: &[usize]) -> Vec<f64> {
        let horizon = self.problem.horizon();
        (1..=horizon)
            .map(|t| {
                let mut reports = truth.to_vec();
                reports[i] = t;
                mdp::rollout(&self.bid_model, &self.solve.policy, &reports).terminal_charge[i]
            })
            .collect()
    }

    fn days(&self) -> Result<SimOutcome> {
        let n = self.problem.evs.len();
        let horizon = self.problem.horizon();
        let value = self.problem.ev_energy_value;
        let generator = self.problem.costs.generator.plan_cost(&self.solve.g_star);
        let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| ev_rng(self.settings.seed, i)).collect();
        let mut records = vec![EmpiricalRecord::new(horizon); n];
        let mut accounts = vec![AgentAccount::default(); n];
        let mut rows = Vec::with_capacity(self.settings.days as usize);
        for day in 1..=self.settings.days {
            let truth: Vec<usize> = (0..n).map(|i| self.problem.params[i].sample(&mut rngs[i])).collect();
            let reports: Vec<usize> = (0..n)
                .map(|i| {
                    let s = &self.strategies[i];
                    let planned = match s.realtime_rule {
                        RealtimeRule::EarlyExit | RealtimeRule::HistogramMatch(_) => self.planned(i, &truth),
                        _ => vec![0.0; horizon],
                    };
                    realtime_report(&s.realtime_rule, &s.day_ahead_bid, truth[i], &records[i], &planned)
                })
                .collect();
            let roll = mdp::rollout(&self.bid_model, &self.solve.policy, &reports);
            for (i, seq) in roll.storage.iter().enumerate() {
                let frozen = seq[reports[i] - 1];
                if seq[reports[i] - 1..].iter().any(|&h| h != frozen) {
                    return Err(Error::InvalidModel(format!(
                        "EV {i} charged after its reported departure on day {day}"
                    )));
                }
            }
            let beta = generator + roll.reserve_cost - value * roll.terminal_charge.iter().sum::<f64>();
            let mut evs = Vec::with_capacity(n);
            for i in 0..n {
                records[i].record(reports[i])?;
                let realized = roll.terminal_charge[i];
                let s = mechanism::settlement(
                    &records[i],
                    &self.strategies[i].day_ahead_bid,
                    self.payments[i].expected_charge,
                    realized,
                    value,
                    &self.settings.window,
                    &self.settings.penalty,
                )?;
                let ledger = LedgerRow::new(day, i, self.payments[i].p_da, &s);
                let cost = ev_cost(truth[i], reports[i], realized, value, self.settings.j_m);
                let utility = ledger.total_payment - cost;
                let acc = &mut accounts[i];
                acc.days += 1;
                acc.cumulative_utility += utility;
                acc.cumulative_ev_cost += cost;
                acc.cumulative_payment += ledger.total_payment;
                acc.cumulative_penalty += s.penalty;
                acc.penalty_count += u64::from(s.event_triggered);
                acc.missed_deadlines += u64::from(reports[i] > truth[i]);
                evs.push(EvDay {
                    true_deadline: truth[i],
                    reported: reports[i],
                    storage: roll.storage[i].clone(),
                    realized_charge: realized,
                    ledger,
                    ev_cost: cost,
                    utility,
                });
            }
            rows.push(DayRow { day, evs, mismatch: roll.mismatch, reserve_cost: roll.reserve_cost, beta });
        }
        let trace = SimTrace { rows };
        let reserve: Vec<f64> = trace.rows.iter().map(|r| r.reserve_cost).collect();
        let diagnostics = Diagnostics {
            days: self.settings.days,
            q_star_bids: self.solve.q_star,
            g_star: self.solve.g_star.clone(),
            beta: Band::of(&trace.betas()),
            average_reserve_cost: mean_std(&reserve).0,
            utility: (0..n).map(|i| Band::of(&trace.utilities(i))).collect(),
            accounts,
            day_ahead: self.payments.to_vec(),
        };
        Ok(SimOutcome { trace, diagnostics })
    }
}

/// Move every slot's mass one slot earlier (slot 1 absorbs slot 2).
pub fn shift_earlier(theta: &DeadlineDistribution) -> Result<DeadlineDistribution> {
    let p = theta.pmf();
    let mut out = vec![0.0; p.len()];
    for (t, &x) in p.iter().enumerate() {
        out[t.saturating_sub(1)] += x;
    }
    DeadlineDistribution::normalized(out, 0.0)
}

/// Move every slot's mass one slot later (slot T absorbs slot T-1).
pub fn shift_later(theta: &DeadlineDistribution) -> Result<DeadlineDistribution> {
    let p = theta.pmf();
    let mut out = vec![0.0; p.len()];
    for (t, &x) in p.iter().enumerate() {
        out[(t + 1).min(p.len() - 1)] += x;
    }
    DeadlineDistribution::normalized(out, 0.0)
}

/// One adversary per misreport class.
pub fn default_adversaries(theta: &DeadlineDistribution) -> Result<Vec<(String, BiddingStrategy)>> {
    Ok(vec![
        (
            "underbid_shift+histogram_match".into(),
            BiddingStrategy { day_ahead_bid: shift_earlier(theta)?, realtime_rule: RealtimeRule::HistogramMatch(None) },
        ),
        (
            "truthful_bid+early_exit".into(),
            BiddingStrategy { day_ahead_bid: theta.clone(), realtime_rule: RealtimeRule::EarlyExit },
        ),
        (
            "truthful_bid+fixed_1".into(),
            BiddingStrategy { day_ahead_bid: theta.clone(), realtime_rule: RealtimeRule::Fixed(1) },
        ),
        (
            "overbid_shift+histogram_match".into(),
            BiddingStrategy { day_ahead_bid: shift_later(theta)?, realtime_rule: RealtimeRule::HistogramMatch(None) },
        ),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdversaryResult {
    pub name: String,
    pub seed: u64,
    pub adversary_utility: Band,
    pub truthful_utility: Band,
    pub gain: f64,
    pub band: f64,
    pub dsic_violation: bool,
    pub miss_rate: f64,
    pub penalty_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem1Report {
    pub focal_ev: usize,
    pub days: u64,
    pub q_star_truth: f64,
    pub efficiency: Vec<EfficiencyCheck>,
    pub ir: Vec<IrCheck>,
    pub adversaries: Vec<AdversaryResult>,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfficiencyCheck {
    pub seed: u64,
    pub beta: Band,
    pub gap: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IrCheck {
    pub seed: u64,
    pub utility: Band,
    pub pass: bool,
}

/// Finite-horizon check of truthfulness, participation and efficiency for
/// one focal EV against a list of adversaries, others truthful.
pub fn verify_theorem1(
    problem: &DispatchProblem,
    focal: usize,
    adversaries: &[(String, BiddingStrategy)],
    solver: &SolverConfig,
    settings: &SimSettings,
    seeds: &[u64],
) -> Result<Theorem1Report> {
    let truthful: Vec<BiddingStrategy> = problem.params.iter().map(BiddingStrategy::truthful).collect();
    if focal >= truthful.len() {
        return Err(Error::EvIndexOutOfRange { index: focal, count: truthful.len() });
    }
    let truthful_da = day_ahead(problem, problem.params.clone(), solver)?;
    let q_truth = truthful_da.solve.q_star;
    let adversary_da = adversaries
        .iter()
        .map(|(_, s)| {
            let mut bids = problem.params.clone();
            bids[focal] = s.day_ahead_bid.clone();
            day_ahead(problem, bids, solver)
        })
        .collect::<Result<Vec<_>>>()?;
    let run = |strategies: &[BiddingStrategy], da: &DayAhead, seed: u64| {
        replay(problem, strategies, da, &SimSettings { seed, ..settings.clone() })
    };
    let baselines = exec::map_collect(seeds.to_vec(), |seed| run(&truthful, &truthful_da, seed))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut efficiency = Vec::new();
    let mut ir = Vec::new();
    for (seed, out) in seeds.iter().zip(&baselines) {
        let beta = out.diagnostics.beta;
        let gap = (beta.mean - q_truth).abs();
        efficiency.push(EfficiencyCheck { seed: *seed, beta, gap, pass: gap <= beta.half_width + 1e-12 });
        let u = out.diagnostics.utility[focal];
        ir.push(IrCheck { seed: *seed, utility: u, pass: u.mean >= -u.half_width - 1e-12 });
    }
    let cells: Vec<(usize, usize)> = (0..adversaries.len())
        .flat_map(|a| (0..seeds.len()).map(move |s| (a, s)))
        .collect();
    let adv = exec::map_collect(cells, |(a, s)| -> Result<AdversaryResult> {
        let mut strategies = truthful.clone();
        strategies[focal] = adversaries[a].1.clone();
        let out = run(&strategies, &adversary_da[a], seeds[s])?;
        let adversary_utility = out.diagnostics.utility[focal];
        let truthful_utility = baselines[s].diagnostics.utility[focal];
        let gain = adversary_utility.mean - truthful_utility.mean;
        let band = adversary_utility.half_width;
        let acc = &out.diagnostics.accounts[focal];
        Ok(AdversaryResult {
            name: adversaries[a].0.clone(),
            seed: seeds[s],
            adversary_utility,
            truthful_utility,
            gain,
            band,
            dsic_violation: gain > band + 1e-12,
            miss_rate: acc.miss_rate(),
            penalty_count: acc.penalty_count,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let passed = efficiency.iter().all(|e| e.pass)
        && ir.iter().all(|c| c.pass)
        && adv.iter().all(|a| !a.dsic_violation);
    Ok(Theorem1Report {
        focal_ev: focal,
        days: settings.days,
        q_star_truth: q_truth,
        efficiency,
        ir,
        adversaries: adv,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::tests::example1;

    fn settings(days: u64, seed: u64) -> SimSettings {
        SimSettings {
            days,
            seed,
            window: WindowSchedule::default(),
            penalty: PenaltySchedule::default(),
            j_m: 100.0,
        }
    }

    #[test]
    fn ev_cost_examples() {
        assert_eq!(ev_cost(3, 2, 10.0, 1.0, 50.0), -10.0);
        assert_eq!(ev_cost(2, 3, 10.0, 1.0, 50.0), 50.0);
        assert_eq!(ev_cost(3, 3, 0.0, 1.0, 50.0), 0.0);
    }

    #[test]
    fn report_rules() {
        let bid = DeadlineDistribution::uniform(5).unwrap();
        let rec = EmpiricalRecord::new(5);
        let flat = vec![0.0; 5];
        assert_eq!(realtime_report(&RealtimeRule::Truthful, &bid, 4, &rec, &flat), 4);
        assert_eq!(realtime_report(&RealtimeRule::Fixed(1), &bid, 4, &rec, &flat), 1);
        // charged at slot 1 and discharged at slot 2 if still there
        let b = DeadlineDistribution::new(vec![0.19, 0.81], 0.0).unwrap();
        let r2 = EmpiricalRecord::new(2);
        assert_eq!(realtime_report(&RealtimeRule::EarlyExit, &b, 2, &r2, &[1.0, 0.0]), 1);
        assert_eq!(realtime_report(&RealtimeRule::EarlyExit, &b, 2, &r2, &[0.0, 0.0]), 1);
    }

    #[test]
    fn histogram_match_trace() {
        let target = DeadlineDistribution::new(vec![0.5, 0.25, 0.25], 0.0).unwrap();
        let rule = RealtimeRule::HistogramMatch(Some(target));
        let bid = DeadlineDistribution::uniform(3).unwrap();
        let flat = vec![0.0; 3];
        // empty record: every slot is underrepresented, slot 1 most
        let r = EmpiricalRecord::new(3);
        assert_eq!(realtime_report(&rule, &bid, 3, &r, &flat), 1);
        // {1,1}: slots 2 and 3 tie at -0.25, smaller slot wins
        let r = EmpiricalRecord::from_reports(3, &[1, 1]).unwrap();
        assert_eq!(realtime_report(&rule, &bid, 3, &r, &flat), 2);
        // ...unless slot 3 plans more charge
        assert_eq!(realtime_report(&rule, &bid, 3, &r, &[0.0, 0.0, 5.0]), 3);
        // matched record {1,1,2,3}: no deficit, pick slot 1 (post-update max|f| = 0.1)
        let r = EmpiricalRecord::from_reports(3, &[1, 1, 2, 3]).unwrap();
        assert_eq!(realtime_report(&rule, &bid, 3, &r, &flat), 1);
        // with true deadline 1 and only slot 3 short, it misses
        let r = EmpiricalRecord::from_reports(3, &[1, 1, 2]).unwrap();
        assert_eq!(realtime_report(&rule, &bid, 1, &r, &flat), 3);
    }

    #[test]
    fn example1_truthful_short_run() {
        let p = example1(0.19);
        let s = vec![BiddingStrategy::truthful(&p.params[0])];
        let out = run_horizon(&p, &s, &SolverConfig::default(), &settings(1, 7)).unwrap();
        assert_eq!(out.trace.rows.len(), 1);
        let row = &out.trace.rows[0].evs[0];
        let l = &row.ledger;
        assert!((l.total_payment - (l.p_da + l.charge_gap - l.penalty)).abs() < 1e-15);
        assert!((l.p_da + 0.09).abs() < 1e-12);
        assert_eq!(out.trace.ledger_csv().lines().count(), 2);
    }

    #[test]
    fn replay_is_deterministic() {
        let p = example1(0.19);
        let s = vec![BiddingStrategy::truthful(&p.params[0])];
        let a = run_horizon(&p, &s, &SolverConfig::default(), &settings(200, 3)).unwrap();
        let b = run_horizon(&p, &s, &SolverConfig::default(), &settings(200, 3)).unwrap();
        assert_eq!(a.trace.to_csv(), b.trace.to_csv());
        let c = run_horizon(&p, &s, &SolverConfig::default(), &settings(200, 4)).unwrap();
        assert_ne!(a.trace.to_csv(), c.trace.to_csv());
    }

    #[test]
    fn shifts() {
        let a = DeadlineDistribution::uniform(5).unwrap();
        let e = shift_earlier(&a).unwrap();
        assert!((e.pmf()[0] - 0.4).abs() < 1e-12 && e.pmf()[4] == 0.0);
        let l = shift_later(&a).unwrap();
        assert!((l.pmf()[4] - 0.4).abs() < 1e-12 && l.pmf()[0] == 0.0);
        assert!((crate::prob::alpha(&a, &l).unwrap() - 0.2).abs() < 1e-12);
    }
}
