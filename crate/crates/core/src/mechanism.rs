//! Day-ahead VCG payments and end-of-day settlement with empirical windows.

use serde::{Deserialize, Serialize};

use crate::dispatch::{DispatchProblem, SolveResult};
use crate::error::{Error, Result};
use crate::fmt::fmt_sig;
use crate::mdp::{self, ExpectationMode};
use crate::prob::DeadlineDistribution;

/// Tolerance on the two routes to the day-ahead payment.
pub const VCG_TOL: f64 = 1e-9;

/// `r(l) = scale * sqrt(gamma ln(l + 1) / l)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSchedule {
    pub gamma: f64,
    pub scale: f64,
}

impl Default for WindowSchedule {
    fn default() -> Self {
        Self { gamma: 1.0, scale: 1.0 }
    }
}

impl WindowSchedule {
    pub fn new(gamma: f64, scale: f64) -> Result<Self> {
        let w = Self { gamma, scale };
        w.validate()?;
        Ok(w)
    }

    /// `scale < 1` would eventually drop below `sqrt(gamma ln l / l)`.
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.5) {
            return Err(Error::InvalidMechanism(format!("gamma {} must exceed 0.5", self.gamma)));
        }
        if !(self.scale.is_finite() && self.scale >= 1.0) {
            return Err(Error::InvalidMechanism(format!(
                "window scale {} must be at least 1",
                self.scale
            )));
        }
        Ok(())
    }

    pub fn window(&self, l: u64) -> f64 {
        let l = l.max(1) as f64;
        self.scale * (self.gamma * (l + 1.0).ln() / l).sqrt()
    }
}

/// `J_p(l) = coefficient * l^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    pub coefficient: f64,
    pub exponent: f64,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self { coefficient: 1.0, exponent: 2.0 }
    }
}

impl PenaltySchedule {
    pub fn new(coefficient: f64, exponent: f64) -> Result<Self> {
        let p = Self { coefficient, exponent };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.exponent.is_finite() && self.exponent > 1.0) {
            return Err(Error::InvalidMechanism(format!(
                "penalty exponent {} must exceed 1",
                self.exponent
            )));
        }
        if !(self.coefficient.is_finite() && self.coefficient > 0.0) {
            return Err(Error::InvalidMechanism(format!(
                "penalty coefficient {} must be positive",
                self.coefficient
            )));
        }
        Ok(())
    }

    pub fn penalty(&self, l: u64) -> f64 {
        self.coefficient * (l as f64).powf(self.exponent)
    }
}

/// Per-EV report counts by slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmpiricalRecord {
    counts: Vec<u64>,
    days: u64,
}

impl EmpiricalRecord {
    pub fn new(horizon: usize) -> Self {
        Self { counts: vec![0; horizon], days: 0 }
    }

    pub fn from_reports(horizon: usize, reports: &[usize]) -> Result<Self> {
        let mut r = Self::new(horizon);
        for &t in reports {
            r.record(t)?;
        }
        Ok(r)
    }

    pub fn record(&mut self, slot: usize) -> Result<()> {
        if slot == 0 || slot > self.counts.len() {
            return Err(Error::SlotOutOfRange { slot, horizon: self.counts.len() });
        }
        self.counts[slot - 1] += 1;
        self.days += 1;
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn days(&self) -> u64 {
        self.days
    }

    pub fn horizon(&self) -> usize {
        self.counts.len()
    }
}

/// `f_t = counts_t / l - P_phi(t)`.
pub fn empirical_deviation(record: &EmpiricalRecord, phi: &DeadlineDistribution) -> Result<Vec<f64>> {
    if record.days == 0 {
        return Err(Error::EmptyRecord);
    }
    if phi.horizon() != record.horizon() {
        return Err(Error::DimensionMismatch { left: record.horizon(), right: phi.horizon() });
    }
    let l = record.days as f64;
    Ok(record
        .counts
        .iter()
        .zip(phi.pmf())
        .map(|(&c, &p)| c as f64 / l - p)
        .collect())
}

pub fn max_abs(f: &[f64]) -> f64 {
    f.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `max_t |f_t| >= r(l)`.
pub fn penalty_event(
    record: &EmpiricalRecord,
    phi: &DeadlineDistribution,
    window: &WindowSchedule,
) -> Result<bool> {
    let f = empirical_deviation(record, phi)?;
    Ok(max_abs(&f) >= window.window(record.days))
}

/// Day-ahead payment of one EV with the pieces of both routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DayAheadPayment {
    pub ev: usize,
    pub p_da: f64,
    pub q_star: f64,
    pub q_star_minus: f64,
    /// `E[charge of EV i at departure]` under the bids, kWh.
    pub expected_charge: f64,
    /// `p_da + value * expected_charge + q_star - q_star_minus`; zero up to rounding.
    pub identity_residual: f64,
}

/// VCG payment of EV `i`: its externality minus the others' expected cost share.
pub fn day_ahead_payment(
    problem: &DispatchProblem,
    i: usize,
    solve: &SolveResult,
    q_star_minus: f64,
) -> Result<DayAheadPayment> {
    let n = problem.evs.len();
    if i >= n {
        return Err(Error::EvIndexOutOfRange { index: i, count: n });
    }
    let model = problem.model(&solve.g_star);
    let mode = ExpectationMode::Exact;
    let charges: Vec<f64> = (0..n)
        .map(|j| mdp::expected_terminal_charge(&model, &solve.policy, j, mode))
        .collect::<Result<_>>()?;
    let reserve = mdp::expected_reserve_cost(&model, &solve.policy, mode)?;
    let others: f64 = charges.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, c)| c).sum();
    let value = problem.ev_energy_value;
    let gen = problem.costs.generator.plan_cost(&solve.g_star);
    let p_da = q_star_minus - (gen + reserve - value * others);
    let via_identity = q_star_minus - solve.q_star - value * charges[i];
    let identity_residual = p_da - via_identity;
    if identity_residual.abs() > VCG_TOL * solve.q_star.abs().max(1.0) {
        return Err(Error::InvalidMechanism(format!(
            "VCG identity off by {identity_residual} for EV {i}"
        )));
    }
    Ok(DayAheadPayment {
        ev: i,
        p_da,
        q_star: solve.q_star,
        q_star_minus,
        expected_charge: charges[i],
        identity_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SettlementResult {
    pub charge_gap: f64,
    pub penalty: f64,
    pub event_triggered: bool,
}

impl SettlementResult {
    pub fn payment(&self) -> f64 {
        self.charge_gap - self.penalty
    }
}

/// End-of-day settlement for day `record.days()`; the record already holds
/// the day's report.
pub fn settlement(
    record: &EmpiricalRecord,
    phi: &DeadlineDistribution,
    expected_charge: f64,
    realized_charge: f64,
    ev_energy_value: f64,
    window: &WindowSchedule,
    penalty: &PenaltySchedule,
) -> Result<SettlementResult> {
    let event = penalty_event(record, phi, window)?;
    Ok(SettlementResult {
        charge_gap: ev_energy_value * (expected_charge - realized_charge),
        penalty: if event { penalty.penalty(record.days()) } else { 0.0 },
        event_triggered: event,
    })
}

/// `p_da + charge_gap - penalty`, summed left to right so a ledger row
/// re-derives it bit for bit.
pub fn total_payment(day_ahead: f64, settlement: &SettlementResult) -> f64 {
    day_ahead + settlement.charge_gap - settlement.penalty
}

/// One ledger line per EV per day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerRow {
    pub day: u64,
    pub ev: usize,
    pub p_da: f64,
    pub charge_gap: f64,
    pub penalty: f64,
    pub event: bool,
    pub total_payment: f64,
}

impl LedgerRow {
    pub const HEADER: &'static str = "day,ev,p_da,charge_gap,penalty,event,total_payment";

    pub fn new(day: u64, ev: usize, p_da: f64, s: &SettlementResult) -> Self {
        Self {
            day,
            ev,
            p_da,
            charge_gap: s.charge_gap,
            penalty: s.penalty,
            event: s.event_triggered,
            total_payment: total_payment(p_da, s),
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.day,
            self.ev,
            fmt_sig(self.p_da, 12),
            fmt_sig(self.charge_gap, 12),
            fmt_sig(self.penalty, 12),
            u8::from(self.event),
            fmt_sig(self.total_payment, 12)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::{q_star_minus, solve_outer, SolverConfig};

    fn theta_a() -> DeadlineDistribution {
        DeadlineDistribution::new(vec![0.2; 5], 0.0).unwrap()
    }

    #[test]
    fn window_values() {
        let w = WindowSchedule::default();
        assert!((w.window(1) - 2f64.ln().sqrt()).abs() < 1e-12);
        assert!((w.window(1) - 0.83255).abs() < 1e-5);
        assert!((w.window(1_000_000) - 0.00371692232).abs() < 1e-10);
        assert!(WindowSchedule::new(1.0, 0.0).is_err());
        assert!(WindowSchedule::new(0.5, 1.0).is_err());
    }

    #[test]
    fn deviation_examples() {
        let half = DeadlineDistribution::new(vec![0.5, 0.25, 0.25], 0.0).unwrap();
        let r = EmpiricalRecord::from_reports(3, &[1, 2, 1, 3]).unwrap();
        assert_eq!(empirical_deviation(&r, &half).unwrap()[0], 0.0);

        let r = EmpiricalRecord::from_reports(5, &[1; 10]).unwrap();
        assert!((empirical_deviation(&r, &theta_a()).unwrap()[0] - 0.8).abs() < 1e-12);

        let r = EmpiricalRecord::from_reports(5, &[2]).unwrap();
        let f = empirical_deviation(&r, &theta_a()).unwrap();
        let want = [-0.2, 0.8, -0.2, -0.2, -0.2];
        for (a, b) in f.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(f.iter().sum::<f64>().abs() < 1e-12);
        assert_eq!(empirical_deviation(&EmpiricalRecord::new(5), &theta_a()), Err(Error::EmptyRecord));
    }

    #[test]
    fn event_examples() {
        let w = WindowSchedule::default();
        for t in 1..=5 {
            let r = EmpiricalRecord::from_reports(5, &[t]).unwrap();
            assert!(!penalty_event(&r, &theta_a(), &w).unwrap());
        }
        for l in 2..50 {
            let r = EmpiricalRecord::from_reports(5, &vec![1; l]).unwrap();
            assert!(penalty_event(&r, &theta_a(), &w).unwrap());
        }
        let r = EmpiricalRecord::from_reports(5, &[1, 2, 3, 4, 5]).unwrap();
        assert!(!penalty_event(&r, &theta_a(), &w).unwrap());
    }

    #[test]
    fn settlement_examples() {
        let w = WindowSchedule::default();
        let j = PenaltySchedule::default();
        let ok = EmpiricalRecord::from_reports(5, &[3]).unwrap();
        let s = settlement(&ok, &theta_a(), 0.5, 0.5, 1.0, &w, &j).unwrap();
        assert_eq!(s.payment(), 0.0);
        let p = DeadlineDistribution::new(vec![0.19, 0.81], 0.0).unwrap();
        let day = EmpiricalRecord::from_reports(2, &[2]).unwrap();
        let s = settlement(&day, &p, 0.19, 0.0, 1.0, &w, &j).unwrap();
        assert!((s.charge_gap - 0.19).abs() < 1e-12);
        assert!(!s.event_triggered);
        assert!((total_payment(-0.09, &s) - 0.1).abs() < 1e-12);
        let dev = EmpiricalRecord::from_reports(5, &[1; 10]).unwrap();
        let s = settlement(&dev, &theta_a(), 0.0, 0.0, 1.0, &w, &j).unwrap();
        assert_eq!(s.penalty, 100.0);
        assert_eq!(total_payment(0.0, &SettlementResult { charge_gap: 0.0, penalty: 0.0, event_triggered: false }), 0.0);
    }

    #[test]
    fn day_ahead_example1() {
        let p = crate::dispatch::tests::example1(0.19);
        let cfg = SolverConfig::default();
        let solve = solve_outer(&p, &cfg).unwrap();
        let qm = q_star_minus(&p, 0, &cfg).unwrap();
        let pay = day_ahead_payment(&p, 0, &solve, qm).unwrap();
        assert!((pay.p_da + 0.09).abs() < 1e-12);
        assert!((pay.expected_charge - 0.19).abs() < 1e-12);

        // p = 0.21: the optimum never charges the EV and drops it without loss
        let p = crate::dispatch::tests::example1(0.21);
        let solve = solve_outer(&p, &cfg).unwrap();
        let qm = q_star_minus(&p, 0, &cfg).unwrap();
        assert!(day_ahead_payment(&p, 0, &solve, qm).unwrap().p_da.abs() < 1e-12);
    }

    #[test]
    fn ledger_row_format() {
        let s = SettlementResult { charge_gap: 0.19, penalty: 0.0, event_triggered: false };
        let row = LedgerRow::new(1, 0, -0.09, &s);
        assert_eq!(row.to_csv(), "1,0,-0.09,0.19,0,0,0.1");
    }
}
