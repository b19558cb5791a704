//! Production-cost forms for the generator and the reserves.
//!
//! Energies are kWh and money is dollars. Rates are quoted in $/MWh, so a
//! linear term costs `rate * kWh / 1000` and the quadratic absorption term
//! costs `rate * kWh^2 / 1000`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const KEY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateUnits {
    #[serde(rename = "USD_per_MWh")]
    UsdPerMwh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointEntry {
    pub plan: Vec<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum CostForm {
    /// `rate_t * x / 1000` for either sign of `x`.
    Linear { rates: Vec<f64>, rate_units: RateUnits },
    /// Linear on production (`x >= 0`), quadratic on absorption (`x < 0`).
    AsymLinQuad { rates: Vec<f64>, rate_units: RateUnits },
    /// Per-slot lookup of `[energy, cost]` pairs; absent energies are infeasible.
    Table { slots: Vec<Vec<[f64; 2]>> },
    /// Whole-day lookup of dispatch plans; generator only.
    Joint { entries: Vec<JointEntry> },
}

fn same_key(a: f64, b: f64) -> bool {
    (a - b).abs() <= KEY_TOL * a.abs().max(b.abs()).max(1.0)
}

impl CostForm {
    pub fn linear(rates: Vec<f64>) -> Self {
        CostForm::Linear { rates, rate_units: RateUnits::UsdPerMwh }
    }

    pub fn asym_lin_quad(rates: Vec<f64>) -> Self {
        CostForm::AsymLinQuad { rates, rate_units: RateUnits::UsdPerMwh }
    }

    pub fn is_separable(&self) -> bool {
        !matches!(self, CostForm::Joint { .. })
    }

    /// Cost at slot `t` (1-based) of energy `x`; `+inf` when infeasible.
    pub fn slot_cost(&self, t: usize, x: f64) -> f64 {
        match self {
            CostForm::Linear { rates, .. } => rates[t - 1] * x / 1000.0,
            CostForm::AsymLinQuad { rates, .. } => {
                if x >= 0.0 {
                    rates[t - 1] * x / 1000.0
                } else {
                    rates[t - 1] * x * x / 1000.0
                }
            }
            CostForm::Table { slots } => slots[t - 1]
                .iter()
                .find(|[e, _]| same_key(*e, x))
                .map_or(f64::INFINITY, |[_, c]| *c),
            CostForm::Joint { .. } => f64::INFINITY,
        }
    }

    /// Cost of a whole-day sequence.
    pub fn plan_cost(&self, plan: &[f64]) -> f64 {
        match self {
            CostForm::Joint { entries } => entries
                .iter()
                .find(|e| {
                    e.plan.len() == plan.len()
                        && e.plan.iter().zip(plan).all(|(a, b)| same_key(*a, *b))
                })
                .map_or(f64::INFINITY, |e| e.cost),
            _ => plan
                .iter()
                .enumerate()
                .map(|(i, &x)| self.slot_cost(i + 1, x))
                .sum(),
        }
    }

    /// Plans listed by a joint table, sorted lexicographically.
    pub fn joint_plans(&self) -> Option<Vec<Vec<f64>>> {
        match self {
            CostForm::Joint { entries } => {
                let mut plans: Vec<Vec<f64>> = entries.iter().map(|e| e.plan.clone()).collect();
                plans.sort_by(|a, b| lex_cmp(a, b));
                Some(plans)
            }
            _ => None,
        }
    }

    pub fn validate(&self, horizon: usize, what: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(format!("{what} cost: {msg}")));
        match self {
            CostForm::Linear { rates, .. } | CostForm::AsymLinQuad { rates, .. } => {
                if rates.len() != horizon {
                    return bad(format!("{} rates for horizon {horizon}", rates.len()));
                }
                if let Some(r) = rates.iter().find(|r| !r.is_finite()) {
                    return bad(format!("non-finite rate {r}"));
                }
            }
            CostForm::Table { slots } => {
                if slots.len() != horizon {
                    return bad(format!("{} table slots for horizon {horizon}", slots.len()));
                }
                for (t, slot) in slots.iter().enumerate() {
                    for [e, c] in slot {
                        if !e.is_finite() || !c.is_finite() {
                            return bad(format!("non-finite table entry at slot {}", t + 1));
                        }
                    }
                }
            }
            CostForm::Joint { entries } => {
                if entries.is_empty() {
                    return bad("joint table is empty".into());
                }
                for e in entries {
                    if e.plan.len() != horizon || !e.cost.is_finite() {
                        return bad(format!("bad joint entry {:?}", e.plan));
                    }
                    if e.plan.iter().any(|x| !x.is_finite() || *x < 0.0) {
                        return bad(format!("negative or non-finite plan {:?}", e.plan));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Lexicographic order on energy vectors (first slot most significant).
pub fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Generator and reserve cost forms of one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub generator: CostForm,
    pub reserves: CostForm,
}

impl CostModel {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        self.generator.validate(horizon, "generator")?;
        self.reserves.validate(horizon, "reserve")?;
        if !self.reserves.is_separable() {
            return Err(Error::InvalidModel(
                "reserve cost must be additively separable per slot".into(),
            ));
        }
        Ok(())
    }
}
