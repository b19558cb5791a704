//! JSON configuration and the embedded presets.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{CostForm, CostModel};
use crate::dispatch::{self, AutoTag, CapRule, DispatchProblem, SearchMode, SolverConfig};
use crate::error::{Error, Result};
use crate::mdp::EvSpec;
use crate::mechanism::{PenaltySchedule, WindowSchedule};
use crate::prob::{DeadlineDistribution, ParamVector};
use crate::sim::{self, BiddingStrategy, RealtimeRule, SimSettings};

pub const PRESET_NAMES: [&str; 5] = ["example1", "table1", "fig2", "lemma-checks", "theorem1"];

const EXAMPLE1: &str = include_str!("../presets/example1.json");
const TABLE1: &str = include_str!("../presets/table1.json");
const THEOREM1: &str = include_str!("../presets/theorem1.json");

/// A pmf given inline or by profile name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaSpec {
    Values(Vec<f64>),
    Profile(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvConfig {
    pub capacity_kwh: f64,
    /// Defaults to `{0, capacity}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels_kwh: Option<Vec<f64>>,
    pub theta: ThetaSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JmSpec {
    Value(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MechanismConfig {
    pub gamma: f64,
    pub window_scale: f64,
    pub penalty_coefficient: f64,
    pub penalty_exponent: f64,
    /// Missed-deadline cost; `"auto"` is ten times the sampled Lipschitz bound.
    pub j_m: JmSpec,
    pub lipschitz_trials: usize,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            window_scale: 1.0,
            penalty_coefficient: 1.0,
            penalty_exponent: 2.0,
            j_m: JmSpec::Auto(AutoTag::Auto),
            lipschitz_trials: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub delta_g_kwh: f64,
    pub cap: CapRule,
    pub mode: SearchMode,
    pub max_candidates: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self { delta_g_kwh: d.delta_g, cap: d.cap, mode: d.mode, max_candidates: d.max_candidates }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealtimeConfig {
    Truthful,
    EarlyExit,
    Fixed(usize),
    HistogramMatch {
        #[serde(default)]
        target: Option<ThetaSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    /// `null` bids the true distribution.
    #[serde(default)]
    pub bid: Option<ThetaSpec>,
    pub realtime: RealtimeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryConfig {
    pub name: String,
    #[serde(default)]
    pub bid: Option<ThetaSpec>,
    pub realtime: RealtimeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub days: u64,
    pub seeds: Vec<u64>,
    pub focal_ev: usize,
    /// Empty means everyone is truthful.
    pub strategies: Vec<StrategyConfig>,
    /// Empty means the built-in suite for the focal EV.
    pub adversaries: Vec<AdversaryConfig>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { days: 1000, seeds: vec![1], focal_ev: 0, strategies: vec![], adversaries: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Units {
    /// Dollars per kWh left in an EV at departure.
    pub ev_energy_value: f64,
}

impl Default for Units {
    fn default() -> Self {
        Self { ev_energy_value: 1.0 }
    }
}

fn default_epsilon() -> f64 {
    0.001
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub horizon: usize,
    pub demand_kwh: Vec<f64>,
    pub generator_cost: CostForm,
    pub reserve_cost: CostForm,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub profiles: BTreeMap<String, Vec<f64>>,
    pub evs: Vec<EvConfig>,
    #[serde(default = "default_epsilon")]
    pub epsilon_theta: f64,
    /// Rescale pmfs that miss 1 by rounding before validation.
    #[serde(default)]
    pub renormalize_pmfs: bool,
    #[serde(default)]
    pub mechanism: MechanismConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub units: Units,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Parse and fully validate.
    pub fn load(text: &str) -> Result<Self> {
        let c = Self::from_json(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn resolve_theta(&self, spec: &ThetaSpec, field: &str) -> Result<DeadlineDistribution> {
        let pmf = match spec {
            ThetaSpec::Values(v) => v.clone(),
            ThetaSpec::Profile(name) => self
                .profiles
                .get(name)
                .cloned()
                .ok_or_else(|| cfg_err(format!("{field}: unknown profile \"{name}\"")))?,
        };
        if pmf.len() != self.horizon {
            return Err(cfg_err(format!("{field}: {} entries for horizon {}", pmf.len(), self.horizon)));
        }
        let made = if self.renormalize_pmfs {
            DeadlineDistribution::normalized(pmf, self.epsilon_theta)
        } else {
            DeadlineDistribution::new(pmf, self.epsilon_theta)
        };
        made.map_err(|e| cfg_err(format!("{field}: {e}")))
    }

    pub fn ev_specs(&self) -> Result<Vec<EvSpec>> {
        self.evs
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let levels = e.levels_kwh.clone().unwrap_or_else(|| vec![0.0, e.capacity_kwh]);
                EvSpec::new(e.capacity_kwh, levels).map_err(|err| cfg_err(format!("evs[{i}]: {err}")))
            })
            .collect()
    }

    pub fn thetas(&self) -> Result<ParamVector> {
        self.evs
            .iter()
            .enumerate()
            .map(|(i, e)| self.resolve_theta(&e.theta, &format!("evs[{i}].theta")))
            .collect()
    }

    pub fn profile(&self, name: &str) -> Result<DeadlineDistribution> {
        self.resolve_theta(&ThetaSpec::Profile(name.into()), &format!("profiles.{name}"))
    }

    /// The system with every EV at its true distribution.
    pub fn problem(&self) -> Result<DispatchProblem> {
        Ok(DispatchProblem {
            demand: self.demand_kwh.clone(),
            evs: self.ev_specs()?,
            params: self.thetas()?,
            costs: CostModel { generator: self.generator_cost.clone(), reserves: self.reserve_cost.clone() },
            ev_energy_value: self.units.ev_energy_value,
        })
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            delta_g: self.solver.delta_g_kwh,
            cap: self.solver.cap.clone(),
            mode: self.solver.mode,
            max_candidates: self.solver.max_candidates,
        }
    }

    pub fn window(&self) -> WindowSchedule {
        WindowSchedule { gamma: self.mechanism.gamma, scale: self.mechanism.window_scale }
    }

    pub fn penalty(&self) -> PenaltySchedule {
        PenaltySchedule {
            coefficient: self.mechanism.penalty_coefficient,
            exponent: self.mechanism.penalty_exponent,
        }
    }

    fn rule(&self, r: &RealtimeConfig, field: &str) -> Result<RealtimeRule> {
        Ok(match r {
            RealtimeConfig::Truthful => RealtimeRule::Truthful,
            RealtimeConfig::EarlyExit => RealtimeRule::EarlyExit,
            RealtimeConfig::Fixed(t) => {
                if *t == 0 || *t > self.horizon {
                    return Err(cfg_err(format!("{field}: fixed slot {t} outside 1..={}", self.horizon)));
                }
                RealtimeRule::Fixed(*t)
            }
            RealtimeConfig::HistogramMatch { target } => RealtimeRule::HistogramMatch(
                target.as_ref().map(|t| self.resolve_theta(t, &format!("{field}.target"))).transpose()?,
            ),
        })
    }

    fn strategy(&self, bid: &Option<ThetaSpec>, realtime: &RealtimeConfig, ev: usize, field: &str) -> Result<BiddingStrategy> {
        let theta = self.thetas()?.swap_remove(ev);
        Ok(BiddingStrategy {
            day_ahead_bid: match bid {
                Some(b) => self.resolve_theta(b, &format!("{field}.bid"))?,
                None => theta,
            },
            realtime_rule: self.rule(realtime, &format!("{field}.realtime"))?,
        })
    }

    pub fn strategies(&self) -> Result<Vec<BiddingStrategy>> {
        let s = &self.simulation.strategies;
        if s.is_empty() {
            return Ok(self.thetas()?.iter().map(BiddingStrategy::truthful).collect());
        }
        if s.len() != self.evs.len() {
            return Err(cfg_err(format!(
                "simulation.strategies: {} entries for {} EVs",
                s.len(),
                self.evs.len()
            )));
        }
        s.iter()
            .enumerate()
            .map(|(i, c)| self.strategy(&c.bid, &c.realtime, i, &format!("simulation.strategies[{i}]")))
            .collect()
    }

    pub fn adversaries(&self) -> Result<Vec<(String, BiddingStrategy)>> {
        let focal = self.simulation.focal_ev;
        if focal >= self.evs.len() {
            return Err(cfg_err(format!("simulation.focal_ev {focal} out of range")));
        }
        if self.simulation.adversaries.is_empty() {
            return sim::default_adversaries(&self.thetas()?[focal]);
        }
        self.simulation
            .adversaries
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let s = self.strategy(&a.bid, &a.realtime, focal, &format!("simulation.adversaries[{k}]"))?;
                Ok((a.name.clone(), s))
            })
            .collect()
    }

    /// The missed-deadline cost and, when estimated, the Lipschitz bound behind it.
    pub fn j_m(&self, problem: &DispatchProblem) -> Result<(f64, Option<f64>)> {
        match self.mechanism.j_m {
            JmSpec::Value(v) => Ok((v, None)),
            JmSpec::Auto(_) => {
                let k = lipschitz_estimate(problem, &self.solver_config(), self.mechanism.lipschitz_trials, 0)?;
                Ok((10.0 * k, Some(k)))
            }
        }
    }

    pub fn sim_settings(&self, seed: u64, j_m: f64) -> SimSettings {
        SimSettings {
            days: self.simulation.days,
            seed,
            window: self.window(),
            penalty: self.penalty(),
            j_m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.horizon;
        if t == 0 {
            return Err(cfg_err("horizon: must be at least 1"));
        }
        if self.demand_kwh.len() != t {
            return Err(cfg_err(format!("demand_kwh: {} entries for horizon {t}", self.demand_kwh.len())));
        }
        for (k, &d) in self.demand_kwh.iter().enumerate() {
            if !d.is_finite() || d < 0.0 {
                return Err(cfg_err(format!("demand_kwh[{k}] = {d}: must be finite and nonnegative")));
            }
        }
        self.generator_cost.validate(t, "generator").map_err(|e| cfg_err(format!("generator_cost: {e}")))?;
        self.reserve_cost.validate(t, "reserve").map_err(|e| cfg_err(format!("reserve_cost: {e}")))?;
        if !self.reserve_cost.is_separable() {
            return Err(cfg_err("reserve_cost: joint tables are only allowed for the generator"));
        }
        if !(0.0..=1.0 / t as f64).contains(&self.epsilon_theta) {
            return Err(cfg_err(format!("epsilon_theta = {}: must lie in [0, 1/T]", self.epsilon_theta)));
        }
        if self.epsilon_theta == 0.0 {
            log::warn!("epsilon_theta = 0: deadline distributions may put zero mass on some slots");
        }
        for name in self.profiles.keys() {
            self.profile(name)?;
        }
        self.ev_specs()?;
        self.thetas()?;
        if !(self.units.ev_energy_value.is_finite() && self.units.ev_energy_value >= 0.0) {
            return Err(cfg_err("units.ev_energy_value: must be finite and nonnegative"));
        }
        self.window().validate().map_err(|e| cfg_err(format!("mechanism: {e}")))?;
        self.penalty().validate().map_err(|e| cfg_err(format!("mechanism: {e}")))?;
        if let JmSpec::Value(v) = self.mechanism.j_m {
            if !(v.is_finite() && v >= 0.0) {
                return Err(cfg_err(format!("mechanism.j_m = {v}: must be finite and nonnegative")));
            }
        }
        if !(self.solver.delta_g_kwh.is_finite() && self.solver.delta_g_kwh > 0.0) {
            return Err(cfg_err("solver.delta_g_kwh: must be positive"));
        }
        if let SearchMode::Beam { width: 0 } = self.solver.mode {
            return Err(cfg_err("solver.mode.beam.width: must be at least 1"));
        }
        if let CapRule::PerSlot(c) = &self.solver.cap {
            if c.len() != t {
                return Err(cfg_err(format!("solver.cap: {} entries for horizon {t}", c.len())));
            }
        }
        if self.simulation.days == 0 {
            return Err(cfg_err("simulation.days: must be at least 1"));
        }
        if self.simulation.seeds.is_empty() {
            return Err(cfg_err("simulation.seeds: must list at least one seed"));
        }
        self.strategies()?;
        self.adversaries()?;
        self.check_feasible()
    }

    /// Even the plan closest to demand must have finite cost without EVs.
    fn check_feasible(&self) -> Result<()> {
        let dg = self.solver.delta_g_kwh;
        let plan: Vec<f64> = match &self.generator_cost {
            CostForm::Joint { .. } => self.demand_kwh.clone(),
            _ => self.demand_kwh.iter().map(|d| (d / dg - 1e-9).ceil().max(0.0) * dg).collect(),
        };
        let bare = DispatchProblem { evs: vec![], params: vec![], ..self.problem()? };
        let v = dispatch::beta_bar(&bare, &plan)?;
        if !v.is_finite() {
            return Err(Error::NoFeasibleDispatch);
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.simulation.seeds = vec![seed];
        self
    }
}

/// Random pmf with every entry at least `floor`.
pub fn random_pmf(rng: &mut ChaCha8Rng, horizon: usize, floor: f64) -> DeadlineDistribution {
    let raw: Vec<f64> = (0..horizon).map(|_| -rng.gen_range(1e-9f64..1.0).ln()).collect();
    let total: f64 = raw.iter().sum();
    let free = 1.0 - floor * horizon as f64;
    let pmf = raw.iter().map(|x| floor + free * x / total).collect();
    DeadlineDistribution::normalized(pmf, floor).expect("floored pmf")
}

/// Sampled Lipschitz bound: the configured distributions first, then random ones.
pub fn lipschitz_estimate(problem: &DispatchProblem, solver: &SolverConfig, trials: usize, seed: u64) -> Result<f64> {
    let horizon = problem.horizon();
    let first = problem.params.clone();
    let mut calls = 0usize;
    dispatch::estimate_lipschitz_k(problem, solver, trials.max(1), seed, |rng| {
        calls += 1;
        if calls == 1 {
            first.clone()
        } else {
            (0..first.len()).map(|_| random_pmf(rng, horizon, 0.01)).collect()
        }
    })
}

/// Embedded preset by name; `fig2` and `lemma-checks` share the Table I system.
pub fn preset(name: &str) -> Result<ConfigFile> {
    let text = match name {
        "example1" => EXAMPLE1,
        "table1" | "fig2" | "lemma-checks" => TABLE1,
        "theorem1" => THEOREM1,
        other => {
            return Err(cfg_err(format!(
                "unknown preset \"{other}\" (expected one of {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    ConfigFile::from_json(text)
}
