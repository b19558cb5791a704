//! Finite-horizon MDP of the EV-integrated system.
//!
//! Each EV contributes a local state `(connected, level)`; the system state is
//! the product, stored densely with a mixed-radix index (EV 0 most
//! significant). Value tables are `T + 1` flat layers, policies are `T` flat
//! layers of per-EV target levels.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::prob::{DeadlineProfile, ParamVector};

/// Relative slack under which two candidate values count as tied.
pub(crate) const TIE_TOL: f64 = 1e-12;

/// Profile-enumeration guard for exact expectations.
pub const ENUMERATION_LIMIT: f64 = 1e7;

pub(crate) fn improves(candidate: f64, best: f64) -> bool {
    if best == f64::INFINITY {
        return candidate < f64::INFINITY;
    }
    candidate < best - TIE_TOL * best.abs().max(1.0)
}

/// Battery capacity and admissible stored-energy levels (kWh).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvSpec {
    pub capacity: f64,
    pub levels: Vec<f64>,
}

impl EvSpec {
    pub fn new(capacity: f64, levels: Vec<f64>) -> Result<Self> {
        let spec = Self { capacity, levels };
        spec.validate()?;
        Ok(spec)
    }

    /// Levels `{0, capacity}`.
    pub fn binary(capacity: f64) -> Self {
        Self { capacity, levels: vec![0.0, capacity] }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return Err(Error::InvalidEv(format!("capacity {} must be positive", self.capacity)));
        }
        if self.levels.first() != Some(&0.0) {
            return Err(Error::InvalidEv("levels must start at 0".into()));
        }
        if self.levels.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::InvalidEv("levels must be strictly increasing".into()));
        }
        if self.levels.iter().any(|&h| !h.is_finite() || h > self.capacity) {
            return Err(Error::InvalidEv("levels must lie in [0, capacity]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvState {
    pub connected: bool,
    pub charge: f64,
}

pub type SystemState = Vec<EvState>;

/// Per-EV charge deltas (kWh).
pub type ActionVector = Vec<f64>;

/// Inputs of one inner problem: a fixed dispatch `g` against demand `d`.
#[derive(Debug, Clone)]
pub struct MdpModel {
    pub demand: Vec<f64>,
    pub dispatch: Vec<f64>,
    pub evs: Vec<EvSpec>,
    pub params: ParamVector,
    pub costs: CostModel,
    /// Dollars per kWh left in an EV at departure.
    pub ev_energy_value: f64,
}

impl MdpModel {
    pub fn horizon(&self) -> usize {
        self.demand.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.horizon();
        if t == 0 {
            return Err(Error::InvalidModel("horizon must be at least 1".into()));
        }
        if self.dispatch.len() != t {
            return Err(Error::InvalidModel(format!(
                "dispatch has {} slots, demand has {t}",
                self.dispatch.len()
            )));
        }
        if self.dispatch.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(Error::InvalidModel("dispatch entries must be finite and >= 0".into()));
        }
        if self.demand.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidModel("demand entries must be finite".into()));
        }
        if self.evs.len() != self.params.len() {
            return Err(Error::InvalidModel(format!(
                "{} EV specs but {} deadline distributions",
                self.evs.len(),
                self.params.len()
            )));
        }
        for (i, p) in self.params.iter().enumerate() {
            if p.horizon() != t {
                return Err(Error::InvalidModel(format!(
                    "EV {i} distribution has horizon {}, expected {t}",
                    p.horizon()
                )));
            }
        }
        for ev in &self.evs {
            ev.validate()?;
        }
        self.costs.validate(t)
    }

    pub fn initial_state(&self) -> SystemState {
        vec![EvState { connected: true, charge: 0.0 }; self.evs.len()]
    }
}

/// Dense indexing of the product state space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    levels: Vec<Vec<f64>>,
    stride: Vec<usize>,
    size: usize,
}

impl StateSpace {
    pub fn new(evs: &[EvSpec]) -> Self {
        let levels: Vec<Vec<f64>> = evs.iter().map(|e| e.levels.clone()).collect();
        let mut stride = vec![0; levels.len()];
        let mut size = 1usize;
        for i in (0..levels.len()).rev() {
            stride[i] = size;
            size *= 2 * levels[i].len();
        }
        Self { levels, stride, size }
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn n_evs(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self, ev: usize) -> &[f64] {
        &self.levels[ev]
    }

    /// Local index: disconnected levels first, then connected levels.
    fn local(&self, ev: usize, connected: bool, level: usize) -> usize {
        usize::from(connected) * self.levels[ev].len() + level
    }

    pub fn encode_parts(&self, parts: &[(bool, usize)]) -> usize {
        parts
            .iter()
            .enumerate()
            .map(|(i, &(c, l))| self.stride[i] * self.local(i, c, l))
            .sum()
    }

    pub fn decode_parts(&self, index: usize) -> Vec<(bool, usize)> {
        (0..self.n_evs())
            .map(|i| {
                let local = (index / self.stride[i]) % (2 * self.levels[i].len());
                let n = self.levels[i].len();
                (local >= n, local % n)
            })
            .collect()
    }

    pub fn level_index(&self, ev: usize, charge: f64) -> Option<usize> {
        self.levels[ev].iter().position(|&h| (h - charge).abs() <= 1e-9 * h.abs().max(1.0))
    }

    pub fn encode(&self, state: &[EvState]) -> Option<usize> {
        let mut parts = Vec::with_capacity(state.len());
        for (i, s) in state.iter().enumerate() {
            parts.push((s.connected, self.level_index(i, s.charge)?));
        }
        Some(self.encode_parts(&parts))
    }

    pub fn decode(&self, index: usize) -> SystemState {
        self.decode_parts(index)
            .into_iter()
            .enumerate()
            .map(|(i, (connected, l))| EvState { connected, charge: self.levels[i][l] })
            .collect()
    }

    pub fn initial_index(&self) -> usize {
        self.encode_parts(&vec![(true, 0); self.n_evs()])
    }
}

/// Feasible action vectors in lexicographic order (EV 0 first, ascending deltas).
pub fn feasible_actions(state: &[EvState], evs: &[EvSpec]) -> Vec<ActionVector> {
    let per_ev: Vec<Vec<f64>> = state
        .iter()
        .zip(evs)
        .map(|(s, e)| {
            if s.connected {
                e.levels.iter().map(|h| h - s.charge).collect()
            } else {
                vec![0.0]
            }
        })
        .collect();
    let mut out: Vec<ActionVector> = vec![Vec::new()];
    for choices in &per_ev {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                choices.iter().map(move |&a| {
                    let mut v = prefix.clone();
                    v.push(a);
                    v
                })
            })
            .collect();
    }
    out
}

/// One-EV kernel for the transition from the end of slot `t` to the end of
/// slot `t + 1`.
pub fn transition_prob(
    from: EvState,
    action: f64,
    to: EvState,
    t: usize,
    dist: &crate::prob::DeadlineDistribution,
) -> Result<f64> {
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
    if !from.connected {
        let stay = !to.connected && same(to.charge, from.charge);
        return Ok(if stay { 1.0 } else { 0.0 });
    }
    let hz = dist.hazard(t).ok_or(Error::UnreachableState { ev: 0, slot: t })?;
    if !same(to.charge, from.charge + action) {
        return Ok(0.0);
    }
    Ok(if to.connected { 1.0 - hz } else { hz })
}

/// Reserve cost at slot `t` for mismatch `d + sum(a) - g`.
pub fn stage_cost(model: &MdpModel, t: usize, action: &[f64]) -> f64 {
    let net: f64 = action.iter().sum();
    let mismatch = model.demand[t - 1] + net - model.dispatch[t - 1];
    model.costs.reserves.slot_cost(t, mismatch)
}

/// Negative stored energy at departure, in dollars.
pub fn terminal_cost(state: &[EvState], ev_energy_value: f64) -> f64 {
    -ev_energy_value * state.iter().map(|s| s.charge).sum::<f64>()
}

/// `values[t][state]` for `t` in `0..=T`; `+inf` marks infeasible or
/// zero-probability states.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub values: Vec<Vec<f64>>,
}

impl ValueTable {
    pub fn get(&self, t: usize, state: usize) -> f64 {
        self.values[t][state]
    }
}

/// Deterministic Markov policy: per slot and state, the target level of each EV.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovPolicy {
    space: StateSpace,
    targets: Vec<Vec<u16>>,
}

impl MarkovPolicy {
    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn horizon(&self) -> usize {
        self.targets.len()
    }

    /// Target level indices for slot `t` (1-based) in `state`.
    pub fn targets(&self, t: usize, state: usize) -> &[u16] {
        let n = self.space.n_evs();
        &self.targets[t - 1][state * n..(state + 1) * n]
    }

    pub fn action_at(&self, t: usize, state: usize) -> ActionVector {
        let parts = self.space.decode_parts(state);
        self.targets(t, state)
            .iter()
            .enumerate()
            .map(|(i, &tgt)| {
                let lv = self.space.levels(i);
                lv[tgt as usize] - lv[parts[i].1]
            })
            .collect()
    }

    pub fn action(&self, t: usize, state: &[EvState]) -> Option<ActionVector> {
        Some(self.action_at(t, self.space.encode(state)?))
    }

    /// A policy that never moves any EV.
    pub fn idle(space: StateSpace, horizon: usize) -> Self {
        let n = space.n_evs();
        let layer: Vec<u16> = (0..space.len())
            .flat_map(|s| space.decode_parts(s).into_iter().map(|(_, l)| l as u16))
            .collect();
        debug_assert_eq!(layer.len(), space.len() * n);
        Self { targets: vec![layer; horizon], space }
    }

    /// Build from an explicit rule `(t, state) -> target levels`.
    pub fn from_fn(
        space: StateSpace,
        horizon: usize,
        mut rule: impl FnMut(usize, usize) -> Vec<u16>,
    ) -> Self {
        let targets = (1..=horizon)
            .map(|t| (0..space.len()).flat_map(|s| rule(t, s)).collect())
            .collect();
        Self { space, targets }
    }
}

/// Precomputed per-state data shared by every backward layer.
#[derive(Debug, Clone)]
pub(crate) struct Kernel {
    pub(crate) space: StateSpace,
    horizon: usize,
    demand: Vec<f64>,
    /// `hazard[i][t]`, transition out of slot `t`; `None` if EV `i` cannot
    /// still be connected after `t`.
    hazard: Vec<Vec<Option<f64>>>,
    reserves: crate::cost::CostForm,
    terminal: Vec<f64>,
    decoded: Vec<Vec<(bool, usize)>>,
    /// State index with every connected EV at level 0, so adding
    /// `stride_i * level` selects a connected level.
    post_base: Vec<usize>,
    /// Stored energy over connected EVs.
    connected_charge: Vec<f64>,
    initial: usize,
}

impl Kernel {
    pub(crate) fn new(model: &MdpModel) -> Self {
        let space = StateSpace::new(&model.evs);
        let horizon = model.horizon();
        let hazard = model
            .params
            .iter()
            .map(|p| (0..horizon).map(|t| p.hazard(t)).collect())
            .collect();
        let decoded: Vec<_> = (0..space.len()).map(|s| space.decode_parts(s)).collect();
        let terminal = decoded
            .iter()
            .map(|parts| {
                -model.ev_energy_value
                    * parts.iter().enumerate().map(|(i, &(_, l))| space.levels(i)[l]).sum::<f64>()
            })
            .collect();
        let post_base = decoded
            .iter()
            .map(|parts| {
                let zeroed: Vec<(bool, usize)> =
                    parts.iter().map(|&(c, l)| if c { (true, 0) } else { (false, l) }).collect();
                space.encode_parts(&zeroed)
            })
            .collect();
        let connected_charge = decoded
            .iter()
            .map(|parts| {
                parts
                    .iter()
                    .enumerate()
                    .filter(|(_, (c, _))| *c)
                    .map(|(i, &(_, l))| space.levels(i)[l])
                    .sum()
            })
            .collect();
        let initial = space.initial_index();
        Self {
            horizon,
            demand: model.demand.clone(),
            hazard,
            reserves: model.costs.reserves.clone(),
            terminal,
            decoded,
            post_base,
            connected_charge,
            initial,
            space,
        }
    }

    pub(crate) fn horizon(&self) -> usize {
        self.horizon
    }

    pub(crate) fn terminal(&self) -> &[f64] {
        &self.terminal
    }

    /// `W(s) = E[v_{t+1}(s') | s]` where `s` is the state right after the
    /// slot-`t+1` action, before departures are drawn.
    pub(crate) fn expectation(&self, t: usize, v_next: &[f64]) -> Vec<f64> {
        let mut w = v_next.to_vec();
        for i in 0..self.space.n_evs() {
            let n = self.space.levels(i).len();
            let stride = self.space.stride[i];
            for s in 0..w.len() {
                let (connected, _) = self.decoded[s][i];
                if !connected {
                    continue;
                }
                // disconnected twin: local index drops by n
                let off = s - stride * n;
                w[s] = match self.hazard[i][t] {
                    None => f64::INFINITY,
                    Some(0.0) => w[s],
                    Some(1.0) => w[off],
                    Some(hz) => hz * w[off] + (1.0 - hz) * w[s],
                };
            }
        }
        w
    }

    fn zero_survival(&self, t: usize, s: usize) -> bool {
        self.decoded[s]
            .iter()
            .enumerate()
            .any(|(i, &(c, _))| c && self.hazard[i][t].is_none())
    }

    /// Minimize over feasible actions at slot `t + 1` from state `s` at time
    /// `t`. Writes the chosen target levels into `targets` and returns the
    /// value.
    fn best_action(&self, t: usize, g_slot: f64, w: &[f64], s: usize, targets: &mut [u16]) -> f64 {
        let parts = &self.decoded[s];
        for (i, &(_, l)) in parts.iter().enumerate() {
            targets[i] = l as u16;
        }
        if self.zero_survival(t, s) {
            return f64::INFINITY;
        }
        let conn: Vec<usize> = (0..parts.len()).filter(|&i| parts[i].0).collect();
        let slot = t + 1;
        let base_mismatch = self.demand[t] - g_slot - self.connected_charge[s];
        let mut odo = vec![0usize; conn.len()];
        let mut best = f64::INFINITY;
        loop {
            let mut post = self.post_base[s];
            let mut stored = 0.0;
            for (k, &i) in conn.iter().enumerate() {
                post += self.space.stride[i] * odo[k];
                stored += self.space.levels(i)[odo[k]];
            }
            let stage = self.reserves.slot_cost(slot, base_mismatch + stored);
            if stage.is_finite() {
                let val = stage + w[post];
                if improves(val, best) {
                    best = val;
                    for (k, &i) in conn.iter().enumerate() {
                        targets[i] = odo[k] as u16;
                    }
                }
            }
            // advance odometer, last connected EV fastest
            let mut k = conn.len();
            loop {
                if k == 0 {
                    return best;
                }
                k -= 1;
                odo[k] += 1;
                if odo[k] < self.space.levels(conn[k]).len() {
                    break;
                }
                odo[k] = 0;
            }
        }
    }

    /// Full backward layer: `v_t` for every state, optionally recording targets.
    pub(crate) fn layer(&self, t: usize, g_slot: f64, w: &[f64], mut policy: Option<&mut Vec<u16>>) -> Vec<f64> {
        let n = self.space.n_evs();
        let mut scratch = vec![0u16; n];
        let mut out = Vec::with_capacity(self.space.len());
        if let Some(p) = policy.as_deref_mut() {
            p.clear();
            p.reserve(self.space.len() * n);
        }
        for s in 0..self.space.len() {
            out.push(self.best_action(t, g_slot, w, s, &mut scratch));
            if let Some(p) = policy.as_deref_mut() {
                p.extend_from_slice(&scratch);
            }
        }
        out
    }

    /// `v_0` at the initial state only.
    pub(crate) fn initial_value(&self, g_slot: f64, w: &[f64]) -> f64 {
        let mut scratch = vec![0u16; self.space.n_evs()];
        self.best_action(0, g_slot, w, self.initial, &mut scratch)
    }

    /// Value-only backward pass for a whole dispatch plan.
    pub(crate) fn initial_value_for(&self, dispatch: &[f64]) -> f64 {
        let mut v = self.terminal.clone();
        for t in (1..self.horizon).rev() {
            let w = self.expectation(t, &v);
            v = self.layer(t, dispatch[t], &w, None);
        }
        let w = self.expectation(0, &v);
        self.initial_value(dispatch[0], &w)
    }
}

#[derive(Debug, Clone)]
pub struct DpSolution {
    pub values: ValueTable,
    pub policy: MarkovPolicy,
}

impl DpSolution {
    pub fn initial_value(&self) -> f64 {
        self.values.values[0][self.policy.space.initial_index()]
    }
}

/// Backward induction over every state.
pub fn solve_dp(model: &MdpModel) -> Result<DpSolution> {
    model.validate()?;
    let kernel = Kernel::new(model);
    let horizon = kernel.horizon();
    let mut values = vec![Vec::new(); horizon + 1];
    let mut targets = vec![Vec::new(); horizon];
    values[horizon] = kernel.terminal().to_vec();
    for t in (0..horizon).rev() {
        let w = kernel.expectation(t, &values[t + 1]);
        values[t] = kernel.layer(t, model.dispatch[t], &w, Some(&mut targets[t]));
    }
    let solution = DpSolution {
        values: ValueTable { values },
        policy: MarkovPolicy { space: kernel.space.clone(), targets },
    };
    if !solution.initial_value().is_finite() {
        let (t, s) = deepest_infeasible(model, &solution);
        return Err(Error::NoFeasibleContinuation {
            t,
            state: format_state(&solution.policy.space.decode(s)),
        });
    }
    Ok(solution)
}

fn format_state(state: &[EvState]) -> String {
    let inner: Vec<String> = state
        .iter()
        .map(|s| format!("({},{})", u8::from(s.connected), s.charge))
        .collect();
    format!("[{}]", inner.join(","))
}

fn deepest_infeasible(model: &MdpModel, sol: &DpSolution) -> (usize, usize) {
    let dists = forward_distribution(model, &sol.policy);
    let mut found = (0, sol.policy.space.initial_index());
    for (t, layer) in dists.iter().enumerate().take(model.horizon()) {
        for (s, &p) in layer.iter().enumerate() {
            if p > 0.0 && !sol.values.values[t][s].is_finite() {
                found = (t, s);
            }
        }
    }
    found
}

/// State distribution at the end of each slot `0..=T` under `policy`.
pub fn forward_distribution(model: &MdpModel, policy: &MarkovPolicy) -> Vec<Vec<f64>> {
    let space = policy.space();
    let horizon = model.horizon();
    let mut layers = vec![vec![0.0; space.len()]; horizon + 1];
    layers[0][space.initial_index()] = 1.0;
    for t in 0..horizon {
        let (head, tail) = layers.split_at_mut(t + 1);
        let cur = &head[t];
        let next = &mut tail[0];
        for (s, &p) in cur.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let parts = space.decode_parts(s);
            let tg = policy.targets(t + 1, s);
            // enumerate departures of connected EVs
            let mut outcomes: Vec<(Vec<(bool, usize)>, f64)> = vec![(Vec::new(), p)];
            for (i, &(c, _)) in parts.iter().enumerate() {
                let lvl = tg[i] as usize;
                let mut next_out = Vec::with_capacity(outcomes.len() * 2);
                for (pre, q) in outcomes {
                    if !c {
                        let mut v = pre.clone();
                        v.push((false, parts[i].1));
                        next_out.push((v, q));
                        continue;
                    }
                    let hz = model.params[i].hazard(t).unwrap_or(1.0);
                    if hz > 0.0 {
                        let mut v = pre.clone();
                        v.push((false, lvl));
                        next_out.push((v, q * hz));
                    }
                    if hz < 1.0 {
                        let mut v = pre;
                        v.push((true, lvl));
                        next_out.push((v, q * (1.0 - hz)));
                    }
                }
                outcomes = next_out;
            }
            for (parts2, q) in outcomes {
                next[space.encode_parts(&parts2)] += q;
            }
        }
    }
    layers
}

/// Result of replaying a policy against one departure profile.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `storage[i][t - 1]`: charge of EV `i` at the end of slot `t`.
    pub storage: Vec<Vec<f64>>,
    /// `d(t) + net charging(t) - g(t)`; positive means the reserves produce.
    pub mismatch: Vec<f64>,
    pub reserve_cost: f64,
    /// Charge of each EV when it leaves.
    pub terminal_charge: Vec<f64>,
}

/// Apply `policy` from the initial state with EV `j` leaving after slot `reported[j]`.
pub fn rollout(model: &MdpModel, policy: &MarkovPolicy, reported: &[usize]) -> Rollout {
    let space = policy.space();
    let n = model.evs.len();
    let horizon = model.horizon();
    let mut parts: Vec<(bool, usize)> = vec![(true, 0); n];
    let mut storage = vec![Vec::with_capacity(horizon); n];
    let mut mismatch = Vec::with_capacity(horizon);
    let mut reserve_cost = 0.0;
    for t in 1..=horizon {
        let s = space.encode_parts(&parts);
        let tg = policy.targets(t, s);
        let mut net = 0.0;
        for i in 0..n {
            let lv = space.levels(i);
            let to = if parts[i].0 { tg[i] as usize } else { parts[i].1 };
            net += lv[to] - lv[parts[i].1];
            parts[i].1 = to;
        }
        let m = model.demand[t - 1] + net - model.dispatch[t - 1];
        reserve_cost += model.costs.reserves.slot_cost(t, m);
        mismatch.push(m);
        for i in 0..n {
            if t >= reported[i] {
                parts[i].0 = false;
            }
            storage[i].push(space.levels(i)[parts[i].1]);
        }
    }
    let terminal_charge = storage.iter().map(|s| *s.last().unwrap_or(&0.0)).collect();
    Rollout { storage, mismatch, reserve_cost, terminal_charge }
}

/// `c^g(g) + reserve cost - value * sum of departure charges` for one profile.
pub fn beta(model: &MdpModel, policy: &MarkovPolicy, delta: &[usize]) -> f64 {
    let r = rollout(model, policy, delta);
    model.costs.generator.plan_cost(&model.dispatch) + r.reserve_cost
        - model.ev_energy_value * r.terminal_charge.iter().sum::<f64>()
}

/// How profile expectations are computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpectationMode {
    Exact,
    /// Opt-in sampling fallback for fleets too large to enumerate.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Every profile with positive probability, with its probability.
pub fn enumerate_profiles(params: &ParamVector) -> Result<Vec<(DeadlineProfile, f64)>> {
    let horizon = params.first().map_or(1, |p| p.horizon());
    let needed = (horizon as f64).powi(params.len() as i32);
    if needed > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge { needed, limit: ENUMERATION_LIMIT });
    }
    let mut out: Vec<(DeadlineProfile, f64)> = vec![(Vec::new(), 1.0)];
    for p in params {
        let mut next = Vec::with_capacity(out.len() * horizon);
        for (prefix, q) in &out {
            for t in 1..=horizon {
                let pt = p.prob(t);
                if pt > 0.0 {
                    let mut v = prefix.clone();
                    v.push(t);
                    next.push((v, q * pt));
                }
            }
        }
        out = next;
    }
    Ok(out)
}

fn profile_expectation(
    params: &ParamVector,
    mode: ExpectationMode,
    mut f: impl FnMut(&[usize]) -> f64,
) -> Result<f64> {
    match mode {
        ExpectationMode::Exact => Ok(enumerate_profiles(params)?
            .iter()
            .map(|(d, p)| p * f(d))
            .sum()),
        ExpectationMode::MonteCarlo { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = samples.max(1);
            let mut acc = 0.0;
            for _ in 0..n {
                let d: Vec<usize> = params.iter().map(|p| p.sample(&mut rng)).collect();
                acc += f(&d);
            }
            Ok(acc / n as f64)
        }
    }
}

/// `E[charge of EV i at departure]` over profiles drawn from the model's params.
pub fn expected_terminal_charge(
    model: &MdpModel,
    policy: &MarkovPolicy,
    ev: usize,
    mode: ExpectationMode,
) -> Result<f64> {
    if ev >= model.evs.len() {
        return Err(Error::EvIndexOutOfRange { index: ev, count: model.evs.len() });
    }
    profile_expectation(&model.params, mode, |d| rollout(model, policy, d).terminal_charge[ev])
}

/// Same expectation by propagating the state distribution forward.
pub fn expected_terminal_charge_forward(model: &MdpModel, policy: &MarkovPolicy, ev: usize) -> f64 {
    let dist = forward_distribution(model, policy);
    let space = policy.space();
    dist[model.horizon()]
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(s, &p)| p * space.levels(ev)[space.decode_parts(s)[ev].1])
        .sum()
}

pub fn expected_reserve_cost(model: &MdpModel, policy: &MarkovPolicy, mode: ExpectationMode) -> Result<f64> {
    profile_expectation(&model.params, mode, |d| rollout(model, policy, d).reserve_cost)
}

pub fn expected_beta(model: &MdpModel, policy: &MarkovPolicy, mode: ExpectationMode) -> Result<f64> {
    profile_expectation(&model.params, mode, |d| beta(model, policy, d))
}

/// JSON artifact of a value table and policy. Infinite values serialize as null.
pub fn policy_artifact(solution: &DpSolution) -> serde_json::Value {
    let mut policy = BTreeMap::new();
    let p = &solution.policy;
    for t in 1..=p.horizon() {
        for s in 0..p.space().len() {
            policy.insert(format!("{t},{s}"), p.action_at(t, s));
        }
    }
    serde_json::json!({
        "values": solution.values.values,
        "policy": policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{CostForm, JointEntry};
    use crate::prob::DeadlineDistribution;

    pub(crate) fn example1(p: f64, dispatch: [f64; 2]) -> MdpModel {
        MdpModel {
            demand: vec![0.0, 1.0],
            dispatch: dispatch.to_vec(),
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
    fn feasible_action_examples() {
        let evs = vec![EvSpec::binary(10.0)];
        let c0 = EvState { connected: true, charge: 0.0 };
        assert_eq!(feasible_actions(&[c0], &evs), vec![vec![0.0], vec![10.0]]);
        let d10 = EvState { connected: false, charge: 10.0 };
        assert_eq!(feasible_actions(&[d10], &evs), vec![vec![0.0]]);
        let two = vec![EvSpec::binary(10.0); 2];
        assert_eq!(
            feasible_actions(&[c0, c0], &two),
            vec![vec![0.0, 0.0], vec![0.0, 10.0], vec![10.0, 0.0], vec![10.0, 10.0]]
        );
    }

    #[test]
    fn kernel_examples() {
        let a = DeadlineDistribution::new(vec![0.2; 5], 0.0).unwrap();
        let c = |h| EvState { connected: true, charge: h };
        let d = |h| EvState { connected: false, charge: h };
        assert!((transition_prob(c(0.0), 10.0, d(10.0), 0, &a).unwrap() - 0.2).abs() < 1e-12);
        assert!((transition_prob(c(0.0), 10.0, d(10.0), 3, &a).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(transition_prob(d(10.0), 0.0, d(10.0), 2, &a).unwrap(), 1.0);
        assert_eq!(transition_prob(c(0.0), 10.0, d(0.0), 0, &a).unwrap(), 0.0);
        let p1 = DeadlineDistribution::point_mass(5, 1).unwrap();
        assert!(matches!(
            transition_prob(c(0.0), 0.0, c(0.0), 1, &p1),
            Err(Error::UnreachableState { .. })
        ));
    }

    #[test]
    fn stage_and_terminal_examples() {
        let m = example1(0.19, [0.0, 0.0]);
        assert_eq!(stage_cost(&m, 1, &[0.0]), 0.0);
        assert_eq!(stage_cost(&m, 2, &[0.0]), 11.0);
        assert_eq!(terminal_cost(&[EvState { connected: false, charge: 0.0 }], 1.0), 0.0);
        let two = [
            EvState { connected: false, charge: 10.0 },
            EvState { connected: true, charge: 0.0 },
        ];
        assert_eq!(terminal_cost(&two, 1.0), -10.0);
        assert_eq!(terminal_cost(&[EvState { connected: false, charge: 1.0 }], 1.0), -1.0);
    }

    #[test]
    fn dp_example1() {
        let m = example1(0.19, [1.0, 0.0]);
        let sol = solve_dp(&m).unwrap();
        assert!((sol.initial_value() - 1.9).abs() < 1e-12);
        assert_eq!(sol.policy.action(1, &m.initial_state()).unwrap(), vec![1.0]);

        let r = rollout(&m, &sol.policy, &[2]);
        assert_eq!(r.storage[0], vec![1.0, 0.0]);
        assert_eq!(r.mismatch, vec![0.0, 0.0]);
        assert_eq!(r.reserve_cost, 0.0);
        let r = rollout(&m, &sol.policy, &[1]);
        assert_eq!(r.storage[0], vec![1.0, 1.0]);
        assert_eq!(r.mismatch, vec![0.0, 1.0]);
        assert_eq!(r.reserve_cost, 11.0);

        let e = expected_terminal_charge(&m, &sol.policy, 0, ExpectationMode::Exact).unwrap();
        assert!((e - 0.19).abs() < 1e-12);
        let f = expected_terminal_charge_forward(&m, &sol.policy, 0);
        assert!((e - f).abs() < 1e-9);
        let eb = expected_beta(&m, &sol.policy, ExpectationMode::Exact).unwrap();
        assert!((eb - 1.9).abs() < 1e-12);
    }

    #[test]
    fn dp_empty_fleet() {
        let m = MdpModel {
            demand: vec![0.0; 3],
            dispatch: vec![0.0; 3],
            evs: vec![],
            params: vec![],
            costs: CostModel {
                generator: CostForm::linear(vec![10.0; 3]),
                reserves: CostForm::linear(vec![20.0; 3]),
            },
            ev_energy_value: 1.0,
        };
        let sol = solve_dp(&m).unwrap();
        assert_eq!(sol.initial_value(), 0.0);
    }

    #[test]
    fn infeasible_dispatch_reports_state() {
        assert!((solve_dp(&example1(0.19, [0.0, 0.0])).unwrap().initial_value() - 11.0).abs() < 1e-12);
        let m = example1(0.19, [0.0, 5.0]);
        match solve_dp(&m) {
            Err(Error::NoFeasibleContinuation { t, .. }) => assert_eq!(t, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn idle_policy_mismatch_is_demand_minus_dispatch() {
        let mut m = example1(0.5, [1.0, 0.0]);
        m.costs.reserves = CostForm::linear(vec![1.0, 1.0]);
        let idle = MarkovPolicy::idle(StateSpace::new(&m.evs), 2);
        let r = rollout(&m, &idle, &[2]);
        assert_eq!(r.mismatch, vec![-1.0, 1.0]);
        assert_eq!(
            expected_terminal_charge(&m, &idle, 0, ExpectationMode::Exact).unwrap(),
            0.0
        );
    }

    #[test]
    fn state_space_roundtrip() {
        let evs = vec![EvSpec::binary(10.0), EvSpec::new(5.0, vec![0.0, 2.5, 5.0]).unwrap()];
        let sp = StateSpace::new(&evs);
        assert_eq!(sp.len(), 4 * 6);
        for s in 0..sp.len() {
            assert_eq!(sp.encode(&sp.decode(s)), Some(s));
        }
        assert_eq!(sp.decode(sp.initial_index()), vec![EvState { connected: true, charge: 0.0 }; 2]);
    }

    #[test]
    fn artifact_shape() {
        let m = example1(0.19, [1.0, 0.0]);
        let sol = solve_dp(&m).unwrap();
        let v = policy_artifact(&sol);
        assert_eq!(v["values"].as_array().unwrap().len(), 3);
        let init = sol.policy.space().initial_index();
        assert_eq!(v["policy"][format!("1,{init}")], serde_json::json!([1.0]));
    }
}
