//! Brute-force reference for the two-stage problem.
//!
//! Enumerates every dispatch plan in a grid and every deterministic Markov
//! policy restricted to reachable states, and scores each pair by summing
//! over all deadline profiles. Shares no code with the DP beyond the cost
//! forms.

use std::collections::{BTreeMap, BTreeSet};

use crate::dispatch::{DispatchProblem, Grid};
use crate::error::{Error, Result};

pub const MAX_HORIZON: usize = 3;
pub const MAX_EVS: usize = 2;
pub const MAX_LEVELS: usize = 2;
pub const MAX_GRID: usize = 4096;

type State = Vec<(bool, usize)>;
type Rule = BTreeMap<(usize, State), Vec<usize>>;

struct Oracle<'a> {
    problem: &'a DispatchProblem,
    profiles: Vec<(Vec<usize>, f64)>,
}

impl Oracle<'_> {
    /// Replay `rule` through slot `upto`; returns the state and reserve cost.
    fn simulate(&self, g: &[f64], rule: &Rule, delta: &[usize], upto: usize) -> (State, f64) {
        let p = self.problem;
        let mut s: State = vec![(true, 0); p.evs.len()];
        let mut cost = 0.0;
        for t in 1..=upto {
            let targets = &rule[&(t, s.clone())];
            let mut net = 0.0;
            for (i, lv) in s.iter_mut().enumerate() {
                let h = &p.evs[i].levels;
                net += h[targets[i]] - h[lv.1];
                lv.1 = targets[i];
            }
            cost += p.costs.reserves.slot_cost(t, p.demand[t - 1] + net - g[t - 1]);
            for (i, lv) in s.iter_mut().enumerate() {
                if t >= delta[i] {
                    lv.0 = false;
                }
            }
        }
        (s, cost)
    }

    fn expected(&self, g: &[f64], rule: &Rule) -> f64 {
        let p = self.problem;
        let horizon = p.horizon();
        self.profiles
            .iter()
            .map(|(delta, w)| {
                let (s, c) = self.simulate(g, rule, delta, horizon);
                let stored: f64 = s.iter().enumerate().map(|(i, lv)| p.evs[i].levels[lv.1]).sum();
                w * (c - p.ev_energy_value * stored)
            })
            .sum()
    }

    fn search(&self, g: &[f64], t: usize, rule: &mut Rule) -> f64 {
        if t > self.problem.horizon() {
            return self.expected(g, rule);
        }
        let reachable: BTreeSet<State> = self
            .profiles
            .iter()
            .map(|(delta, _)| self.simulate(g, rule, delta, t - 1).0)
            .collect();
        let reachable: Vec<State> = reachable.into_iter().collect();
        let choices: Vec<Vec<Vec<usize>>> = reachable
            .iter()
            .map(|s| {
                let mut out: Vec<Vec<usize>> = vec![Vec::new()];
                for (i, &(c, l)) in s.iter().enumerate() {
                    let opts: Vec<usize> =
                        if c { (0..self.problem.evs[i].levels.len()).collect() } else { vec![l] };
                    out = out
                        .into_iter()
                        .flat_map(|pre| {
                            opts.iter().map(move |&o| {
                                let mut v = pre.clone();
                                v.push(o);
                                v
                            })
                        })
                        .collect();
                }
                out
            })
            .collect();
        let mut pick = vec![0usize; reachable.len()];
        let mut best = f64::INFINITY;
        loop {
            for (k, s) in reachable.iter().enumerate() {
                rule.insert((t, s.clone()), choices[k][pick[k]].clone());
            }
            best = best.min(self.search(g, t + 1, rule));
            let mut k = pick.len();
            loop {
                if k == 0 {
                    for s in &reachable {
                        rule.remove(&(t, s.clone()));
                    }
                    return best;
                }
                k -= 1;
                pick[k] += 1;
                if pick[k] < choices[k].len() {
                    break;
                }
                pick[k] = 0;
            }
        }
    }
}

fn profiles(problem: &DispatchProblem) -> Vec<(Vec<usize>, f64)> {
    let horizon = problem.horizon();
    let mut out: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
    for p in &problem.params {
        out = out
            .into_iter()
            .flat_map(|(pre, w)| {
                (1..=horizon).filter_map(move |t| {
                    let q = p.prob(t);
                    (q > 0.0).then(|| {
                        let mut v = pre.clone();
                        v.push(t);
                        (v, w * q)
                    })
                })
            })
            .collect();
    }
    out
}

/// Minimum expected cost over the grid and all deterministic Markov policies.
pub fn brute_force_oracle(problem: &DispatchProblem, grid: &Grid) -> Result<f64> {
    problem.validate()?;
    if problem.horizon() > MAX_HORIZON
        || problem.evs.len() > MAX_EVS
        || problem.evs.iter().any(|e| e.levels.len() > MAX_LEVELS)
        || grid.size() > MAX_GRID as f64
    {
        return Err(Error::OracleTooLarge(format!(
            "T={}, n={}, grid={} exceeds T<={MAX_HORIZON}, n<={MAX_EVS}, |H|<={MAX_LEVELS}, grid<={MAX_GRID}",
            problem.horizon(),
            problem.evs.len(),
            grid.size()
        )));
    }
    let oracle = Oracle { problem, profiles: profiles(problem) };
    let mut best = f64::INFINITY;
    for g in grid.plans() {
        let c = problem.costs.generator.plan_cost(&g);
        if !c.is_finite() {
            continue;
        }
        best = best.min(c + oracle.search(&g, 1, &mut Rule::new()));
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::NoFeasibleDispatch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{CostForm, CostModel, JointEntry};
    use crate::mdp::EvSpec;
    use crate::prob::DeadlineDistribution;

    #[test]
    fn example1_sweep() {
        for k in 0..5 {
            let p = 0.1 + 0.05 * k as f64;
            let problem = DispatchProblem {
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
            };
            let grid = Grid::List(problem.costs.generator.joint_plans().unwrap());
            let v = brute_force_oracle(&problem, &grid).unwrap();
            assert!((v - (10.0 * p).min(2.0)).abs() < 1e-12, "p={p}: {v}");
        }
    }

    #[test]
    fn no_evs_is_grid_minimum() {
        let problem = DispatchProblem {
            demand: vec![5.0, 10.0],
            evs: vec![],
            params: vec![],
            costs: CostModel {
                generator: CostForm::linear(vec![10.0, 10.0]),
                reserves: CostForm::asym_lin_quad(vec![20.0, 20.0]),
            },
            ev_energy_value: 1.0,
        };
        let grid = Grid::Product(vec![vec![0.0, 10.0], vec![0.0, 10.0]]);
        // g=(0,10): 0.1 + reserves 0.1 ; g=(10,10): 0.2 + absorb 5^2*20/1000 = 0.5
        let v = brute_force_oracle(&problem, &grid).unwrap();
        assert!((v - 0.2).abs() < 1e-12);
    }

    #[test]
    fn guard() {
        let problem = DispatchProblem {
            demand: vec![0.0; 4],
            evs: vec![],
            params: vec![],
            costs: CostModel {
                generator: CostForm::linear(vec![1.0; 4]),
                reserves: CostForm::linear(vec![1.0; 4]),
            },
            ev_energy_value: 1.0,
        };
        let grid = Grid::Product(vec![vec![0.0]; 4]);
        assert!(matches!(brute_force_oracle(&problem, &grid), Err(Error::OracleTooLarge(_))));
    }
}
