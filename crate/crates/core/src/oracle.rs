//! Brute-force references on small lattices.
//!
//! The searches run on the non-recombining history tree (one node per
//! up/down word) and read only node states and rewards from the lattice, so
//! they share no recursion code with the solvers they check.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{LatticeTree, TimeGrid};
use crate::model::{Mode, ModelSpec};
use crate::scene::{AdaptedProcess, Scene};
use crate::switching::Strategy;

/// Largest lattice depth an enumeration accepts.
pub const MAX_STEPS: usize = 12;
/// Largest number of switches an enumeration accepts.
pub const MAX_SWITCHES: usize = 4;
/// Cap on the number of objects an enumeration may visit.
pub const COUNT_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EnumerationBudget {
    max_steps: usize,
    max_switches: usize,
}

impl EnumerationBudget {
    pub fn new(max_steps: usize, max_switches: usize) -> Result<Self> {
        if max_steps > MAX_STEPS || max_switches > MAX_SWITCHES {
            return Err(Error::BudgetExceeded {
                what: "enumeration budget".into(),
                estimate: max_steps.max(max_switches) as u128,
                limit: MAX_STEPS.min(MAX_SWITCHES) as u128,
            });
        }
        Ok(EnumerationBudget {
            max_steps,
            max_switches,
        })
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn max_switches(&self) -> usize {
        self.max_switches
    }

    fn admit_depth(&self, steps: usize) -> Result<()> {
        if steps > self.max_steps {
            return Err(Error::BudgetExceeded {
                what: "lattice depth".into(),
                estimate: steps as u128,
                limit: self.max_steps as u128,
            });
        }
        Ok(())
    }
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget {
            max_steps: MAX_STEPS,
            max_switches: MAX_SWITCHES,
        }
    }
}

fn lattice_of(scene: &Scene) -> Result<&LatticeTree> {
    match scene {
        Scene::Lattice(t) => Ok(t),
        Scene::Paths(_) => Err(Error::Precondition("exhaustive oracles need a lattice scene".into())),
    }
}

fn node_of(history: usize) -> usize {
    history.count_ones() as usize
}

/// Stopping rule on histories: `stop[k][h]` for each word `h` of length `k`
/// (bit `j` set means an up move at step `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRule {
    pub stop: Vec<Vec<bool>>,
}

impl HistoryRule {
    pub fn stopping_step(&self, scenario: usize) -> Option<usize> {
        (0..self.stop.len()).find(|&k| self.stop[k][scenario & ((1usize << k) - 1)])
    }
}

#[derive(Debug, Clone)]
pub struct StoppingOracle {
    /// `sup_tau E[U_tau]`.
    pub value: f64,
    pub rule: HistoryRule,
    /// `E[U_tau]` of `rule`, recomputed trajectory by trajectory.
    pub rule_value: f64,
    pub histories: usize,
}

/// Best stopping value over all adapted rules by exhaustive search of the
/// history tree. At every history the better of stopping and continuing is
/// kept, which discards only dominated rules.
pub fn enumerate_stopping_values(reward: &AdaptedProcess, budget: &EnumerationBudget) -> Result<StoppingOracle> {
    let tree = lattice_of(reward.scene())?;
    let n = tree.grid().steps();
    budget.admit_depth(n)?;
    let p = tree.p();
    let mut stop = vec![Vec::new(); n + 1];
    let mut value: Vec<f64> = (0..1usize << n).map(|h| reward.at(n, node_of(h))).collect();
    stop[n] = vec![true; 1 << n];
    for k in (0..n).rev() {
        let width = 1usize << k;
        let mut level = Vec::with_capacity(width);
        let mut rule = Vec::with_capacity(width);
        for h in 0..width {
            let go_on = p * value[h | width] + (1.0 - p) * value[h];
            let now = reward.at(k, node_of(h));
            rule.push(now >= go_on);
            level.push(now.max(go_on));
        }
        stop[k] = rule;
        value = level;
    }
    let rule = HistoryRule { stop };
    let rule_value = (0..1usize << n)
        .map(|s| {
            let ups = node_of(s) as i32;
            let weight = p.powi(ups) * (1.0 - p).powi(n as i32 - ups);
            let tau = rule.stopping_step(s).expect("every word stops at the last step");
            weight * reward.at(tau, node_of(s & ((1usize << tau) - 1)))
        })
        .sum();
    Ok(StoppingOracle {
        value: value[0],
        rule,
        rule_value,
        histories: (1usize << (n + 1)) - 1,
    })
}

/// Number of adapted stopping rules of a depth-`n` binary tree:
/// `S(0) = 1`, `S(n) = 1 + S(n - 1)^2`.
pub fn stopping_rule_count(n: usize) -> u128 {
    let mut s: u128 = 1;
    for _ in 0..n {
        s = s.saturating_mul(s).saturating_add(1);
    }
    s
}

/// Values `E[U_tau]` of every adapted stopping rule, without pruning.
pub fn all_stopping_values(reward: &AdaptedProcess) -> Result<Vec<f64>> {
    let tree = lattice_of(reward.scene())?;
    let n = tree.grid().steps();
    let count = stopping_rule_count(n);
    if count > COUNT_LIMIT {
        return Err(Error::BudgetExceeded {
            what: "stopping rules".into(),
            estimate: count,
            limit: COUNT_LIMIT,
        });
    }
    fn values_from(reward: &AdaptedProcess, p: f64, n: usize, k: usize, h: usize) -> Vec<f64> {
        let now = reward.at(k, node_of(h));
        if k == n {
            return vec![now];
        }
        let up = values_from(reward, p, n, k + 1, h | (1 << k));
        let down = values_from(reward, p, n, k + 1, h);
        let mut out = Vec::with_capacity(1 + up.len() * down.len());
        out.push(now);
        for &u in &up {
            for &d in &down {
                out.push(p * u + (1.0 - p) * d);
            }
        }
        out
    }
    Ok(values_from(reward, tree.p(), n, 0, 0))
}

/// An open-loop strategy (switch steps fixed in advance) and its exact gain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpenLoopCandidate {
    pub times: Vec<usize>,
    pub gain: f64,
}

#[derive(Debug, Clone)]
pub struct SwitchingOracle {
    /// Best gain over adapted strategies with at most `max_switches` switches.
    pub value: f64,
    /// An optimal strategy on every lattice trajectory.
    pub best: Strategy,
    /// Every open-loop strategy in budget, with its gain.
    pub open_loop: Vec<OpenLoopCandidate>,
    /// Decision states visited by the adapted search.
    pub explored: usize,
}

impl SwitchingOracle {
    pub fn best_open_loop(&self) -> &OpenLoopCandidate {
        self.open_loop
            .iter()
            .max_by(|a, b| a.gain.total_cmp(&b.gain))
            .expect("the empty strategy is always listed")
    }
}

/// Exhaustive search over switching strategies on a lattice, starting in
/// the old technology. Profit accrues over `N` steps with the exact discount
/// weights; no switching at the horizon and no profit beyond it.
pub fn enumerate_switching_strategies(
    spec: &ModelSpec,
    scene: &Scene,
    budget: &EnumerationBudget,
) -> Result<SwitchingOracle> {
    let tree = lattice_of(scene)?;
    let grid = *tree.grid();
    let n = grid.steps();
    budget.admit_depth(n)?;
    let p = tree.p();
    let cap = budget.max_switches();
    let layers = cap + 1;
    let profit = |m: Mode, k: usize, h: usize| spec.profit_at(m, tree.state(m, k, node_of(h)));

    // value[k][(h * 2 + mode) * layers + used], decision[k][...] = switch now.
    let index = |h: usize, m: Mode, used: usize| (h * 2 + m.index()) * layers + used;
    let mut decision: Vec<Vec<bool>> = vec![Vec::new(); n];
    let mut next = vec![0.0; (1usize << n) * 2 * layers];
    let mut explored = next.len();
    for k in (0..n).rev() {
        let width = 1usize << k;
        let w = grid.discount_weight(spec.beta, k);
        let e = grid.discount(spec.beta, k);
        let mut value = vec![0.0; width * 2 * layers];
        let mut choice = vec![false; width * 2 * layers];
        for h in 0..width {
            for m in Mode::BOTH {
                for used in 0..layers {
                    let hold = |mode: Mode, used: usize| {
                        w * profit(mode, k, h)
                            + p * next[index(h | width, mode, used)]
                            + (1.0 - p) * next[index(h, mode, used)]
                    };
                    let stay = hold(m, used);
                    let i = index(h, m, used);
                    if used < cap {
                        let switch = -e * spec.switching_cost(m) + hold(m.other(), used + 1);
                        choice[i] = switch > stay;
                        value[i] = stay.max(switch);
                    } else {
                        value[i] = stay;
                    }
                }
            }
        }
        explored += value.len();
        decision[k] = choice;
        next = value;
    }
    let best_value = next[index(0, Mode::Old, 0)];

    let switches = (0..1usize << n)
        .map(|s| {
            let mut mode = Mode::Old;
            let mut used = 0;
            let mut times = Vec::new();
            for (k, choice) in decision.iter().enumerate() {
                let h = s & ((1usize << k) - 1);
                if choice[index(h, mode, used)] {
                    times.push(k);
                    mode = mode.other();
                    used += 1;
                }
            }
            times
        })
        .collect();

    Ok(SwitchingOracle {
        value: best_value,
        best: Strategy::new(switches)?,
        open_loop: open_loop_candidates(spec, tree, cap)?,
        explored,
    })
}

fn open_loop_candidates(spec: &ModelSpec, tree: &LatticeTree, cap: usize) -> Result<Vec<OpenLoopCandidate>> {
    let grid = *tree.grid();
    let n = grid.steps();
    let estimate: u128 = (0..=cap.min(n)).map(|j| binomial(n, j)).sum();
    if estimate > COUNT_LIMIT {
        return Err(Error::BudgetExceeded {
            what: "open-loop strategies".into(),
            estimate,
            limit: COUNT_LIMIT,
        });
    }
    // Expected discounted profit of holding each mode over each step.
    let p = tree.p();
    let mut reach = vec![1.0];
    let mut held = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for k in 0..n {
        let w = grid.discount_weight(spec.beta, k);
        for m in Mode::BOTH {
            let mean: f64 = reach
                .iter()
                .enumerate()
                .map(|(j, r)| r * spec.profit_at(m, tree.state(m, k, j)))
                .sum();
            held[m.index()].push(w * mean);
        }
        let mut next = vec![0.0; reach.len() + 1];
        for (j, r) in reach.iter().enumerate() {
            next[j] += (1.0 - p) * r;
            next[j + 1] += p * r;
        }
        reach = next;
    }
    let mut out = Vec::new();
    let mut times = Vec::new();
    fn extend(
        spec: &ModelSpec,
        grid: &TimeGrid,
        held: &[Vec<f64>; 2],
        cap: usize,
        from: usize,
        times: &mut Vec<usize>,
        out: &mut Vec<OpenLoopCandidate>,
    ) {
        let n = grid.steps();
        let mut gain = 0.0;
        let mut mode = Mode::Old;
        let mut next = times.iter().peekable();
        for k in 0..n {
            while next.next_if(|&&t| t == k).is_some() {
                gain -= grid.discount(spec.beta, k) * spec.switching_cost(mode);
                mode = mode.other();
            }
            gain += held[mode.index()][k];
        }
        out.push(OpenLoopCandidate {
            times: times.clone(),
            gain,
        });
        if times.len() == cap {
            return;
        }
        for t in from..n {
            times.push(t);
            extend(spec, grid, held, cap, t + 1, times, out);
            times.pop();
        }
    }
    extend(spec, &grid, &held, cap, 0, &mut times, &mut out);
    Ok(out)
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// `phi(t_k) exp(int_{t_k}^T psi(u) du)` with trapezoidal quadrature.
pub fn gronwall_bound(phi: &[f64], psi: &[f64], grid: &TimeGrid) -> Result<Vec<f64>> {
    let n = grid.steps();
    if phi.len() != n + 1 || psi.len() != n + 1 {
        return Err(Error::Shape(format!(
            "phi and psi need {} grid values, got {} and {}",
            n + 1,
            phi.len(),
            psi.len()
        )));
    }
    for k in 0..n {
        if phi[k + 1] > phi[k] + 1e-15 * phi[k].abs().max(1.0) {
            return Err(Error::Precondition(format!(
                "phi must be nonincreasing, but rises between steps {k} and {}",
                k + 1
            )));
        }
    }
    let mut integral = 0.0;
    let mut out = vec![0.0; n + 1];
    out[n] = phi[n];
    for k in (0..n).rev() {
        integral += 0.5 * (psi[k] + psi[k + 1]) * (grid.time(k + 1) - grid.time(k));
        out[k] = phi[k] * integral.exp();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_tree;
    use crate::switching::{evaluate_gain, GainOptions};

    fn walk(n: usize) -> Scene {
        LatticeTree::standard(&TimeGrid::new(n as f64 * 0.25, n).unwrap()).into()
    }

    #[test]
    fn constant_reward() {
        let u = AdaptedProcess::constant(&walk(4), 3.0).unwrap();
        let o = enumerate_stopping_values(&u, &EnumerationBudget::default()).unwrap();
        assert_eq!(o.value, 3.0);
        assert_eq!(o.rule.stopping_step(5), Some(0));
    }

    #[test]
    fn two_step_example_by_full_enumeration() {
        let u = AdaptedProcess::new(&walk(2), vec![vec![1.0], vec![0.0, 3.0], vec![0.0, 0.0, 5.0]]).unwrap();
        let all = all_stopping_values(&u).unwrap();
        assert_eq!(all.len(), 5);
        let best = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best, 1.5);
        let o = enumerate_stopping_values(&u, &EnumerationBudget::default()).unwrap();
        assert_eq!(o.value, 1.5);
        assert_eq!(o.rule_value, 1.5);
    }

    #[test]
    fn root_maximum_stops_immediately() {
        let u = AdaptedProcess::from_fn(&walk(3), |k, _| if k == 0 { 9.0 } else { 1.0 }).unwrap();
        let o = enumerate_stopping_values(&u, &EnumerationBudget::default()).unwrap();
        assert_eq!(o.value, 9.0);
        assert!(o.rule.stop[0][0]);
    }

    #[test]
    fn rule_counts_and_budgets() {
        assert_eq!(stopping_rule_count(3), 26);
        assert_eq!(stopping_rule_count(4), 677);
        assert_eq!(stopping_rule_count(5), 458_330);
        let u = AdaptedProcess::zeros(&walk(6));
        assert!(matches!(all_stopping_values(&u), Err(Error::BudgetExceeded { .. })));
        let deep = AdaptedProcess::zeros(&walk(13));
        assert_eq!(
            enumerate_stopping_values(&deep, &EnumerationBudget::default())
                .unwrap_err()
                .code(),
            "oracle.budget"
        );
        assert!(EnumerationBudget::new(13, 1).is_err());
        assert!(EnumerationBudget::new(4, 5).is_err());
    }

    fn spec(f: [f64; 2], c01: f64, c10: f64) -> ModelSpec {
        ModelSpec::constant_coefficients(1.0, c01, c10, [0.0; 2], [1.0; 2], f, 0.0)
    }

    #[test]
    fn equal_profits_prefer_the_empty_strategy() {
        let s = spec([1.0, 1.0], 2.0, 1.0);
        let scene: Scene = build_tree(&s, &TimeGrid::new(3.0, 6).unwrap()).unwrap().into();
        let o = enumerate_switching_strategies(&s, &scene, &EnumerationBudget::default()).unwrap();
        assert!(o.best.is_empty());
        assert!(o.best_open_loop().times.is_empty());
        let expected = 1.0 - (-3.0f64).exp();
        assert!((o.value - expected).abs() < 1e-14);
    }

    #[test]
    fn deterministic_instance_switches_at_once() {
        let s = spec([0.0, 1.0], 0.1, 0.05);
        let scene: Scene = build_tree(&s, &TimeGrid::new(12.0, 12).unwrap()).unwrap().into();
        let o = enumerate_switching_strategies(&s, &scene, &EnumerationBudget::new(12, 2).unwrap()).unwrap();
        assert!((o.value - (0.9 - (-12.0f64).exp())).abs() < 1e-12);
        assert_eq!(o.best_open_loop().times, vec![0]);
        assert!((0..o.best.n_scenarios()).all(|sc| o.best.switches(sc) == [0]));
    }

    #[test]
    fn no_switch_budget_lists_only_the_empty_strategy() {
        let s = spec([0.3, 1.0], 0.1, 0.05);
        let scene: Scene = build_tree(&s, &TimeGrid::new(2.0, 5).unwrap()).unwrap().into();
        let o = enumerate_switching_strategies(&s, &scene, &EnumerationBudget::new(5, 0).unwrap()).unwrap();
        assert_eq!(o.open_loop.len(), 1);
        let grid = TimeGrid::new(2.0, 5).unwrap();
        let sum: f64 = (0..5).map(|k| grid.discount_weight(1.0, k) * 0.3).sum();
        assert!((o.value - sum).abs() < 1e-14);
    }

    #[test]
    fn open_loop_gains_agree_with_gain_evaluation() {
        let mut s = spec([0.0, 0.0], 0.3, 0.1);
        s.profit = [
            crate::model::Profit::Saturating {
                scale: 1.0,
                steepness: 1.5,
                shift: 0.0,
                floor: 0.0,
            },
            crate::model::Profit::Constant { value: 0.45 },
        ];
        s.bound_f = s.analytic_profit_bound();
        let scene: Scene = build_tree(&s, &TimeGrid::new(2.0, 5).unwrap()).unwrap().into();
        let o = enumerate_switching_strategies(&s, &scene, &EnumerationBudget::new(5, 3).unwrap()).unwrap();
        assert_eq!(o.open_loop.len(), 1 + 5 + 10 + 10);
        for c in &o.open_loop {
            let st = Strategy::deterministic(32, &c.times).unwrap();
            let g = evaluate_gain(&s, &st, &scene, GainOptions { include_tail: false }).unwrap();
            assert!((g.mean - c.gain).abs() < 1e-13);
            assert!(c.gain <= o.value + 1e-13);
        }
        let g = evaluate_gain(&s, &o.best, &scene, GainOptions { include_tail: false }).unwrap();
        assert!((g.mean - o.value).abs() < 1e-13);
    }

    #[test]
    fn gronwall_examples() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let ones = vec![1.0; 11];
        let b = gronwall_bound(&ones, &ones, &grid).unwrap();
        assert!((b[0] - std::f64::consts::E).abs() < 1e-12);
        let zeros = vec![0.0; 11];
        let phi: Vec<f64> = (0..=10).map(|k| 2.0 - k as f64 * 0.1).collect();
        assert_eq!(gronwall_bound(&phi, &zeros, &grid).unwrap(), phi);
        let long = TimeGrid::new(40.0, 4000).unwrap();
        let decay: Vec<f64> = long.times().iter().map(|t| (-t).exp()).collect();
        let b = gronwall_bound(&decay, &decay, &long).unwrap();
        assert!((b[0] - std::f64::consts::E).abs() < 1e-4);
        let rising: Vec<f64> = (0..=10).map(|k| k as f64).collect();
        assert_eq!(
            gronwall_bound(&rising, &ones, &grid).unwrap_err().code(),
            "oracle.precondition"
        );
    }
}
