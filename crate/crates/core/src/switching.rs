//! Two-mode optimal switching.
//!
//! The value difference `Y = Y^1 - Y^2` solves a double-barrier reflected
//! equation with driver `f(0, X^0) - f(1, X^1)` and barriers
//! `L = -c01 e^{-beta t}`, `U = c10 e^{-beta t}`. The mode values are then
//! rebuilt from the pushes,
//!
//! `Y^1_k = E[Y^1_{k+1} | F_k] + w_k f(0, X^0_k) + e^{-beta t_k} dK^+_k`,
//! `Y^2_k = E[Y^2_{k+1} | F_k] + w_k f(1, X^1_k) + e^{-beta t_k} dK^-_k`,
//!
//! and the optimal policy switches `0 -> 1` where `Y` sits on `L` and
//! `1 -> 0` where it sits on `U`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Mode, ModelSpec};
use crate::rbsde::{reflect, RbsdeSolution, ReflectedOptions, Reflection};
use crate::scene::{AdaptedProcess, ConditionalExpectation, Scene};

/// Default region tolerance on lattices.
pub const LATTICE_REGION_TOL: f64 = 1e-10;
/// Default region tolerance on regression paths.
pub const PATHS_REGION_TOL: f64 = 1e-3;

pub fn default_region_tol(scene: &Scene) -> f64 {
    if scene.is_lattice() {
        LATTICE_REGION_TOL
    } else {
        PATHS_REGION_TOL
    }
}

/// Node sets where switching is optimal.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchRegions {
    /// `Y <= L + tol`: leave the old technology.
    pub to_new: Vec<Vec<bool>>,
    /// `Y >= U - tol`: return to the old technology.
    pub to_old: Vec<Vec<bool>>,
    pub tol: f64,
}

impl SwitchRegions {
    pub fn leaves(&self, mode: Mode, step: usize, idx: usize) -> bool {
        match mode {
            Mode::Old => self.to_new[step][idx],
            Mode::New => self.to_old[step][idx],
        }
    }

    /// First node where both regions are active.
    pub fn first_overlap(&self) -> Option<(usize, usize)> {
        self.to_new
            .iter()
            .zip(&self.to_old)
            .enumerate()
            .find_map(|(k, (a, b))| a.iter().zip(b).position(|(&x, &y)| x && y).map(|i| (k, i)))
    }
}

#[derive(Debug, Clone)]
pub struct SwitchingSolution {
    /// Value when starting in the old technology.
    pub y1: AdaptedProcess,
    /// Value when starting in the new technology.
    pub y2: AdaptedProcess,
    /// `Y^1 - Y^2`, the reflected solution itself.
    pub ydiff: AdaptedProcess,
    pub rbsde: RbsdeSolution,
    pub regions: SwitchRegions,
    spec: ModelSpec,
}

impl SwitchingSolution {
    pub fn scene(&self) -> &Scene {
        self.ydiff.scene()
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn value(&self, initial: Mode) -> f64 {
        match initial {
            Mode::Old => self.y1.at(0, 0),
            Mode::New => self.y2.at(0, 0),
        }
    }

    /// Regions recomputed for another tolerance.
    pub fn regions_at(&self, tol: f64) -> SwitchRegions {
        regions(&self.spec, &self.ydiff, tol)
    }

    /// Columns: `step,node,time,x0_state,x1_state,Y1,Y2,Ydiff,L,U,dK+,dK-,to_new,to_old`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let scene = self.scene();
        let upper = self.rbsde.upper.as_ref().expect("switching has two barriers");
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "step", "node", "time", "x0_state", "x1_state", "Y1", "Y2", "Ydiff", "L", "U", "dK+", "dK-", "to_new",
            "to_old",
        ])?;
        for k in 0..=scene.steps() {
            for i in 0..scene.width(k) {
                w.write_record([
                    k.to_string(),
                    i.to_string(),
                    scene.grid().time(k).to_string(),
                    scene.state(Mode::Old, k, i).to_string(),
                    scene.state(Mode::New, k, i).to_string(),
                    self.y1.at(k, i).to_string(),
                    self.y2.at(k, i).to_string(),
                    self.ydiff.at(k, i).to_string(),
                    self.rbsde.lower.at(k, i).to_string(),
                    upper.at(k, i).to_string(),
                    self.rbsde.dk_plus.at(k, i).to_string(),
                    self.rbsde.dk_minus.at(k, i).to_string(),
                    u8::from(self.regions.to_new[k][i]).to_string(),
                    u8::from(self.regions.to_old[k][i]).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Switch boundaries in the old-technology state, per step:
    /// `time,lower_boundary,upper_boundary`. One switching region lies at
    /// low states and the other at high states; the lower boundary is the
    /// largest state of the low region, the upper boundary the smallest
    /// state of the high region, and a cell is empty when its region is.
    pub fn boundary_table(&self) -> Vec<BoundaryRow> {
        let scene = self.scene();
        let new_on_top = self.new_region_on_top();
        (0..=scene.steps())
            .map(|k| {
                let xs = scene.states_at(Mode::Old, k);
                let pick = |mask: &[bool], better: fn(f64, f64) -> f64| {
                    xs.iter().zip(mask).filter(|(_, &m)| m).map(|(&x, _)| x).reduce(better)
                };
                let (low, high) = if new_on_top {
                    (&self.regions.to_old[k], &self.regions.to_new[k])
                } else {
                    (&self.regions.to_new[k], &self.regions.to_old[k])
                };
                BoundaryRow {
                    step: k,
                    time: scene.grid().time(k),
                    lower_boundary: pick(low, f64::max),
                    upper_boundary: pick(high, f64::min),
                }
            })
            .collect()
    }

    /// Whether the `0 -> 1` region sits above the `1 -> 0` region, judged by
    /// the mean states of both regions, or by the slope of the profit gap
    /// when either region is empty.
    fn new_region_on_top(&self) -> bool {
        let scene = self.scene();
        let mean = |regions: &[Vec<bool>]| {
            let (mut sum, mut count) = (0.0, 0usize);
            for (k, mask) in regions.iter().enumerate() {
                for (x, _) in scene.states_at(Mode::Old, k).iter().zip(mask).filter(|(_, &m)| m) {
                    sum += x;
                    count += 1;
                }
            }
            (count > 0).then(|| sum / count as f64)
        };
        match (mean(&self.regions.to_new), mean(&self.regions.to_old)) {
            (Some(up), Some(down)) if up != down => up > down,
            _ => {
                let x = self.spec.x0;
                let gap = |x: f64| self.spec.profit_at(Mode::New, x) - self.spec.profit_at(Mode::Old, x);
                gap(x + 1.0) >= gap(x - 1.0)
            }
        }
    }

    pub fn write_boundary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "lower_boundary", "upper_boundary"])?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in self.boundary_table() {
            w.write_record([row.time.to_string(), cell(row.lower_boundary), cell(row.upper_boundary)])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryRow {
    pub step: usize,
    pub time: f64,
    pub lower_boundary: Option<f64>,
    pub upper_boundary: Option<f64>,
}

fn regions(spec: &ModelSpec, ydiff: &AdaptedProcess, tol: f64) -> SwitchRegions {
    let grid = *ydiff.scene().grid();
    let mut to_new = Vec::with_capacity(grid.steps() + 1);
    let mut to_old = Vec::with_capacity(grid.steps() + 1);
    for (k, level) in ydiff.levels().iter().enumerate() {
        let e = grid.discount(spec.beta, k);
        to_new.push(level.iter().map(|&y| y <= -spec.c01 * e + tol).collect());
        to_old.push(level.iter().map(|&y| y >= spec.c10 * e - tol).collect());
    }
    SwitchRegions { to_new, to_old, tol }
}

/// Lower and upper barriers `-c01 e^{-beta t}`, `c10 e^{-beta t}`.
pub fn switching_barriers(spec: &ModelSpec, scene: &Scene) -> Result<(AdaptedProcess, AdaptedProcess)> {
    Ok((
        AdaptedProcess::from_time(scene, |t| -spec.c01 * (-spec.beta * t).exp())?,
        AdaptedProcess::from_time(scene, |t| spec.c10 * (-spec.beta * t).exp())?,
    ))
}

/// Running profit `f(mode, X^mode)` at every node.
pub fn profit_process(spec: &ModelSpec, scene: &Scene, mode: Mode) -> Result<AdaptedProcess> {
    AdaptedProcess::from_fn(scene, |k, i| spec.profit_at(mode, scene.state(mode, k, i)))
}

/// Solves the switching system with the scene's default region tolerance.
pub fn solve_switching(spec: &ModelSpec, ce: &ConditionalExpectation) -> Result<SwitchingSolution> {
    solve_switching_with(spec, ce, default_region_tol(ce.scene()))
}

pub fn solve_switching_with(
    spec: &ModelSpec,
    ce: &ConditionalExpectation,
    region_tol: f64,
) -> Result<SwitchingSolution> {
    check_costs(spec)?;
    let scene = ce.scene();
    let grid = *scene.grid();
    let n = grid.steps();
    let f0 = profit_process(spec, scene, Mode::Old)?;
    let f1 = profit_process(spec, scene, Mode::New)?;
    let driver = f0.zip_with(&f1, |a, b| a - b)?;
    let (lower, upper) = switching_barriers(spec, scene)?;
    let terminal = vec![0.0; scene.width(n)];
    let options = ReflectedOptions::new(spec.beta);
    let rbsde = reflect(
        &driver,
        Some(&lower),
        Some(&upper),
        &terminal,
        ce,
        Reflection::Direct,
        &options,
    )?;

    let push_plus = rbsde.discounted_dk_plus();
    let push_minus = rbsde.discounted_dk_minus();
    let rebuild = |profit: &AdaptedProcess, push: &AdaptedProcess| -> Result<AdaptedProcess> {
        let mut y = vec![Vec::new(); n + 1];
        y[n] = terminal.clone();
        for k in (0..n).rev() {
            let w = grid.discount_weight(spec.beta, k);
            y[k] = ce
                .expect(k, &y[k + 1])
                .into_iter()
                .enumerate()
                .map(|(i, c)| c + w * profit.at(k, i) + push.at(k, i))
                .collect();
        }
        AdaptedProcess::new(scene, y)
    };
    let y1 = rebuild(&f0, &push_plus)?;
    let y2 = rebuild(&f1, &push_minus)?;
    let ydiff = rbsde.y.clone();
    let regions = regions(spec, &ydiff, region_tol);
    Ok(SwitchingSolution {
        y1,
        y2,
        ydiff,
        rbsde,
        regions,
        spec: spec.clone(),
    })
}

fn check_costs(spec: &ModelSpec) -> Result<()> {
    if !(spec.beta > 0.0) {
        return Err(Error::InvalidSpec(format!("beta must be positive, got {}", spec.beta)));
    }
    if !(spec.c01 > spec.c10 && spec.c10 > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "switching costs must satisfy c01 > c10 > 0, got c01 = {}, c10 = {}",
            spec.c01, spec.c10
        )));
    }
    Ok(())
}

/// Coupled obstacle recursion
/// `Y^1 = max(C^1, Y^2 - c01 e^{-beta t})`, `Y^2 = max(C^2, Y^1 - c10 e^{-beta t})`
/// with `C^i` the one-step continuation of mode `i`, iterated to its fixed
/// point at every node. Independent of the reflected solver.
pub fn coupled_obstacle_values(
    spec: &ModelSpec,
    ce: &ConditionalExpectation,
) -> Result<(AdaptedProcess, AdaptedProcess)> {
    check_costs(spec)?;
    let scene = ce.scene();
    let grid = *scene.grid();
    let n = grid.steps();
    let mut y1 = vec![Vec::new(); n + 1];
    let mut y2 = vec![Vec::new(); n + 1];
    y1[n] = vec![0.0; scene.width(n)];
    y2[n] = vec![0.0; scene.width(n)];
    for k in (0..n).rev() {
        let w = grid.discount_weight(spec.beta, k);
        let e = grid.discount(spec.beta, k);
        let c1 = ce.expect(k, &y1[k + 1]);
        let c2 = ce.expect(k, &y2[k + 1]);
        let mut a = Vec::with_capacity(c1.len());
        let mut b = Vec::with_capacity(c1.len());
        for i in 0..c1.len() {
            let base1 = c1[i] + w * spec.profit_at(Mode::Old, scene.state(Mode::Old, k, i));
            let base2 = c2[i] + w * spec.profit_at(Mode::New, scene.state(Mode::New, k, i));
            let (mut v1, mut v2) = (base1, base2);
            loop {
                let n1 = base1.max(v2 - spec.c01 * e);
                let n2 = base2.max(v1 - spec.c10 * e);
                if n1 == v1 && n2 == v2 {
                    break;
                }
                v1 = n1;
                v2 = n2;
            }
            a.push(v1);
            b.push(v2);
        }
        y1[k] = a;
        y2[k] = b;
    }
    Ok((AdaptedProcess::new(scene, y1)?, AdaptedProcess::new(scene, y2)?))
}

/// Switching times per scenario, starting in the old technology.
///
/// Times are nondecreasing step indices and modes alternate. Equal
/// consecutive times express an instantaneous round trip.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    switches: Vec<Vec<usize>>,
    finite_switch_count: bool,
}

impl Strategy {
    pub fn new(switches: Vec<Vec<usize>>) -> Result<Self> {
        for (s, times) in switches.iter().enumerate() {
            if times.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::Shape(format!("switch times of scenario {s} decrease")));
            }
        }
        Ok(Strategy {
            switches,
            finite_switch_count: true,
        })
    }

    pub fn empty(n_scenarios: usize) -> Self {
        Strategy {
            switches: vec![Vec::new(); n_scenarios],
            finite_switch_count: true,
        }
    }

    /// Same switch steps for every scenario.
    pub fn deterministic(n_scenarios: usize, times: &[usize]) -> Result<Self> {
        Self::new(vec![times.to_vec(); n_scenarios])
    }

    /// Marks the strategy as having (or not) finitely many switches; a grid
    /// strategy always does, so `false` only arises synthetically.
    pub fn with_finite_switch_count(mut self, finite: bool) -> Self {
        self.finite_switch_count = finite;
        self
    }

    pub fn finite_switch_count(&self) -> bool {
        self.finite_switch_count
    }

    pub fn n_scenarios(&self) -> usize {
        self.switches.len()
    }

    pub fn switches(&self, scenario: usize) -> &[usize] {
        &self.switches[scenario]
    }

    pub fn is_empty(&self) -> bool {
        self.switches.iter().all(Vec::is_empty)
    }

    pub fn strictly_increasing(&self) -> bool {
        self.switches.iter().all(|t| t.windows(2).all(|w| w[0] < w[1]))
    }

    /// Mode in force on `[t_k, t_{k+1})`: the old technology flipped once per
    /// switch at a step `<= k`.
    pub fn mode_at(&self, scenario: usize, step: usize) -> Mode {
        let flips = self.switches[scenario].iter().filter(|&&t| t <= step).count();
        if flips % 2 == 0 {
            Mode::Old
        } else {
            Mode::New
        }
    }

    pub fn mode_path(&self, scenario: usize, steps: usize) -> Vec<Mode> {
        (0..=steps).map(|k| self.mode_at(scenario, k)).collect()
    }

    /// Appends a round trip at `step` to every scenario.
    pub fn with_round_trip(&self, step: usize) -> Result<Self> {
        let switches = self
            .switches
            .iter()
            .map(|t| {
                let mut t = t.clone();
                let at = t.partition_point(|&x| x <= step);
                t.splice(at..at, [step, step]);
                t
            })
            .collect();
        Ok(Strategy::new(switches)?.with_finite_switch_count(self.finite_switch_count))
    }

    /// Columns: `scenario,switch_index,step,time,from,to`.
    pub fn write_csv<W: Write>(&self, out: W, scene: &Scene) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scenario", "switch_index", "step", "time", "from", "to"])?;
        for (s, times) in self.switches.iter().enumerate() {
            let mut mode = Mode::Old;
            for (j, &k) in times.iter().enumerate() {
                w.write_record([
                    s.to_string(),
                    j.to_string(),
                    k.to_string(),
                    scene.grid().time(k).to_string(),
                    mode.index().to_string(),
                    mode.other().index().to_string(),
                ])?;
                mode = mode.other();
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Walks every scenario forward and switches at the first node of the
/// active region; rejects overlapping regions.
pub fn extract_strategy(sol: &SwitchingSolution, tol: f64) -> Result<Strategy> {
    let regions = sol.regions_at(tol);
    if let Some((step, node)) = regions.first_overlap() {
        return Err(Error::OverlappingRegions { step, node });
    }
    let scene = sol.scene();
    let n = scene.steps();
    let count = scene.n_scenarios()?;
    let switches: Vec<Vec<usize>> = (0..count)
        .into_par_iter()
        .map(|s| {
            let nodes = scene.trajectory(s);
            let mut mode = Mode::Old;
            let mut times = Vec::new();
            for (k, &i) in nodes.iter().enumerate().take(n) {
                if regions.leaves(mode, k, i) {
                    times.push(k);
                    mode = mode.other();
                }
            }
            times
        })
        .collect();
    Strategy::new(switches)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainOptions {
    /// Add `e^{-beta T} f(xi_N, X_N) / beta` for the profit beyond the horizon.
    pub include_tail: bool,
}

impl Default for GainOptions {
    fn default() -> Self {
        GainOptions { include_tail: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainEstimate {
    pub mean: f64,
    /// Zero on lattices, where the mean is exact.
    pub std_error: f64,
    pub n_scenarios: usize,
}

fn scenario_gain(spec: &ModelSpec, strategy: &Strategy, scene: &Scene, s: usize, options: GainOptions) -> f64 {
    let grid = *scene.grid();
    let n = grid.steps();
    let nodes = scene.trajectory(s);
    let mut gain = 0.0;
    for k in 0..n {
        let mode = strategy.mode_at(s, k);
        gain += grid.discount_weight(spec.beta, k) * spec.profit_at(mode, scene.state(mode, k, nodes[k]));
    }
    if options.include_tail {
        let mode = strategy.mode_at(s, n);
        gain += grid.discount(spec.beta, n) * spec.profit_at(mode, scene.state(mode, n, nodes[n])) / spec.beta;
    }
    let mut mode = Mode::Old;
    for &k in strategy.switches(s) {
        gain -= grid.discount(spec.beta, k) * spec.switching_cost(mode);
        mode = mode.other();
    }
    gain
}

/// Discounted profit minus discounted switching costs, averaged over
/// scenarios.
pub fn evaluate_gain(
    spec: &ModelSpec,
    strategy: &Strategy,
    scene: &Scene,
    options: GainOptions,
) -> Result<GainEstimate> {
    let count = scene.n_scenarios()?;
    if strategy.n_scenarios() != count {
        return Err(Error::Shape(format!(
            "strategy covers {} scenarios, scene has {count}",
            strategy.n_scenarios()
        )));
    }
    let gains: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|s| scenario_gain(spec, strategy, scene, s, options))
        .collect();
    let weights: Vec<f64> = (0..count).map(|s| scene.scenario_weight(s)).collect();
    let mean: f64 = gains.iter().zip(&weights).map(|(g, w)| g * w).sum();
    let std_error = if scene.is_lattice() || count < 2 {
        0.0
    } else {
        let var = gains.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
        (var / count as f64).sqrt()
    };
    Ok(GainEstimate {
        mean,
        std_error,
        n_scenarios: count,
    })
}

/// Exact gain of the feedback policy "switch on entering the active
/// region", by backward evaluation. Needs no trajectory enumeration, so it
/// applies to deep lattices.
pub fn evaluate_feedback_gain(
    sol: &SwitchingSolution,
    ce: &ConditionalExpectation,
    options: GainOptions,
) -> Result<f64> {
    let scene = sol.scene();
    if !scene.same_as(ce.scene()) {
        return Err(Error::Shape("solution and expectation use different scenes".into()));
    }
    if let Some((step, node)) = sol.regions.first_overlap() {
        return Err(Error::OverlappingRegions { step, node });
    }
    let spec = &sol.spec;
    let grid = *scene.grid();
    let n = grid.steps();
    let profit = |m: Mode, k: usize, i: usize| spec.profit_at(m, scene.state(m, k, i));
    let mut v: [Vec<f64>; 2] = Mode::BOTH.map(|m| {
        (0..scene.width(n))
            .map(|i| {
                if options.include_tail {
                    grid.discount(spec.beta, n) * profit(m, n, i) / spec.beta
                } else {
                    0.0
                }
            })
            .collect()
    });
    for k in (0..n).rev() {
        let w = grid.discount_weight(spec.beta, k);
        let e = grid.discount(spec.beta, k);
        let cont = [ce.expect(k, &v[0]), ce.expect(k, &v[1])];
        v = Mode::BOTH.map(|m| {
            (0..scene.width(k))
                .map(|i| {
                    if sol.regions.leaves(m, k, i) {
                        let o = m.other();
                        -e * spec.switching_cost(m) + w * profit(o, k, i) + cont[o.index()][i]
                    } else {
                        w * profit(m, k, i) + cont[m.index()][i]
                    }
                })
                .collect()
        });
    }
    Ok(v[0][0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    pub finite_switch_count: bool,
    /// `||f|| / beta`, a bound on the discounted profit integral.
    pub profit_integral_bound: f64,
    /// Expected discounted switching cost.
    pub expected_cost: f64,
    pub max_switches: usize,
}

pub fn check_admissible(spec: &ModelSpec, strategy: &Strategy, scene: &Scene) -> Result<AdmissibilityReport> {
    let count = scene.n_scenarios()?;
    if strategy.n_scenarios() != count {
        return Err(Error::Shape(format!(
            "strategy covers {} scenarios, scene has {count}",
            strategy.n_scenarios()
        )));
    }
    let grid = *scene.grid();
    let mut expected_cost = 0.0;
    let mut max_switches = 0;
    for s in 0..count {
        let mut mode = Mode::Old;
        let mut cost = 0.0;
        for &k in strategy.switches(s) {
            cost += grid.discount(spec.beta, k) * spec.switching_cost(mode);
            mode = mode.other();
        }
        expected_cost += scene.scenario_weight(s) * cost;
        max_switches = max_switches.max(strategy.switches(s).len());
    }
    let profit_integral_bound = spec.bound_f / spec.beta;
    let finite = strategy.finite_switch_count();
    Ok(AdmissibilityReport {
        admissible: finite && expected_cost.is_finite() && profit_integral_bound.is_finite(),
        finite_switch_count: finite,
        profit_integral_bound,
        expected_cost,
        max_switches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_tree, simulate_paths, LatticeTree, TimeGrid};
    use crate::model::Profit;

    fn spec(f: [f64; 2], c01: f64, c10: f64) -> ModelSpec {
        ModelSpec::constant_coefficients(1.0, c01, c10, [0.0; 2], [1.0; 2], f, 0.0)
    }

    fn lattice(t: f64, n: usize) -> ConditionalExpectation {
        let scene: Scene = LatticeTree::standard(&TimeGrid::new(t, n).unwrap()).into();
        ConditionalExpectation::new(&scene).unwrap()
    }

    #[test]
    fn equal_profits_never_switch() {
        let s = spec([1.0, 1.0], 2.0, 1.0);
        let ce = lattice(12.0, 12);
        let sol = solve_switching(&s, &ce).unwrap();
        assert_eq!(sol.ydiff.max_abs(), 0.0);
        assert!(sol.regions.to_new.iter().flatten().all(|&b| !b));
        assert!(sol.regions.to_old.iter().flatten().all(|&b| !b));
        let expected = 1.0 - (-12.0f64).exp();
        assert!((sol.value(Mode::Old) - expected).abs() < 1e-12);
        assert!((sol.value(Mode::New) - expected).abs() < 1e-12);
        let strat = extract_strategy(&sol, LATTICE_REGION_TOL).unwrap();
        assert!(strat.is_empty());
    }

    #[test]
    fn deterministic_instance_switches_at_once() {
        let s = spec([0.0, 1.0], 0.1, 0.05);
        let ce = lattice(12.0, 12);
        let sol = solve_switching(&s, &ce).unwrap();
        assert!(sol.regions.to_new[0][0]);
        let tail = (-12.0f64).exp();
        assert!(
            (sol.value(Mode::Old) - (0.9 - tail)).abs() < 1e-12,
            "{}",
            sol.value(Mode::Old)
        );
        let strat = extract_strategy(&sol, LATTICE_REGION_TOL).unwrap();
        assert!((0..strat.n_scenarios()).all(|sc| strat.switches(sc) == [0]));
        let g = evaluate_gain(&s, &strat, sol.scene(), GainOptions { include_tail: false }).unwrap();
        assert!((g.mean - sol.value(Mode::Old)).abs() < 1e-12);
        let g = evaluate_gain(&s, &strat, sol.scene(), GainOptions::default()).unwrap();
        assert!((g.mean - 0.9).abs() < 1e-12);
    }

    #[test]
    fn barrier_sandwich_and_mode_values() {
        let mut s = spec([0.0, 0.0], 0.3, 0.1);
        s.profit = [
            Profit::Saturating {
                scale: 1.0,
                steepness: 2.0,
                shift: 0.0,
                floor: 0.0,
            },
            Profit::Saturating {
                scale: 1.2,
                steepness: -1.5,
                shift: 0.2,
                floor: 0.0,
            },
        ];
        s.bound_f = s.analytic_profit_bound();
        let ce = lattice(3.0, 10);
        let sol = solve_switching(&s, &ce).unwrap();
        let grid = *sol.scene().grid();
        let mut touched = 0;
        for k in 0..=10 {
            let e = grid.discount(s.beta, k);
            for j in 0..=k {
                let y = sol.ydiff.at(k, j);
                assert!(y >= -s.c01 * e && y <= s.c10 * e);
                assert!((sol.y1.at(k, j) - sol.y2.at(k, j) - y).abs() < 1e-12);
                touched += usize::from(sol.regions.to_new[k][j] || sol.regions.to_old[k][j]);
            }
        }
        assert!(touched > 0);
        let (c1, c2) = coupled_obstacle_values(&s, &ce).unwrap();
        assert!(c1.sup_distance(&sol.y1).unwrap() < 1e-12);
        assert!(c2.sup_distance(&sol.y2).unwrap() < 1e-12);
        let strat = extract_strategy(&sol, LATTICE_REGION_TOL).unwrap();
        assert!(strat.strictly_increasing());
        let g = evaluate_gain(&s, &strat, sol.scene(), GainOptions { include_tail: false }).unwrap();
        assert!((g.mean - sol.value(Mode::Old)).abs() < 1e-12);
        let fb = evaluate_feedback_gain(&sol, &ce, GainOptions { include_tail: false }).unwrap();
        assert!((fb - g.mean).abs() < 1e-12);
        let mut buf = Vec::new();
        sol.write_boundary_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("time,lower_boundary,upper_boundary\n"));
    }

    #[test]
    fn boundary_orientation_follows_the_regions() {
        for sign in [1.0, -1.0] {
            let mut s = ModelSpec::constant_coefficients(0.5, 0.15, 0.05, [0.0; 2], [0.9; 2], [1.0; 2], 0.0);
            s.profit = [
                Profit::Saturating {
                    scale: 1.0,
                    steepness: -2.0 * sign,
                    shift: 0.0,
                    floor: 0.1,
                },
                Profit::Saturating {
                    scale: 1.0,
                    steepness: 2.0 * sign,
                    shift: 0.0,
                    floor: 0.15,
                },
            ];
            s.lipschitz_k = s.analytic_k();
            s.bound_f = s.analytic_profit_bound();
            let scene: Scene = build_tree(&s, &TimeGrid::new(2.0, 8).unwrap()).unwrap().into();
            let sol = solve_switching(&s, &ConditionalExpectation::new(&scene).unwrap()).unwrap();
            let mut both = 0;
            for row in sol.boundary_table() {
                if let (Some(lo), Some(hi)) = (row.lower_boundary, row.upper_boundary) {
                    assert!(lo < hi, "{row:?}");
                    both += 1;
                }
            }
            assert!(both > 0);
        }
    }

    #[test]
    fn overlapping_tolerance_is_rejected() {
        let s = spec([0.0, 1.0], 0.1, 0.05);
        let ce = lattice(2.0, 4);
        let sol = solve_switching(&s, &ce).unwrap();
        assert!(matches!(
            extract_strategy(&sol, 1.0),
            Err(Error::OverlappingRegions { .. })
        ));
    }

    #[test]
    fn empty_strategy_gain_is_the_discounted_integral() {
        let s = ModelSpec {
            beta: 2.0,
            ..spec([1.0, 0.0], 2.0, 1.0)
        };
        let scene: Scene = build_tree(&s, &TimeGrid::new(3.0, 8).unwrap()).unwrap().into();
        let g = evaluate_gain(&s, &Strategy::empty(256), &scene, GainOptions::default()).unwrap();
        assert!((g.mean - 0.5).abs() < 1e-14);
        assert_eq!(g.std_error, 0.0);
    }

    #[test]
    fn round_trip_costs_are_additive() {
        let s = spec([0.0, 1.0], 0.1, 0.05);
        let scene: Scene = build_tree(&s, &TimeGrid::new(3.0, 6).unwrap()).unwrap().into();
        let base = Strategy::deterministic(64, &[0]).unwrap();
        let extra = base.with_round_trip(0).unwrap();
        let a = evaluate_gain(&s, &base, &scene, GainOptions::default()).unwrap();
        let b = evaluate_gain(&s, &extra, &scene, GainOptions::default()).unwrap();
        assert!((a.mean - b.mean - (0.1 + 0.05)).abs() < 1e-14);
        assert!(!extra.strictly_increasing());
        assert!(Strategy::new(vec![vec![2, 1]]).is_err());
    }

    #[test]
    fn admissibility() {
        let s = spec([0.0, 1.0], 0.1, 0.05);
        let scene: Scene = build_tree(&s, &TimeGrid::new(1.0, 4).unwrap()).unwrap().into();
        let r = check_admissible(&s, &Strategy::empty(16), &scene).unwrap();
        assert!(r.admissible && r.expected_cost == 0.0);
        let every = Strategy::deterministic(16, &[0, 1, 2, 3, 4]).unwrap();
        let r = check_admissible(&s, &every, &scene).unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let expected: f64 = (0..5)
            .map(|k| grid.discount(1.0, k) * if k % 2 == 0 { 0.1 } else { 0.05 })
            .sum();
        assert!(r.admissible && (r.expected_cost - expected).abs() < 1e-15);
        let r = check_admissible(&s, &every.with_finite_switch_count(false), &scene).unwrap();
        assert!(!r.admissible);
    }

    #[test]
    fn raising_the_new_profit_never_lowers_the_value() {
        let ce = lattice(2.0, 8);
        let low = solve_switching(&spec([0.5, 0.4], 0.2, 0.1), &ce).unwrap();
        let high = solve_switching(&spec([0.5, 0.9], 0.2, 0.1), &ce).unwrap();
        assert!(high.value(Mode::Old) >= low.value(Mode::Old));
    }

    #[test]
    fn paths_solve_is_sandwiched() {
        let s = ModelSpec::constant_coefficients(1.0, 0.2, 0.1, [0.1, -0.1], [0.3, 0.5], [0.6, 0.8], 0.0);
        let scene: Scene = simulate_paths(&s, &TimeGrid::new(2.0, 10).unwrap(), 400, 3)
            .unwrap()
            .into();
        let ce = ConditionalExpectation::new(&scene).unwrap();
        let sol = solve_switching(&s, &ce).unwrap();
        assert!(sol.rbsde.complementarity_residual() <= PATHS_REGION_TOL);
        let strat = extract_strategy(&sol, PATHS_REGION_TOL).unwrap();
        assert_eq!(strat.n_scenarios(), 400);
        let r = evaluate_gain(&s, &strat, &scene, GainOptions::default()).unwrap();
        assert!(r.std_error >= 0.0);
    }

    #[test]
    fn invalid_costs_are_rejected() {
        let ce = lattice(1.0, 2);
        assert_eq!(
            solve_switching(&spec([0.0, 1.0], 0.05, 0.1), &ce).unwrap_err().code(),
            "model.invalid"
        );
    }
}
