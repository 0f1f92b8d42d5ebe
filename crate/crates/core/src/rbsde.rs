//! Reflected BSDEs with one or two barriers.
//!
//! Direct mode reflects the implicit step onto the barriers:
//!
//! `Y_k = clamp(E[Y_{k+1} | F_k] + w_k f_k, L_k, U_k)`,
//!
//! and records the pushes `e^{-beta t_k} dK^+_k`, `e^{-beta t_k} dK^-_k`.
//! Penalized mode replaces the reflection by the driver term
//! `n (y - L)^- - n (y - U)^+` under the same `w_k` weight and recovers the
//! pushes as the penalty mass.

use std::io::Write;

use rayon::prelude::*;

use crate::bsde::{
    check_contraction, check_picard_options, check_terminal, implicit_step, ordering_report, representation,
    ComparisonReport, Driver,
};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::ModelSpec;
use crate::scene::{AdaptedProcess, ConditionalExpectation, Scene, MAX_ENUMERATED_DEPTH};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reflection {
    Direct,
    /// Penalty intensity `n`.
    Penalized {
        n: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectedOptions {
    pub beta: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl ReflectedOptions {
    pub fn new(beta: f64) -> Self {
        ReflectedOptions {
            beta,
            tol: 1e-14,
            max_iters: 2000,
        }
    }
}

/// Default complementarity tolerance on lattices.
pub const LATTICE_COMPLEMENTARITY_TOL: f64 = 1e-10;
/// Default complementarity tolerance on regression paths.
pub const PATHS_COMPLEMENTARITY_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct RbsdeSolution {
    pub y: AdaptedProcess,
    pub z: AdaptedProcess,
    /// Undiscounted push `dK^+_k` at each node; zero at the last step.
    pub dk_plus: AdaptedProcess,
    /// Undiscounted push `dK^-_k`; identically zero for one barrier.
    pub dk_minus: AdaptedProcess,
    /// `sum_k max_idx e^{-beta t_k} |Y_k - L_k| dK^+_k`.
    pub comp_residual_plus: f64,
    /// `sum_k max_idx e^{-beta t_k} |U_k - Y_k| dK^-_k`.
    pub comp_residual_minus: f64,
    pub lower: AdaptedProcess,
    pub upper: Option<AdaptedProcess>,
    pub picard_iters: usize,
    beta: f64,
}

impl RbsdeSolution {
    pub fn value(&self) -> f64 {
        self.y.at(0, 0)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn scene(&self) -> &Scene {
        self.y.scene()
    }

    /// `e^{-beta t_k} dK^+_k`.
    pub fn discounted_dk_plus(&self) -> AdaptedProcess {
        discounted(&self.dk_plus, self.beta)
    }

    /// `e^{-beta t_k} dK^-_k`.
    pub fn discounted_dk_minus(&self) -> AdaptedProcess {
        discounted(&self.dk_minus, self.beta)
    }

    /// Largest complementarity residual of the two sides.
    pub fn complementarity_residual(&self) -> f64 {
        self.comp_residual_plus.max(self.comp_residual_minus)
    }

    /// Columns: `step,node,Y,L,U,dK+,dK-`; `U` is empty for one barrier.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let scene = self.y.scene();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "node", "Y", "L", "U", "dK+", "dK-"])?;
        for k in 0..=scene.steps() {
            for i in 0..scene.width(k) {
                let u = self.upper.as_ref().map(|u| u.at(k, i).to_string()).unwrap_or_default();
                w.write_record([
                    k.to_string(),
                    i.to_string(),
                    self.y.at(k, i).to_string(),
                    self.lower.at(k, i).to_string(),
                    u,
                    self.dk_plus.at(k, i).to_string(),
                    self.dk_minus.at(k, i).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn discounted(p: &AdaptedProcess, beta: f64) -> AdaptedProcess {
    let grid = *p.scene().grid();
    p.map(|k, _, v| grid.discount(beta, k) * v)
        .expect("discounting keeps values finite")
}

/// Single lower barrier with a `y`-free driver.
pub fn solve_rbsde_lower(
    driver: &AdaptedProcess,
    lower: &AdaptedProcess,
    terminal: &[f64],
    ce: &ConditionalExpectation,
    mode: Reflection,
    options: &ReflectedOptions,
) -> Result<RbsdeSolution> {
    driver.require_same_scene(lower)?;
    reflect(driver, Some(lower), None, terminal, ce, mode, options)
}

/// Double barrier `L <= Y <= U` with a `y`-free driver; requires
/// `L <= 0 <= U` nodewise.
pub fn solve_rbsde_double(
    driver: &AdaptedProcess,
    lower: &AdaptedProcess,
    upper: &AdaptedProcess,
    terminal: &[f64],
    ce: &ConditionalExpectation,
    mode: Reflection,
    options: &ReflectedOptions,
) -> Result<RbsdeSolution> {
    driver.require_same_scene(lower)?;
    lower.require_same_scene(upper)?;
    check_ordered_barriers(lower, upper)?;
    for (k, (l, u)) in lower.levels().iter().zip(upper.levels()).enumerate() {
        for (i, (&l, &u)) in l.iter().zip(u).enumerate() {
            if l > 0.0 || u < 0.0 {
                return Err(Error::BarrierSign(format!(
                    "need L <= 0 <= U, got L = {l}, U = {u} at step {k}, node {i}"
                )));
            }
        }
    }
    reflect(driver, Some(lower), Some(upper), terminal, ce, mode, options)
}

fn check_ordered_barriers(lower: &AdaptedProcess, upper: &AdaptedProcess) -> Result<()> {
    let mut gap = false;
    for (k, (l, u)) in lower.levels().iter().zip(upper.levels()).enumerate() {
        for (i, (&l, &u)) in l.iter().zip(u).enumerate() {
            if l > u {
                return Err(Error::InfeasibleBarriers {
                    step: k,
                    node: i,
                    lower: l,
                    upper: u,
                });
            }
            gap |= l < u;
        }
    }
    if !gap {
        return Err(Error::BarrierSign("barriers coincide everywhere".into()));
    }
    Ok(())
}

/// Reflected engine shared by the public solvers, the penalty-bound check
/// and the switching system. The driver may depend on `y`; in direct mode the
/// push solves the implicit step at the barrier.
pub(crate) fn reflect(
    driver: &dyn Driver,
    lower: Option<&AdaptedProcess>,
    upper: Option<&AdaptedProcess>,
    terminal: &[f64],
    ce: &ConditionalExpectation,
    mode: Reflection,
    options: &ReflectedOptions,
) -> Result<RbsdeSolution> {
    let scene = ce.scene();
    let grid = *scene.grid();
    let n = grid.steps();
    for b in lower.iter().chain(upper.iter()) {
        if !b.scene().same_as(scene) {
            return Err(Error::Shape("barrier lives on a different scene".into()));
        }
    }
    check_terminal(scene, terminal)?;
    check_picard_options(options.tol, options.max_iters)?;
    for (i, &xi) in terminal.iter().enumerate() {
        let l = lower.map_or(f64::NEG_INFINITY, |l| l.at(n, i));
        let u = upper.map_or(f64::INFINITY, |u| u.at(n, i));
        if xi < l || xi > u {
            return Err(Error::Domain(format!(
                "terminal value {xi} at node {i} outside the barriers [{l}, {u}]"
            )));
        }
    }
    let penalty = match mode {
        Reflection::Direct => None,
        Reflection::Penalized { n } => {
            if !(n >= 0.0 && n.is_finite()) {
                return Err(Error::Domain(format!("penalty must be a nonnegative number, got {n}")));
            }
            Some(n)
        }
    };
    check_contraction(driver.lipschitz() + penalty.unwrap_or(0.0), grid.dt())?;

    let lower_at = |k: usize, i: usize| lower.map_or(f64::NEG_INFINITY, |l| l.at(k, i));
    let upper_at = |k: usize, i: usize| upper.map_or(f64::INFINITY, |u| u.at(k, i));

    let mut y: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut push_plus: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut push_minus: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    y[n] = terminal.to_vec();
    push_plus[n] = vec![0.0; terminal.len()];
    push_minus[n] = vec![0.0; terminal.len()];
    let mut picard_iters = 0;

    for k in (0..n).rev() {
        let cont = ce.expect(k, &y[k + 1]);
        let w = grid.discount_weight(options.beta, k);
        let nodes: Vec<(f64, f64, f64, usize)> = cont
            .par_iter()
            .enumerate()
            .map(|(i, &base)| {
                let (l, u) = (lower_at(k, i), upper_at(k, i));
                match penalty {
                    None => {
                        let free =
                            implicit_step(base, w, |v| driver.value(k, i, v), options.tol, options.max_iters, k)?;
                        // Defect of the implicit step at a barrier value.
                        let push = |b: f64| b - base - w * driver.value(k, i, b);
                        Ok(if free.y < l {
                            (l, push(l).max(0.0), 0.0, free.iters)
                        } else if free.y > u {
                            (u, 0.0, (-push(u)).max(0.0), free.iters)
                        } else {
                            (free.y, 0.0, 0.0, free.iters)
                        })
                    }
                    Some(pen) => {
                        let g = |v: f64| driver.value(k, i, v) + pen * (l - v).max(0.0) - pen * (v - u).max(0.0);
                        let s = implicit_step(base, w, g, options.tol, options.max_iters, k)?;
                        Ok((s.y, w * pen * (l - s.y).max(0.0), w * pen * (s.y - u).max(0.0), s.iters))
                    }
                }
            })
            .collect::<Result<_>>()?;
        y[k] = nodes.iter().map(|t| t.0).collect();
        push_plus[k] = nodes.iter().map(|t| t.1).collect();
        push_minus[k] = nodes.iter().map(|t| t.2).collect();
        picard_iters = nodes.iter().fold(picard_iters, |m, t| m.max(t.3));
    }

    let mut comp_plus = 0.0;
    let mut comp_minus = 0.0;
    for k in 0..n {
        let mut worst_plus: f64 = 0.0;
        let mut worst_minus: f64 = 0.0;
        for i in 0..scene.width(k) {
            if push_plus[k][i] > 0.0 {
                worst_plus = worst_plus.max((y[k][i] - lower_at(k, i)).abs() * push_plus[k][i]);
            }
            if push_minus[k][i] > 0.0 {
                worst_minus = worst_minus.max((upper_at(k, i) - y[k][i]).abs() * push_minus[k][i]);
            }
        }
        comp_plus += worst_plus;
        comp_minus += worst_minus;
    }

    let undiscount = |pushes: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        pushes
            .into_iter()
            .enumerate()
            .map(|(k, level)| {
                let d = grid.discount(options.beta, k);
                level.into_iter().map(|v| v / d).collect()
            })
            .collect()
    };
    let z = representation(ce, &y);
    let lower = match lower {
        Some(l) => l.clone(),
        None => AdaptedProcess::constant(scene, f64::MIN)?,
    };
    Ok(RbsdeSolution {
        y: AdaptedProcess::new(scene, y)?,
        z: AdaptedProcess::new(scene, z)?,
        dk_plus: AdaptedProcess::new(scene, undiscount(push_plus))?,
        dk_minus: AdaptedProcess::new(scene, undiscount(push_minus))?,
        comp_residual_plus: comp_plus,
        comp_residual_minus: comp_minus,
        lower,
        upper: upper.cloned(),
        picard_iters,
        beta: options.beta,
    })
}

/// Checks `sum_{j<=k} small_j <= sum_{j<=k} large_j` along every trajectory
/// and every `k`, for two increment processes. On a lattice the worst
/// trajectory into each node is found by forward dynamic programming.
pub fn cumulative_ordering_report(small: &AdaptedProcess, large: &AdaptedProcess) -> Result<ComparisonReport> {
    small.require_same_scene(large)?;
    let scene = small.scene();
    let n = scene.steps();
    let diff = |k: usize, i: usize| small.at(k, i) - large.at(k, i);
    let mut report = ComparisonReport {
        max_violation: 0.0,
        location: None,
    };
    let note = |k: usize, i: usize, v: f64, r: &mut ComparisonReport| {
        if v > r.max_violation {
            *r = ComparisonReport {
                max_violation: v,
                location: Some((k, i)),
            };
        }
    };
    match scene {
        Scene::Paths(_) => {
            let mut acc = vec![0.0; scene.width(0)];
            for k in 0..=n {
                for (i, a) in acc.iter_mut().enumerate() {
                    *a += diff(k, i);
                    note(k, i, *a, &mut report);
                }
            }
        }
        Scene::Lattice(_) => {
            let mut worst = vec![diff(0, 0)];
            note(0, 0, worst[0], &mut report);
            for k in 1..=n {
                let next: Vec<f64> = (0..=k)
                    .map(|j| {
                        let from_down = if j < k { worst[j] } else { f64::NEG_INFINITY };
                        let from_up = if j > 0 { worst[j - 1] } else { f64::NEG_INFINITY };
                        diff(k, j) + from_down.max(from_up)
                    })
                    .collect();
                for (j, &v) in next.iter().enumerate() {
                    note(k, j, v, &mut report);
                }
                worst = next;
            }
        }
    }
    Ok(report)
}

/// Comparison of two reflected solutions with ordered drivers `f <= f'`
/// and shared barriers: `Y <= Y'`, cumulative `K^+ >= K'^+`, cumulative
/// `K^- <= K'^-`, all discounted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectedComparison {
    pub values: ComparisonReport,
    pub push_plus: ComparisonReport,
    pub push_minus: ComparisonReport,
}

impl ReflectedComparison {
    pub fn max_violation(&self) -> f64 {
        self.values
            .max_violation
            .max(self.push_plus.max_violation)
            .max(self.push_minus.max_violation)
    }
}

pub fn compare_reflected(sol: &RbsdeSolution, sol_prime: &RbsdeSolution) -> Result<ReflectedComparison> {
    Ok(ReflectedComparison {
        values: ordering_report(&sol.y, &sol_prime.y)?,
        push_plus: cumulative_ordering_report(&sol_prime.discounted_dk_plus(), &sol.discounted_dk_plus())?,
        push_minus: cumulative_ordering_report(&sol.discounted_dk_minus(), &sol_prime.discounted_dk_minus())?,
    })
}

/// `E[(sum_k e^{-beta t_k} dK_k)^2]` for the lower (`plus`) or upper push.
pub fn discounted_k_second_moment(sol: &RbsdeSolution, plus: bool) -> Result<f64> {
    let d = if plus {
        sol.discounted_dk_plus()
    } else {
        sol.discounted_dk_minus()
    };
    let scene = sol.scene();
    let n = scene.steps();
    Ok(match scene {
        Scene::Paths(_) => {
            let width = scene.width(0);
            let total: f64 = (0..width)
                .map(|i| {
                    let s: f64 = (0..=n).map(|k| d.at(k, i)).sum();
                    s * s
                })
                .sum();
            total / width as f64
        }
        Scene::Lattice(_) => {
            let ce = ConditionalExpectation::new(scene)?;
            let mut first = d.level(n).to_vec();
            let mut second: Vec<f64> = first.iter().map(|v| v * v).collect();
            for k in (0..n).rev() {
                let e1 = ce.expect(k, &first);
                let e2 = ce.expect(k, &second);
                let dk = d.level(k);
                second = (0..=k).map(|j| dk[j] * dk[j] + 2.0 * dk[j] * e1[j] + e2[j]).collect();
                first = (0..=k).map(|j| dk[j] + e1[j]).collect();
            }
            second[0]
        }
    })
}

/// `E[sup_k (L_k^+)^2]`.
///
/// Lattice barriers that vary within a level are enumerated trajectory by
/// trajectory.
pub fn expected_sup_positive_sq(barrier: &AdaptedProcess) -> Result<f64> {
    let scene = barrier.scene();
    let n = scene.steps();
    let sup_sq = |values: &mut dyn Iterator<Item = f64>| values.fold(0.0f64, |m, v| m.max(v.max(0.0))).powi(2);
    Ok(match scene {
        Scene::Paths(_) => {
            let width = scene.width(0);
            (0..width)
                .map(|i| sup_sq(&mut (0..=n).map(|k| barrier.at(k, i))))
                .sum::<f64>()
                / width as f64
        }
        Scene::Lattice(_) => {
            let deterministic = barrier.levels().iter().all(|l| l.iter().all(|&v| v == l[0]));
            if deterministic {
                sup_sq(&mut barrier.levels().iter().map(|l| l[0]))
            } else {
                if n > MAX_ENUMERATED_DEPTH {
                    scene.n_scenarios()?;
                }
                (0..1usize << n)
                    .map(|s| scene.scenario_weight(s) * sup_sq(&mut barrier.along(s).into_iter()))
                    .sum()
            }
        }
    })
}

/// `C_eps = (1/3 - 2 eps e^{1/beta})^{-1} [(1 + 2 e^{1/beta}) (||f|| + beta c10)^2 / beta
/// + E[sup (L^+)^2] / eps]`, a ceiling on `E[(int e^{-beta s} dK)^2]`.
pub fn k_integral_bound(bound_f: f64, beta: f64, c10: f64, sup_l_plus_sq: f64, epsilon: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    let e = (1.0 / beta).exp();
    let ceiling = 1.0 / (6.0 * e);
    if !(epsilon > 0.0 && epsilon < ceiling) {
        return Err(Error::Domain(format!(
            "epsilon must lie in (0, {ceiling}), got {epsilon}"
        )));
    }
    if !(sup_l_plus_sq >= 0.0) {
        return Err(Error::Domain(format!(
            "E[sup (L^+)^2] must be nonnegative, got {sup_l_plus_sq}"
        )));
    }
    let denominator = 1.0 / 3.0 - 2.0 * epsilon * e;
    let numerator = (1.0 + 2.0 * e) / beta * (bound_f + beta * c10).powi(2) + sup_l_plus_sq / epsilon;
    Ok(numerator / denominator)
}

/// Outcome of the penalty-bound check.
#[derive(Debug, Clone)]
pub struct PenaltyBound {
    /// `max_k max_idx [n (Y_k - U_k)^+ - beta c10 e^{-beta t_k}]`.
    pub slack: f64,
    pub location: (usize, usize),
    pub solution: RbsdeSolution,
}

/// Solves the reflected equation with driver `-||f|| - n (y - U)^+`,
/// `U = c10 e^{-beta t}`, lower barrier `-c01 e^{-beta t}` and zero
/// terminal value, then measures the penalty against `beta c10 e^{-beta t}`.
pub fn penalization_bound_check(spec: &ModelSpec, ce: &ConditionalExpectation, n: f64) -> Result<PenaltyBound> {
    let scene = ce.scene();
    let lower = AdaptedProcess::from_time(scene, |t| -spec.c01 * (-spec.beta * t).exp())?;
    penalization_bound_check_with_lower(spec, &lower, ce, n)
}

pub fn penalization_bound_check_with_lower(
    spec: &ModelSpec,
    lower: &AdaptedProcess,
    ce: &ConditionalExpectation,
    n: f64,
) -> Result<PenaltyBound> {
    let scene = ce.scene();
    let grid = *scene.grid();
    let upper = |k: usize| spec.c10 * grid.discount(spec.beta, k);
    let bound = spec.bound_f;
    let driver = crate::bsde::driver_fn(n, move |k, _, y: f64| -bound - n * (y - upper(k)).max(0.0));
    let terminal = vec![0.0; scene.width(scene.steps())];
    let solution = reflect(
        &driver,
        Some(lower),
        None,
        &terminal,
        ce,
        Reflection::Direct,
        &ReflectedOptions::new(spec.beta),
    )?;
    let mut slack = f64::NEG_INFINITY;
    let mut location = (0, 0);
    for (k, level) in solution.y.levels().iter().enumerate() {
        let cap = spec.beta * upper(k);
        for (i, &y) in level.iter().enumerate() {
            let s = n * (y - upper(k)).max(0.0) - cap;
            if s > slack {
                slack = s;
                location = (k, i);
            }
        }
    }
    Ok(PenaltyBound {
        slack,
        location,
        solution,
    })
}

/// Same horizon with enough steps that `n dt < 0.5`.
pub fn refine_for_penalty(grid: &TimeGrid, n: f64) -> Result<TimeGrid> {
    let needed = (2.0 * n * grid.horizon()).floor() as usize + 1;
    TimeGrid::new(grid.horizon(), grid.steps().max(needed))
}

/// One rung of a penalization schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyRung {
    pub n: f64,
    pub value: f64,
    /// `||Y^n - Y_direct||_inf`.
    pub sup_error: f64,
    /// `max (Y^{n_prev} - Y^n)^+` for a single barrier, where `Y^n` is
    /// nondecreasing in `n`; `None` on the first rung and for two barriers.
    pub monotonicity_violation: Option<f64>,
    pub comp_residual: f64,
}

/// Runs the penalized solver for an increasing schedule and compares each
/// rung with the direct solution on the same scene.
pub fn penalization_schedule(
    driver: &AdaptedProcess,
    lower: &AdaptedProcess,
    upper: Option<&AdaptedProcess>,
    terminal: &[f64],
    ce: &ConditionalExpectation,
    schedule: &[f64],
    options: &ReflectedOptions,
) -> Result<(RbsdeSolution, Vec<PenaltyRung>)> {
    let solve = |mode| match upper {
        Some(u) => solve_rbsde_double(driver, lower, u, terminal, ce, mode, options),
        None => solve_rbsde_lower(driver, lower, terminal, ce, mode, options),
    };
    let direct = solve(Reflection::Direct)?;
    let mut rungs = Vec::with_capacity(schedule.len());
    let mut previous: Option<RbsdeSolution> = None;
    for &n in schedule {
        let sol = solve(Reflection::Penalized { n })?;
        let monotonicity_violation = match &previous {
            Some(p) if upper.is_none() => Some(ordering_report(&p.y, &sol.y)?.max_violation),
            _ => None,
        };
        rungs.push(PenaltyRung {
            n,
            value: sol.value(),
            sup_error: sol.y.sup_distance(&direct.y)?,
            monotonicity_violation,
            comp_residual: sol.complementarity_residual(),
        });
        previous = Some(sol);
    }
    Ok((direct, rungs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{simulate_paths, LatticeTree};
    use crate::model::Mode;
    use crate::snell::snell_envelope;

    fn lattice(t: f64, n: usize) -> ConditionalExpectation {
        let scene: Scene = LatticeTree::standard(&TimeGrid::new(t, n).unwrap()).into();
        ConditionalExpectation::new(&scene).unwrap()
    }

    fn c(ce: &ConditionalExpectation, v: f64) -> AdaptedProcess {
        AdaptedProcess::constant(ce.scene(), v).unwrap()
    }

    fn zero_terminal(ce: &ConditionalExpectation) -> Vec<f64> {
        vec![0.0; ce.scene().width(ce.scene().steps())]
    }

    #[test]
    fn slack_lower_barrier_is_never_touched() {
        let ce = lattice(1.0, 6);
        let sol = solve_rbsde_lower(
            &c(&ce, 0.0),
            &c(&ce, -1.0),
            &zero_terminal(&ce),
            &ce,
            Reflection::Direct,
            &ReflectedOptions::new(1.0),
        )
        .unwrap();
        assert_eq!(sol.y.max_abs(), 0.0);
        assert_eq!(sol.dk_plus.max_abs(), 0.0);
        assert_eq!(sol.comp_residual_plus, 0.0);
    }

    #[test]
    fn unit_barrier_pushes_once_at_the_last_step() {
        let ce = lattice(1.0, 5);
        let scene = ce.scene().clone();
        let lower = AdaptedProcess::from_fn(&scene, |k, _| if k < 5 { 1.0 } else { 0.0 }).unwrap();
        let sol = solve_rbsde_lower(
            &c(&ce, 0.0),
            &lower,
            &zero_terminal(&ce),
            &ce,
            Reflection::Direct,
            &ReflectedOptions::new(0.0),
        )
        .unwrap();
        for k in 0..5 {
            assert!(sol.y.level(k).iter().all(|&v| v == 1.0));
        }
        assert!(sol.dk_plus.level(4).iter().all(|&v| v == 1.0));
        for k in 0..4 {
            assert!(sol.dk_plus.level(k).iter().all(|&v| v == 0.0));
        }
        assert_eq!(sol.comp_residual_plus, 0.0);
    }

    #[test]
    fn penalized_lower_barrier_increases_toward_direct() {
        let ce = lattice(1.0, 2100);
        let scene = ce.scene().clone();
        let n = scene.steps();
        let lower = AdaptedProcess::from_fn(&scene, |k, _| if k < n { 1.0 } else { 0.0 }).unwrap();
        let (direct, rungs) = penalization_schedule(
            &c(&ce, 0.0),
            &lower,
            None,
            &zero_terminal(&ce),
            &ce,
            &[10.0, 100.0, 1000.0],
            &ReflectedOptions::new(0.0),
        )
        .unwrap();
        assert_eq!(direct.value(), 1.0);
        for w in rungs.windows(2) {
            assert!(w[1].value >= w[0].value);
            assert!(w[1].sup_error < w[0].sup_error);
            assert!(w[1].monotonicity_violation.unwrap() <= 1e-12);
        }
        assert!(rungs.iter().all(|r| r.value <= 1.0 + 1e-12));
    }

    #[test]
    fn interior_zero_solution_of_a_band() {
        let ce = lattice(1.0, 6);
        let sol = solve_rbsde_double(
            &c(&ce, 0.0),
            &c(&ce, -1.0),
            &c(&ce, 1.0),
            &zero_terminal(&ce),
            &ce,
            Reflection::Direct,
            &ReflectedOptions::new(1.0),
        )
        .unwrap();
        assert_eq!(sol.y.max_abs(), 0.0);
        assert_eq!(sol.dk_plus.max_abs() + sol.dk_minus.max_abs(), 0.0);
    }

    #[test]
    fn large_driver_rides_the_upper_barrier() {
        let ce = lattice(1.0, 20);
        let sol = solve_rbsde_double(
            &c(&ce, 5.0),
            &c(&ce, -0.1),
            &c(&ce, 0.1),
            &zero_terminal(&ce),
            &ce,
            Reflection::Direct,
            &ReflectedOptions::new(1.0),
        )
        .unwrap();
        let scene = ce.scene();
        for k in 0..20 {
            for j in 0..scene.width(k) {
                let dk = sol.dk_minus.at(k, j);
                assert!(dk >= 0.0);
                if dk > 0.0 {
                    assert_eq!(sol.y.at(k, j), 0.1);
                }
                assert_eq!(sol.dk_plus.at(k, j), 0.0);
            }
        }
        assert!(sol.dk_minus.max_abs() > 0.0);
        assert!(sol.comp_residual_minus <= LATTICE_COMPLEMENTARITY_TOL);
    }

    #[test]
    fn mirrored_instance_maps_to_the_negative() {
        let ce = lattice(1.0, 8);
        let scene = ce.scene().clone();
        let f = AdaptedProcess::from_fn(&scene, |k, j| scene.state(Mode::Old, k, j).sin() * 3.0).unwrap();
        let l = AdaptedProcess::from_time(&scene, |t| -0.2 - 0.1 * t).unwrap();
        let u = AdaptedProcess::from_time(&scene, |t| 0.3 * (-t).exp()).unwrap();
        let opts = ReflectedOptions::new(0.8);
        let a = solve_rbsde_double(&f, &l, &u, &zero_terminal(&ce), &ce, Reflection::Direct, &opts).unwrap();
        let neg = |p: &AdaptedProcess| p.map(|_, _, v| -v).unwrap();
        let b = solve_rbsde_double(
            &neg(&f),
            &neg(&u),
            &neg(&l),
            &zero_terminal(&ce),
            &ce,
            Reflection::Direct,
            &opts,
        )
        .unwrap();
        assert!(a.y.sup_distance(&neg(&b.y)).unwrap() < 1e-15);
        assert!(a.dk_plus.sup_distance(&b.dk_minus).unwrap() < 1e-15);
        assert!(a.dk_minus.sup_distance(&b.dk_plus).unwrap() < 1e-15);
    }

    #[test]
    fn barrier_violations_are_rejected() {
        let ce = lattice(1.0, 3);
        let t = zero_terminal(&ce);
        let o = ReflectedOptions::new(1.0);
        let err = solve_rbsde_double(
            &c(&ce, 0.0),
            &c(&ce, 0.0),
            &c(&ce, -0.5),
            &t,
            &ce,
            Reflection::Direct,
            &o,
        )
        .unwrap_err();
        assert_eq!(err.code(), "rbsde.infeasible_barriers");
        let err = solve_rbsde_double(
            &c(&ce, 0.0),
            &c(&ce, 0.5),
            &c(&ce, 1.0),
            &t,
            &ce,
            Reflection::Direct,
            &o,
        )
        .unwrap_err();
        assert_eq!(err.code(), "rbsde.barrier_sign");
        let err = solve_rbsde_lower(&c(&ce, 0.0), &c(&ce, 0.5), &t, &ce, Reflection::Direct, &o).unwrap_err();
        assert_eq!(err.code(), "rbsde.domain");
        let err = solve_rbsde_lower(
            &c(&ce, 0.0),
            &c(&ce, -0.5),
            &t,
            &ce,
            Reflection::Penalized { n: 10.0 },
            &o,
        )
        .unwrap_err();
        assert_eq!(err.code(), "bsde.step_size");
    }

    #[test]
    fn direct_lower_solution_is_a_snell_envelope() {
        let ce = lattice(2.0, 9);
        let scene = ce.scene().clone();
        let grid = *scene.grid();
        let beta = 0.6;
        let f = AdaptedProcess::from_time(&scene, |t| (3.0 * t).cos()).unwrap();
        let l = AdaptedProcess::from_fn(&scene, |k, j| scene.state(Mode::Old, k, j) - 0.1 * k as f64).unwrap();
        let terminal: Vec<f64> = l.level(9).iter().map(|v| v + 0.5).collect();
        let sol = solve_rbsde_lower(&f, &l, &terminal, &ce, Reflection::Direct, &ReflectedOptions::new(beta)).unwrap();
        let running: Vec<f64> = (0..=9)
            .scan(0.0, |acc, k| {
                let here = *acc;
                if k < 9 {
                    *acc += grid.discount_weight(beta, k) * f.at(k, 0);
                }
                Some(here)
            })
            .collect();
        let reward =
            AdaptedProcess::from_fn(&scene, |k, j| running[k] + if k < 9 { l.at(k, j) } else { terminal[j] }).unwrap();
        let env = snell_envelope(&reward).unwrap();
        for k in 0..=9 {
            for j in 0..=k {
                assert!((env.envelope().at(k, j) - running[k] - sol.y.at(k, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lattice_second_moment_matches_enumeration() {
        let ce = lattice(1.0, 6);
        let scene = ce.scene().clone();
        let l = AdaptedProcess::from_fn(&scene, |k, j| scene.state(Mode::Old, k, j) * 0.5 - 0.05 * k as f64).unwrap();
        let mut terminal: Vec<f64> = l.level(6).to_vec();
        terminal.iter_mut().for_each(|v| *v = v.max(0.0));
        let sol = solve_rbsde_lower(
            &c(&ce, -0.3),
            &l,
            &terminal,
            &ce,
            Reflection::Direct,
            &ReflectedOptions::new(1.0),
        )
        .unwrap();
        let d = sol.discounted_dk_plus();
        let brute: f64 = (0..64)
            .map(|s| scene.scenario_weight(s) * d.along(s).iter().sum::<f64>().powi(2))
            .sum();
        assert!((discounted_k_second_moment(&sol, true).unwrap() - brute).abs() < 1e-13);
        let sup = expected_sup_positive_sq(&l).unwrap();
        let brute_sup: f64 = (0..64)
            .map(|s| scene.scenario_weight(s) * l.along(s).iter().fold(0.0f64, |m, v| m.max(*v)).powi(2))
            .sum();
        assert!((sup - brute_sup).abs() < 1e-14);
    }

    #[test]
    fn cumulative_report_finds_the_worst_trajectory() {
        let ce = lattice(1.0, 3);
        let scene = ce.scene().clone();
        let zero = AdaptedProcess::zeros(&scene);
        // +1 on the up child at step 1, -1 on both children at step 2: the
        // up-up route accumulates 1 before cancelling.
        let bump = AdaptedProcess::from_fn(&scene, |k, j| match (k, j) {
            (1, 1) => 1.0,
            (2, _) => -1.0,
            _ => 0.0,
        })
        .unwrap();
        let r = cumulative_ordering_report(&bump, &zero).unwrap();
        assert_eq!(r.max_violation, 1.0);
        assert_eq!(r.location, Some((1, 1)));
    }

    #[test]
    fn k_integral_constant() {
        let v = k_integral_bound(1.0, 1.0, 1.0, 0.0, 0.05).unwrap();
        let e = std::f64::consts::E;
        let denominator: f64 = 1.0 / 3.0 - 0.1 * e;
        assert!((denominator - 0.0615051).abs() < 1e-6);
        assert!(((1.0 + 2.0 * e) * 4.0 - 25.7463).abs() < 1e-4);
        assert!((v - 418.60).abs() < 0.01, "{v}");
        assert!(k_integral_bound(1.0, 1.0, 1.0, 0.0, 1.0 / (6.0 * e)).is_err());
        assert!(k_integral_bound(1.0, 1.0, 1.0, 0.0, 0.0).is_err());
        let near = k_integral_bound(1.0, 1.0, 1.0, 0.0, 1.0 / (6.0 * e) * (1.0 - 1e-9)).unwrap();
        assert!(near > 1e9);
        let doubled = k_integral_bound(3.0, 1.0, 1.0, 0.0, 0.05).unwrap();
        assert!((doubled / v - 4.0).abs() < 1e-12);
    }

    #[test]
    fn penalty_bound_slack_is_negative() {
        let spec = ModelSpec::constant_coefficients(1.0, 2.0, 1.0, [0.0; 2], [1.0; 2], [1.0, 0.5], 0.0);
        let grid = refine_for_penalty(&TimeGrid::new(1.0, 10).unwrap(), 50.0).unwrap();
        assert!(50.0 * grid.dt() < 0.5);
        let scene: Scene = LatticeTree::standard(&grid).into();
        let ce = ConditionalExpectation::new(&scene).unwrap();
        let a = penalization_bound_check(&spec, &ce, 50.0).unwrap();
        assert!(a.slack <= 1e-8);
        let b = penalization_bound_check(&spec, &ce, 100.0).unwrap();
        assert!(b.slack <= a.slack + 1e-12);
        let expected = -spec.beta * spec.c10 * (-spec.beta * 1.0f64).exp();
        assert!((a.slack - expected).abs() < 1e-12);
    }

    #[test]
    fn regression_paths_complementarity() {
        let spec = ModelSpec::constant_coefficients(1.0, 2.0, 1.0, [0.0; 2], [0.5; 2], [1.0; 2], 0.0);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let scene: Scene = simulate_paths(&spec, &grid, 300, 1).unwrap().into();
        let ce = ConditionalExpectation::new(&scene).unwrap();
        let f = AdaptedProcess::from_fn(&scene, |k, i| -scene.state(Mode::Old, k, i)).unwrap();
        let l = AdaptedProcess::constant(&scene, -0.05).unwrap();
        let u = AdaptedProcess::constant(&scene, 0.05).unwrap();
        let sol = solve_rbsde_double(
            &f,
            &l,
            &u,
            &vec![0.0; 300],
            &ce,
            Reflection::Direct,
            &ReflectedOptions::new(1.0),
        )
        .unwrap();
        assert!(sol.complementarity_residual() <= PATHS_COMPLEMENTARITY_TOL);
        for k in 0..=10 {
            for i in 0..300 {
                let y = sol.y.at(k, i);
                assert!((-0.05..=0.05).contains(&y));
            }
        }
    }
}
