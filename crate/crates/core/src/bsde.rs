//! Backward SDEs with Lipschitz drivers on a finite horizon.
//!
//! The scheme is implicit backward Euler with exact discount weights,
//!
//! `Y_k = E[Y_{k+1} | F_k] + w_k g(t_k, Y_k)`, `w_k = int_{t_k}^{t_{k+1}} e^{-beta s} ds`,
//!
//! solved per node by Picard iteration, which contracts with factor
//! `C w_k <= C dt`. Infinite-horizon problems are truncated at the horizon
//! returned by [`truncation_horizon`] with zero terminal data.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::scene::{AdaptedProcess, ConditionalExpectation, Scene};

/// Generator `g(t_k, y)` evaluated at a node or path.
pub trait Driver: Sync {
    fn value(&self, step: usize, idx: usize, y: f64) -> f64;

    /// Lipschitz constant in `y`.
    fn lipschitz(&self) -> f64;
}

impl<D: Driver + ?Sized> Driver for &D {
    fn value(&self, step: usize, idx: usize, y: f64) -> f64 {
        (**self).value(step, idx, y)
    }

    fn lipschitz(&self) -> f64 {
        (**self).lipschitz()
    }
}

/// `g(y) = offset - rate * y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearDriver {
    pub offset: f64,
    pub rate: f64,
}

impl LinearDriver {
    pub fn constant(offset: f64) -> Self {
        LinearDriver { offset, rate: 0.0 }
    }
}

impl Driver for LinearDriver {
    fn value(&self, _step: usize, _idx: usize, y: f64) -> f64 {
        self.offset - self.rate * y
    }

    fn lipschitz(&self) -> f64 {
        self.rate.abs()
    }
}

/// A `y`-free driver given node by node.
impl Driver for AdaptedProcess {
    fn value(&self, step: usize, idx: usize, _y: f64) -> f64 {
        self.at(step, idx)
    }

    fn lipschitz(&self) -> f64 {
        0.0
    }
}

/// Driver from a closure `(step, idx, y) -> g` with a declared constant.
pub struct FnDriver<F> {
    f: F,
    lipschitz: f64,
}

pub fn driver_fn<F>(lipschitz: f64, f: F) -> FnDriver<F>
where
    F: Fn(usize, usize, f64) -> f64 + Sync,
{
    FnDriver { f, lipschitz }
}

impl<F> Driver for FnDriver<F>
where
    F: Fn(usize, usize, f64) -> f64 + Sync,
{
    fn value(&self, step: usize, idx: usize, y: f64) -> f64 {
        (self.f)(step, idx, y)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsdeOptions {
    pub beta: f64,
    /// Picard stopping increment.
    pub tol: f64,
    pub max_iters: usize,
}

impl BsdeOptions {
    pub fn new(beta: f64) -> Self {
        BsdeOptions {
            beta,
            tol: 1e-13,
            max_iters: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub y: AdaptedProcess,
    /// Martingale-representation coefficient; zero at the last step.
    pub z: AdaptedProcess,
    /// Largest Picard iteration count over all nodes.
    pub picard_iters: usize,
    /// Largest one-step defect `|Y_k - E[Y_{k+1}|F_k] - w_k g(Y_k)|`.
    pub residual: f64,
}

impl BsdeSolution {
    pub fn value(&self) -> f64 {
        self.y.at(0, 0)
    }
}

/// Outcome of one implicit step at one node.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ImplicitStep {
    pub y: f64,
    pub iters: usize,
    pub defect: f64,
}

/// Solves `y = base + weight * g(y)` by fixed-point iteration.
pub(crate) fn implicit_step(
    base: f64,
    weight: f64,
    g: impl Fn(f64) -> f64,
    tol: f64,
    max_iters: usize,
    step: usize,
) -> Result<ImplicitStep> {
    let mut y = base;
    let mut increment = f64::INFINITY;
    for iters in 1..=max_iters {
        let next = base + weight * g(y);
        increment = (next - y).abs();
        y = next;
        if !y.is_finite() {
            break;
        }
        if increment <= tol {
            let defect = (y - base - weight * g(y)).abs();
            return Ok(ImplicitStep { y, iters, defect });
        }
    }
    Err(Error::Convergence {
        step,
        defect: increment,
    })
}

pub(crate) fn check_contraction(lipschitz: f64, dt: f64) -> Result<()> {
    if !(lipschitz * dt < 1.0) {
        return Err(Error::StepSize { lipschitz, dt });
    }
    Ok(())
}

pub(crate) fn check_picard_options(tol: f64, max_iters: usize) -> Result<()> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Domain(format!("Picard tolerance must be positive, got {tol}")));
    }
    if max_iters == 0 {
        return Err(Error::Domain("max_iters must be >= 1".into()));
    }
    Ok(())
}

pub(crate) fn check_terminal(scene: &Scene, terminal: &[f64]) -> Result<()> {
    let n = scene.steps();
    if terminal.len() != scene.width(n) {
        return Err(Error::Shape(format!(
            "terminal has {} values, last level has {}",
            terminal.len(),
            scene.width(n)
        )));
    }
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Shape("non-finite terminal value".into()));
    }
    Ok(())
}

/// Martingale coefficients of `values` at every step, zero at the last.
pub(crate) fn representation(ce: &ConditionalExpectation, values: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let scene = ce.scene();
    let n = scene.steps();
    let mut z: Vec<Vec<f64>> = (0..n).map(|k| ce.martingale_coefficient(k, &values[k + 1])).collect();
    z.push(vec![0.0; scene.width(n)]);
    z
}

/// Implicit backward Euler for `Y_t = xi + int_t^T e^{-beta s} g(s, Y_s) ds - int_t^T Z dW`.
pub fn solve_bsde_finite(
    driver: &dyn Driver,
    terminal: &[f64],
    ce: &ConditionalExpectation,
    options: &BsdeOptions,
) -> Result<BsdeSolution> {
    let scene = ce.scene();
    let grid = *scene.grid();
    check_terminal(scene, terminal)?;
    check_picard_options(options.tol, options.max_iters)?;
    check_contraction(driver.lipschitz(), grid.dt())?;

    let n = grid.steps();
    let mut y: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    y[n] = terminal.to_vec();
    let mut picard_iters = 0;
    let mut residual: f64 = 0.0;
    for k in (0..n).rev() {
        let cont = ce.expect(k, &y[k + 1]);
        let w = grid.discount_weight(options.beta, k);
        let steps: Vec<ImplicitStep> = cont
            .par_iter()
            .enumerate()
            .map(|(i, &base)| implicit_step(base, w, |v| driver.value(k, i, v), options.tol, options.max_iters, k))
            .collect::<Result<_>>()?;
        for s in &steps {
            picard_iters = picard_iters.max(s.iters);
            residual = residual.max(s.defect);
        }
        y[k] = steps.into_iter().map(|s| s.y).collect();
    }
    let z = representation(ce, &y);
    Ok(BsdeSolution {
        y: AdaptedProcess::new(scene, y)?,
        z: AdaptedProcess::new(scene, z)?,
        picard_iters,
        residual,
    })
}

/// `D = ||f||^2 / beta * exp((2C + 1) / beta)`, the constant of the tail
/// estimate `|Y_t|^2 <= D e^{-beta t}` for zero terminal data.
pub fn tail_constant(bound_f: f64, beta: f64, lipschitz_c: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    if !(bound_f >= 0.0 && lipschitz_c >= 0.0) {
        return Err(Error::Domain("bound and Lipschitz constant must be nonnegative".into()));
    }
    Ok(bound_f * bound_f / beta * ((2.0 * lipschitz_c + 1.0) / beta).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncation {
    /// Tail constant `D`.
    pub constant: f64,
    /// Smallest `T` with `D e^{-beta T} <= tail_tol`.
    pub horizon: f64,
}

pub fn truncation_horizon(spec: &ModelSpec, lipschitz_c: f64, tail_tol: f64) -> Result<Truncation> {
    if !(tail_tol > 0.0) {
        return Err(Error::Domain(format!(
            "tail tolerance must be positive, got {tail_tol}"
        )));
    }
    let constant = tail_constant(spec.bound_f, spec.beta, lipschitz_c)?;
    let horizon = if tail_tol >= constant {
        0.0
    } else {
        (constant / tail_tol).ln() / spec.beta
    };
    Ok(Truncation { constant, horizon })
}

/// Worst violation of an ordering between two node processes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonReport {
    /// `max (lower - upper)^+` over all nodes.
    pub max_violation: f64,
    /// `(step, idx)` of the worst violation, if any is positive.
    pub location: Option<(usize, usize)>,
}

impl ComparisonReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.max_violation <= tol
    }
}

/// Checks `lower <= upper` nodewise.
pub fn ordering_report(lower: &AdaptedProcess, upper: &AdaptedProcess) -> Result<ComparisonReport> {
    lower.require_same_scene(upper)?;
    let mut report = ComparisonReport {
        max_violation: 0.0,
        location: None,
    };
    for (k, (a, b)) in lower.levels().iter().zip(upper.levels()).enumerate() {
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            let v = x - y;
            if v > report.max_violation {
                report = ComparisonReport {
                    max_violation: v,
                    location: Some((k, i)),
                };
            }
        }
    }
    Ok(report)
}

/// `Y <= Y'` for a pair of solutions with ordered drivers.
pub fn compare_drivers(sol: &BsdeSolution, sol_prime: &BsdeSolution) -> Result<ComparisonReport> {
    ordering_report(&sol.y, &sol_prime.y)
}

/// `max_k max_idx (Y_k^2 - D e^{-beta t_k})`; nonpositive when the tail
/// estimate holds.
pub fn tail_bound_slack(sol: &BsdeSolution, constant: f64, beta: f64) -> ComparisonReport {
    let grid = *sol.y.scene().grid();
    let mut report = ComparisonReport {
        max_violation: f64::NEG_INFINITY,
        location: None,
    };
    for (k, level) in sol.y.levels().iter().enumerate() {
        let ceiling = constant * grid.discount(beta, k);
        for (i, y) in level.iter().enumerate() {
            let slack = y * y - ceiling;
            if slack > report.max_violation {
                report = ComparisonReport {
                    max_violation: slack,
                    location: Some((k, i)),
                };
            }
        }
    }
    report
}
