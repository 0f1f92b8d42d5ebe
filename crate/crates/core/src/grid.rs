//! Time discretization and the two mode-frozen state processes.
//!
//! Both `X^0` and `X^1` are driven by the same Brownian increments, either as
//! Euler-Maruyama Monte Carlo paths ([`PathBatch`]) or as a recombining
//! binomial lattice ([`LatticeTree`]) on which conditional expectations are
//! exact child averages.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Mode, ModelSpec};

/// Uniform grid `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("steps must be >= 1".into()));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// `exp(-beta t_k)`.
    pub fn discount(&self, beta: f64, k: usize) -> f64 {
        (-beta * self.time(k)).exp()
    }

    /// `int_{t_k}^{t_{k+1}} exp(-beta s) ds`, the weight of a running profit
    /// held over step `k`.
    pub fn discount_weight(&self, beta: f64, k: usize) -> f64 {
        let dt = self.time(k + 1) - self.time(k);
        if beta == 0.0 {
            dt
        } else {
            self.discount(beta, k) * -(-beta * dt).exp_m1() / beta
        }
    }
}

/// Monte Carlo paths of `X^0`, `X^1` on a shared Brownian driver.
///
/// Storage is step-major: entry `step * n_paths + path`.
#[derive(Debug, Clone)]
pub struct PathBatch {
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
    increments: Vec<f64>,
    states: [Vec<f64>; 2],
}

impl PathBatch {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Brownian increment `W_{t_{step+1}} - W_{t_step}` of one path.
    pub fn increment(&self, step: usize, path: usize) -> f64 {
        self.increments[step * self.n_paths + path]
    }

    pub fn increments_at(&self, step: usize) -> &[f64] {
        &self.increments[step * self.n_paths..(step + 1) * self.n_paths]
    }

    pub fn state(&self, mode: Mode, step: usize, path: usize) -> f64 {
        self.states[mode.index()][step * self.n_paths + path]
    }

    pub fn states_at(&self, mode: Mode, step: usize) -> &[f64] {
        &self.states[mode.index()][step * self.n_paths..(step + 1) * self.n_paths]
    }

    /// Columns: `path,step,time,x0_state,x1_state`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path", "step", "time", "x0_state", "x1_state"])?;
        for path in 0..self.n_paths {
            for step in 0..=self.grid.steps() {
                w.write_record([
                    path.to_string(),
                    step.to_string(),
                    self.grid.time(step).to_string(),
                    self.state(Mode::Old, step, path).to_string(),
                    self.state(Mode::New, step, path).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Euler-Maruyama simulation of both mode-frozen diffusions.
///
/// Path `p` draws its normals from the ChaCha8 stream `p` of the master
/// seed, so the batch is bit-identical for any number of rayon workers.
pub fn simulate_paths(spec: &ModelSpec, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathBatch> {
    if n_paths == 0 {
        return Err(Error::InvalidGrid("n_paths must be >= 1".into()));
    }
    let steps = grid.steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();

    let simulated: Vec<Result<(Vec<f64>, [Vec<f64>; 2])>> = (0..n_paths)
        .into_par_iter()
        .with_min_len(64)
        .map(|path| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(path as u64);
            let dw: Vec<f64> = (0..steps)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * sqrt_dt
                })
                .collect();
            let mut states = [Vec::with_capacity(steps + 1), Vec::with_capacity(steps + 1)];
            for mode in Mode::BOTH {
                let xs = &mut states[mode.index()];
                let mut x = spec.x0;
                xs.push(x);
                for (k, &d) in dw.iter().enumerate() {
                    x = x + spec.drift_at(mode, x) * dt + spec.vol_at(mode, x) * d;
                    if !x.is_finite() {
                        return Err(Error::NumericalBlowup { path, step: k + 1 });
                    }
                    xs.push(x);
                }
            }
            Ok((dw, states))
        })
        .collect();

    let mut increments = vec![0.0; steps * n_paths];
    let mut states = [vec![0.0; (steps + 1) * n_paths], vec![0.0; (steps + 1) * n_paths]];
    for (path, result) in simulated.into_iter().enumerate() {
        let (dw, xs) = result?;
        for (k, d) in dw.into_iter().enumerate() {
            increments[k * n_paths + path] = d;
        }
        for m in 0..2 {
            for (k, &x) in xs[m].iter().enumerate() {
                states[m][k * n_paths + path] = x;
            }
        }
    }
    Ok(PathBatch {
        grid: *grid,
        n_paths,
        seed,
        increments,
        states,
    })
}

/// Recombining binomial lattice carrying both mode-frozen states.
///
/// Node `j` of level `k` has `j` up-moves; its children are `j + 1` (up) and
/// `j` (down), reached with probabilities `p` and `1 - p`. The Brownian
/// driver moves by `+-sqrt(dt)`, shared by both modes.
#[derive(Debug, Clone)]
pub struct LatticeTree {
    grid: TimeGrid,
    p: f64,
    states: [Vec<Vec<f64>>; 2],
    constant_coefficients: bool,
}

impl LatticeTree {
    /// Driftless unit-volatility walk started at 0 in both modes.
    pub fn standard(grid: &TimeGrid) -> Self {
        let spec = ModelSpec::constant_coefficients(1.0, 2.0, 1.0, [0.0; 2], [1.0; 2], [1.0; 2], 0.0);
        build_tree(&spec, grid).expect("constant unit-volatility lattice is never degenerate")
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Up-branch probability.
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn width(&self, step: usize) -> usize {
        step + 1
    }

    pub fn state(&self, mode: Mode, step: usize, node: usize) -> f64 {
        self.states[mode.index()][step][node]
    }

    pub fn states_at(&self, mode: Mode, step: usize) -> &[f64] {
        &self.states[mode.index()][step]
    }

    pub fn has_constant_coefficients(&self) -> bool {
        self.constant_coefficients
    }

    /// Brownian increment of the up (`true`) or down branch.
    pub fn brownian_move(&self, up: bool) -> f64 {
        let s = self.grid.dt().sqrt();
        if up {
            s
        } else {
            -s
        }
    }

    /// Displacements to the up and down child of a node.
    pub fn displacements(&self, mode: Mode, step: usize, node: usize) -> (f64, f64) {
        let x = self.state(mode, step, node);
        (
            self.state(mode, step + 1, node + 1) - x,
            self.state(mode, step + 1, node) - x,
        )
    }

    /// Conditional mean and variance of the one-step displacement.
    pub fn one_step_moments(&self, mode: Mode, step: usize, node: usize) -> (f64, f64) {
        let (up, down) = self.displacements(mode, step, node);
        let mean = self.p * up + (1.0 - self.p) * down;
        let var = self.p * (up - mean).powi(2) + (1.0 - self.p) * (down - mean).powi(2);
        (mean, var)
    }

    /// Columns: `step,node,time,x0_state,x1_state`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "node", "time", "x0_state", "x1_state"])?;
        for step in 0..=self.grid.steps() {
            for node in 0..self.width(step) {
                w.write_record([
                    step.to_string(),
                    node.to_string(),
                    self.grid.time(step).to_string(),
                    self.state(Mode::Old, step, node).to_string(),
                    self.state(Mode::New, step, node).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds the per-mode lattice with displacements `b dt +- sigma sqrt(dt)`
/// and `p = 1/2`.
///
/// Coefficients are frozen at a parent node: child `j + 1` of level `k + 1`
/// is the up-move of node `j`, child `0` the down-move of node `0`. With
/// constant coefficients both parents agree and the one-step moments are
/// exactly `b dt` and `sigma^2 dt`; with affine coefficients the down-move of
/// the other parent carries an `O(dt)` bias, and the path backend is the
/// reference.
pub fn build_tree(spec: &ModelSpec, grid: &TimeGrid) -> Result<LatticeTree> {
    for mode in Mode::BOTH {
        let vol = &spec.vol[mode.index()];
        if !vol.is_constant() && spec.vol_at(mode, spec.x0) == 0.0 {
            return Err(Error::DegenerateLattice(format!(
                "state-dependent volatility of mode {} vanishes at x0 = {}; use the path backend",
                mode.index(),
                spec.x0
            )));
        }
    }
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut states: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for mode in Mode::BOTH {
        let levels = &mut states[mode.index()];
        levels.push(vec![spec.x0]);
        for k in 0..grid.steps() {
            let prev = &levels[k];
            let mut next = Vec::with_capacity(k + 2);
            let x = prev[0];
            next.push(x + spec.drift_at(mode, x) * dt - spec.vol_at(mode, x) * sqrt_dt);
            for &x in prev {
                next.push(x + spec.drift_at(mode, x) * dt + spec.vol_at(mode, x) * sqrt_dt);
            }
            if let Some(j) = next.iter().position(|v| !v.is_finite()) {
                return Err(Error::NumericalBlowup { path: j, step: k + 1 });
            }
            levels.push(next);
        }
    }
    Ok(LatticeTree {
        grid: *grid,
        p: 0.5,
        states,
        constant_coefficients: spec.has_constant_coefficients(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Drift, Volatility};

    fn spec(drift: [f64; 2], vol: [f64; 2], x0: f64) -> ModelSpec {
        ModelSpec::constant_coefficients(1.0, 2.0, 1.0, drift, vol, [1.0; 2], x0)
    }

    #[test]
    fn grid_endpoints_and_spacing() {
        let g = TimeGrid::new(2.0, 8).unwrap();
        let t = g.times();
        assert_eq!(t[0], 0.0);
        assert_eq!(t[8], 2.0);
        for w in t.windows(2) {
            assert!((w[1] - w[0] - 0.25).abs() < 1e-15);
        }
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn discount_weights_integrate_exactly() {
        let g = TimeGrid::new(3.0, 7).unwrap();
        let beta = 0.8;
        let total: f64 = (0..7).map(|k| g.discount_weight(beta, k)).sum();
        let exact = (1.0 - (-beta * 3.0f64).exp()) / beta;
        assert!((total - exact).abs() < 1e-14);
        assert!((g.discount_weight(0.0, 2) - 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_sde_stays_put() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let batch = simulate_paths(&spec([0.0; 2], [0.0; 2], 3.0), &g, 5, 1).unwrap();
        for mode in Mode::BOTH {
            for k in 0..=10 {
                assert!(batch.states_at(mode, k).iter().all(|&x| x == 3.0));
            }
        }
    }

    #[test]
    fn deterministic_drift_reaches_its_integral() {
        let g = TimeGrid::new(1.0, 16).unwrap();
        let batch = simulate_paths(&spec([0.5, -1.25], [0.0; 2], 0.0), &g, 3, 9).unwrap();
        for p in 0..3 {
            assert!((batch.state(Mode::Old, 16, p) - 0.5).abs() < 1e-14);
            assert!((batch.state(Mode::New, 16, p) + 1.25).abs() < 1e-14);
        }
    }

    #[test]
    fn brownian_terminal_variance() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let n = 100_000;
        let batch = simulate_paths(&spec([0.0; 2], [1.0; 2], 0.0), &g, n, 2024).unwrap();
        let xs = batch.states_at(Mode::Old, 4);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // For a Gaussian sample, sd(sample variance) = sigma^2 sqrt(2 / (n - 1)).
        let se = (2.0 / (n - 1) as f64).sqrt();
        assert!((var - 1.0).abs() < 3.0 * se, "variance {var}");
    }

    #[test]
    fn shared_driver_and_identical_modes() {
        let g = TimeGrid::new(1.0, 12).unwrap();
        let same = simulate_paths(&spec([0.1; 2], [0.4; 2], 1.0), &g, 20, 5).unwrap();
        for k in 0..=12 {
            assert_eq!(same.states_at(Mode::Old, k), same.states_at(Mode::New, k));
        }
    }

    #[test]
    fn resimulation_is_bit_identical_across_pools() {
        let g = TimeGrid::new(1.0, 20).unwrap();
        let s = ModelSpec {
            drift: [
                Drift::Affine {
                    intercept: 0.1,
                    slope: -0.3,
                },
                Drift::constant(0.2),
            ],
            vol: [
                Volatility::AffineClipped { level: 0.3, slope: 0.1 },
                Volatility::constant(0.25),
            ],
            ..spec([0.0; 2], [1.0; 2], 0.0)
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| simulate_paths(&s, &g, 500, 77)).unwrap();
        let b = four.install(|| simulate_paths(&s, &g, 500, 77)).unwrap();
        assert_eq!(a.increments, b.increments);
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn blowup_names_path_and_step() {
        let g = TimeGrid::new(1.0, 50).unwrap();
        let s = ModelSpec {
            drift: [Drift::Affine {
                intercept: 0.0,
                slope: 1e300,
            }; 2],
            ..spec([0.0; 2], [0.0; 2], 1.0)
        };
        match simulate_paths(&s, &g, 2, 0) {
            Err(Error::NumericalBlowup { path: 0, step }) => assert!(step >= 1),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn symmetric_walk_children() {
        let g = TimeGrid::new(0.1, 10).unwrap();
        let tree = build_tree(&spec([0.0; 2], [1.0; 2], 0.0), &g).unwrap();
        let (up, down) = tree.displacements(Mode::Old, 0, 0);
        assert!((up - 0.1).abs() < 1e-15 && (down + 0.1).abs() < 1e-15);
        assert_eq!(tree.p(), 0.5);
    }

    #[test]
    fn drifted_walk_children() {
        let g = TimeGrid::new(0.5, 5).unwrap();
        let tree = build_tree(&spec([0.7, -0.2], [1.0, 2.0], 0.0), &g).unwrap();
        let dt: f64 = 0.1;
        for k in 0..5 {
            for j in 0..=k {
                let (up, down) = tree.displacements(Mode::Old, k, j);
                assert!((up - (0.7 * dt + dt.sqrt())).abs() < 1e-12);
                assert!((down - (0.7 * dt - dt.sqrt())).abs() < 1e-12);
                let (mean, var) = tree.one_step_moments(Mode::New, k, j);
                assert!((mean + 0.2 * dt).abs() < 1e-12);
                assert!((var - 4.0 * dt).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_lattice_terminal_mean() {
        // E[X_T] by summing terminal states against binomial weights.
        let n = 12;
        let g = TimeGrid::new(2.0, n).unwrap();
        let mu = 0.35;
        let tree = build_tree(&spec([mu, 0.0], [0.8, 1.0], 1.5), &g).unwrap();
        let mut weight = 0.5f64.powi(n as i32);
        let mut mean = 0.0;
        for j in 0..=n {
            mean += weight * tree.state(Mode::Old, n, j);
            weight = weight * (n - j) as f64 / (j + 1) as f64;
        }
        assert!((mean - (1.5 + mu * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn vanishing_state_dependent_vol_is_degenerate() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let s = ModelSpec {
            vol: [
                Volatility::AffineClipped { level: 0.0, slope: 1.0 },
                Volatility::constant(1.0),
            ],
            ..spec([0.0; 2], [1.0; 2], 0.0)
        };
        assert!(matches!(build_tree(&s, &g), Err(Error::DegenerateLattice(_))));
        // A constant zero volatility is a legitimate (deterministic) lattice.
        assert!(build_tree(&spec([0.0; 2], [0.0; 2], 0.0), &g).is_ok());
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let g = TimeGrid::new(1.0, 3).unwrap();
        let batch = simulate_paths(&spec([0.0; 2], [1.0; 2], 0.0), &g, 2, 1).unwrap();
        let mut buf = Vec::new();
        batch.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("path,step,time,x0_state,x1_state"));
        assert_eq!(lines.count(), 2 * 4);
    }
}
