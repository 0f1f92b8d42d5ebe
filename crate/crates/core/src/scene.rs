//! Scenes, adapted processes and conditional expectations.
//!
//! A [`Scene`] is the probability space every backward recursion runs on:
//! either a recombining lattice, where `E[. | F_k]` is an exact child
//! average, or a batch of Monte Carlo paths, where it is a cross-sectional
//! least-squares regression.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{LatticeTree, PathBatch, TimeGrid};
use crate::model::Mode;

/// Largest lattice depth for which trajectories are enumerated one by one.
pub const MAX_ENUMERATED_DEPTH: usize = 20;

#[derive(Debug, Clone)]
pub enum Scene {
    Lattice(Arc<LatticeTree>),
    Paths(Arc<PathBatch>),
}

impl From<LatticeTree> for Scene {
    fn from(tree: LatticeTree) -> Self {
        Scene::Lattice(Arc::new(tree))
    }
}

impl From<PathBatch> for Scene {
    fn from(batch: PathBatch) -> Self {
        Scene::Paths(Arc::new(batch))
    }
}

impl Scene {
    pub fn grid(&self) -> &TimeGrid {
        match self {
            Scene::Lattice(t) => t.grid(),
            Scene::Paths(b) => b.grid(),
        }
    }

    pub fn steps(&self) -> usize {
        self.grid().steps()
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self, Scene::Lattice(_))
    }

    /// Number of nodes (lattice) or paths at a step.
    pub fn width(&self, step: usize) -> usize {
        match self {
            Scene::Lattice(t) => t.width(step),
            Scene::Paths(b) => b.n_paths(),
        }
    }

    pub fn state(&self, mode: Mode, step: usize, idx: usize) -> f64 {
        match self {
            Scene::Lattice(t) => t.state(mode, step, idx),
            Scene::Paths(b) => b.state(mode, step, idx),
        }
    }

    pub fn states_at(&self, mode: Mode, step: usize) -> &[f64] {
        match self {
            Scene::Lattice(t) => t.states_at(mode, step),
            Scene::Paths(b) => b.states_at(mode, step),
        }
    }

    /// Identity of the underlying lattice or batch.
    pub fn same_as(&self, other: &Scene) -> bool {
        match (self, other) {
            (Scene::Lattice(a), Scene::Lattice(b)) => Arc::ptr_eq(a, b),
            (Scene::Paths(a), Scene::Paths(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }

    /// Number of scenarios: paths, or the `2^N` lattice trajectories.
    pub fn n_scenarios(&self) -> Result<usize> {
        match self {
            Scene::Paths(b) => Ok(b.n_paths()),
            Scene::Lattice(t) => {
                let n = t.grid().steps();
                if n > MAX_ENUMERATED_DEPTH {
                    Err(Error::BudgetExceeded {
                        what: "lattice trajectories".into(),
                        estimate: 1u128 << n.min(127),
                        limit: 1u128 << MAX_ENUMERATED_DEPTH,
                    })
                } else {
                    Ok(1usize << n)
                }
            }
        }
    }

    /// Node or path index visited by a scenario at every step.
    ///
    /// Lattice scenario `s` moves up at step `k` when bit `k` of `s` is set.
    pub fn trajectory(&self, scenario: usize) -> Vec<usize> {
        let n = self.steps();
        match self {
            Scene::Paths(_) => vec![scenario; n + 1],
            Scene::Lattice(_) => (0..=n)
                .map(|k| {
                    let mask = if k >= usize::BITS as usize {
                        usize::MAX
                    } else {
                        (1usize << k) - 1
                    };
                    (scenario & mask).count_ones() as usize
                })
                .collect(),
        }
    }

    /// Probability of each scenario.
    pub fn scenario_weight(&self, scenario: usize) -> f64 {
        match self {
            Scene::Paths(b) => 1.0 / b.n_paths() as f64,
            Scene::Lattice(t) => {
                let n = t.grid().steps();
                let ups = (scenario & ((1usize << n) - 1)).count_ones() as i32;
                t.p().powi(ups) * (1.0 - t.p()).powi(n as i32 - ups)
            }
        }
    }

    /// Probability of reaching each node of a level (lattice), or the uniform
    /// path weight.
    pub fn level_weights(&self, step: usize) -> Vec<f64> {
        match self {
            Scene::Paths(b) => vec![1.0 / b.n_paths() as f64; b.n_paths()],
            Scene::Lattice(t) => {
                let p = t.p();
                let mut w = vec![1.0];
                for _ in 0..step {
                    let mut next = vec![0.0; w.len() + 1];
                    for (j, &v) in w.iter().enumerate() {
                        next[j] += (1.0 - p) * v;
                        next[j + 1] += p * v;
                    }
                    w = next;
                }
                w
            }
        }
    }
}

/// A real value at every (step, node-or-path) of a scene.
#[derive(Debug, Clone)]
pub struct AdaptedProcess {
    scene: Scene,
    values: Vec<Vec<f64>>,
}

impl AdaptedProcess {
    pub fn new(scene: &Scene, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != scene.steps() + 1 {
            return Err(Error::Shape(format!(
                "process has {} levels, scene has {}",
                values.len(),
                scene.steps() + 1
            )));
        }
        for (k, level) in values.iter().enumerate() {
            if level.len() != scene.width(k) {
                return Err(Error::Shape(format!(
                    "level {k} has {} values, scene width is {}",
                    level.len(),
                    scene.width(k)
                )));
            }
            if let Some(i) = level.iter().position(|v| !v.is_finite()) {
                return Err(Error::Shape(format!("non-finite value at step {k}, index {i}")));
            }
        }
        Ok(AdaptedProcess {
            scene: scene.clone(),
            values,
        })
    }

    pub fn from_fn(scene: &Scene, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let values = (0..=scene.steps())
            .map(|k| (0..scene.width(k)).map(|i| f(k, i)).collect())
            .collect();
        Self::new(scene, values)
    }

    pub fn constant(scene: &Scene, c: f64) -> Result<Self> {
        Self::from_fn(scene, |_, _| c)
    }

    pub fn zeros(scene: &Scene) -> Self {
        Self::constant(scene, 0.0).expect("zero process is well formed")
    }

    /// Deterministic process `f(t_k)`.
    pub fn from_time(scene: &Scene, f: impl Fn(f64) -> f64) -> Result<Self> {
        let grid = *scene.grid();
        Self::from_fn(scene, |k, _| f(grid.time(k)))
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn at(&self, step: usize, idx: usize) -> f64 {
        self.values[step][idx]
    }

    pub fn level(&self, step: usize) -> &[f64] {
        &self.values[step]
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn into_levels(self) -> Vec<Vec<f64>> {
        self.values
    }

    /// Values along one scenario.
    pub fn along(&self, scenario: usize) -> Vec<f64> {
        self.scene
            .trajectory(scenario)
            .into_iter()
            .enumerate()
            .map(|(k, i)| self.values[k][i])
            .collect()
    }

    pub fn map(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Result<Self> {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, level)| level.iter().enumerate().map(|(i, &v)| f(k, i, v)).collect())
            .collect();
        Self::new(&self.scene, values)
    }

    pub fn zip_with(&self, other: &AdaptedProcess, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        self.require_same_scene(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
            .collect();
        Self::new(&self.scene, values)
    }

    pub fn require_same_scene(&self, other: &AdaptedProcess) -> Result<()> {
        if self.scene.same_as(&other.scene) {
            Ok(())
        } else {
            Err(Error::Shape("processes live on different scenes".into()))
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|self - other|` over all nodes.
    pub fn sup_distance(&self, other: &AdaptedProcess) -> Result<f64> {
        self.require_same_scene(other)?;
        Ok(self
            .values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Columns: `step,node,time,<name>`.
    pub fn write_csv<W: Write>(&self, out: W, name: &str) -> Result<()> {
        write_columns(out, &self.scene, &[(name, self)])
    }
}

/// Writes `step,node,time` followed by one column per process.
pub fn write_columns<W: Write>(out: W, scene: &Scene, columns: &[(&str, &AdaptedProcess)]) -> Result<()> {
    for (_, p) in columns {
        if !p.scene.same_as(scene) {
            return Err(Error::Shape("column lives on a different scene".into()));
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string(), "node".to_string(), "time".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header)?;
    for k in 0..=scene.steps() {
        for i in 0..scene.width(k) {
            let mut row = vec![k.to_string(), i.to_string(), scene.grid().time(k).to_string()];
            row.extend(columns.iter().map(|(_, p)| p.at(k, i).to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-step regression design: standardization and Gram pseudo-inverse.
#[derive(Debug, Clone)]
struct Design {
    center: [f64; 2],
    scale: [f64; 2],
    gram_pinv: DMatrix<f64>,
}

/// `E[. | F_k]` on a scene.
#[derive(Debug, Clone)]
pub struct ConditionalExpectation {
    scene: Scene,
    degree: usize,
    designs: Vec<Design>,
}

/// Default polynomial degree of the regression basis.
pub const DEFAULT_DEGREE: usize = 2;

/// Relative cut-off for singular values of the Gram matrix.
const SINGULAR_CUTOFF: f64 = 1e-10;

fn basis_size(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

fn fill_basis(degree: usize, u: f64, v: f64, out: &mut [f64]) {
    let mut idx = 0;
    for total in 0..=degree {
        for b in 0..=total {
            let a = total - b;
            out[idx] = u.powi(a as i32) * v.powi(b as i32);
            idx += 1;
        }
    }
}

impl ConditionalExpectation {
    /// Exact child averages on a lattice; degree-2 regression on paths.
    pub fn new(scene: &Scene) -> Result<Self> {
        Self::with_degree(scene, DEFAULT_DEGREE)
    }

    /// Regression on all monomials of the standardized `(X^0, X^1)` up to
    /// total degree `degree`. Ignored on lattices.
    pub fn with_degree(scene: &Scene, degree: usize) -> Result<Self> {
        let designs = match scene {
            Scene::Lattice(_) => Vec::new(),
            Scene::Paths(batch) => {
                let m = basis_size(degree);
                if batch.n_paths() < m {
                    return Err(Error::IllPosedRegression {
                        paths: batch.n_paths(),
                        basis: m,
                    });
                }
                (0..batch.grid().steps()).map(|k| design_at(batch, k, degree)).collect()
            }
        };
        Ok(ConditionalExpectation {
            scene: scene.clone(),
            degree,
            designs,
        })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// `E[next | F_step]` where `next` is a level at `step + 1`.
    pub fn expect(&self, step: usize, next: &[f64]) -> Vec<f64> {
        assert_eq!(next.len(), self.scene.width(step + 1), "level width");
        match &self.scene {
            Scene::Lattice(t) => {
                let p = t.p();
                (0..t.width(step))
                    .map(|j| p * next[j + 1] + (1.0 - p) * next[j])
                    .collect()
            }
            Scene::Paths(b) => self.regress(b, step, next),
        }
    }

    /// Martingale-representation coefficient `E[next dW_step | F_step] / dt`.
    pub fn martingale_coefficient(&self, step: usize, next: &[f64]) -> Vec<f64> {
        let dt = self.scene.grid().dt();
        match &self.scene {
            Scene::Lattice(t) => {
                let p = t.p();
                let up = t.brownian_move(true);
                let down = t.brownian_move(false);
                (0..t.width(step))
                    .map(|j| (p * next[j + 1] * up + (1.0 - p) * next[j] * down) / dt)
                    .collect()
            }
            Scene::Paths(b) => {
                let weighted: Vec<f64> = next
                    .iter()
                    .zip(b.increments_at(step))
                    .map(|(v, dw)| v * dw / dt)
                    .collect();
                self.regress(b, step, &weighted)
            }
        }
    }

    fn regress(&self, batch: &PathBatch, step: usize, target: &[f64]) -> Vec<f64> {
        let design = &self.designs[step];
        let m = basis_size(self.degree);
        let xs0 = batch.states_at(Mode::Old, step);
        let xs1 = batch.states_at(Mode::New, step);
        let mut phi = vec![0.0; m];
        let mut moment = DVector::<f64>::zeros(m);
        for i in 0..batch.n_paths() {
            let (u, v) = design.standardize(xs0[i], xs1[i]);
            fill_basis(self.degree, u, v, &mut phi);
            for (a, &p) in phi.iter().enumerate() {
                moment[a] += p * target[i];
            }
        }
        let coef = &design.gram_pinv * moment;
        (0..batch.n_paths())
            .map(|i| {
                let (u, v) = design.standardize(xs0[i], xs1[i]);
                fill_basis(self.degree, u, v, &mut phi);
                phi.iter().zip(coef.iter()).map(|(p, c)| p * c).sum()
            })
            .collect()
    }
}

impl Design {
    fn standardize(&self, x0: f64, x1: f64) -> (f64, f64) {
        (
            (x0 - self.center[0]) / self.scale[0],
            (x1 - self.center[1]) / self.scale[1],
        )
    }
}

fn design_at(batch: &PathBatch, step: usize, degree: usize) -> Design {
    let n = batch.n_paths();
    let mut center = [0.0; 2];
    let mut scale = [1.0; 2];
    for mode in Mode::BOTH {
        let xs = batch.states_at(mode, step);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        center[mode.index()] = mean;
        let sd = var.sqrt();
        if sd > 1e-12 * (1.0 + mean.abs()) {
            scale[mode.index()] = sd;
        }
    }
    let m = basis_size(degree);
    let mut design = Design {
        center,
        scale,
        gram_pinv: DMatrix::zeros(m, m),
    };
    let xs0 = batch.states_at(Mode::Old, step);
    let xs1 = batch.states_at(Mode::New, step);
    let mut gram = DMatrix::<f64>::zeros(m, m);
    let mut phi = vec![0.0; m];
    for i in 0..n {
        let (u, v) = design.standardize(xs0[i], xs1[i]);
        fill_basis(degree, u, v, &mut phi);
        for a in 0..m {
            for b in 0..m {
                gram[(a, b)] += phi[a] * phi[b];
            }
        }
    }
    let svd = gram.svd(true, true);
    let top = svd.singular_values.max();
    design.gram_pinv = svd
        .pseudo_inverse(top * SINGULAR_CUTOFF)
        .expect("SVD computed with both factors");
    design
}
