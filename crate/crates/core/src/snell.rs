//! Discrete Snell envelope, Doob decomposition and optimal stopping.

use std::io::Write;

use crate::error::{Error, Result};
use crate::scene::{AdaptedProcess, ConditionalExpectation, Scene};

/// Default tie tolerance on lattices.
pub const LATTICE_TOL: f64 = 1e-10;
/// Default tie tolerance on regression paths.
pub const PATHS_TOL: f64 = 1e-3;

/// Envelope `Z` of a reward `U` with its Doob parts.
///
/// The compensator increment `dA_k = Z_k - E[Z_{k+1} | F_k]` is a node
/// process. On paths the running sums `A` and `M = Z + A` are stored as well;
/// on a recombining lattice `A_k` depends on the route to a node and is
/// reconstructed per trajectory by [`SnellResult::doob_along`].
#[derive(Debug, Clone)]
pub struct SnellResult {
    reward: AdaptedProcess,
    envelope: AdaptedProcess,
    continuation: AdaptedProcess,
    compensator_increment: AdaptedProcess,
    compensator: Option<AdaptedProcess>,
    martingale: Option<AdaptedProcess>,
}

/// Doob decomposition read along one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DoobPath {
    pub envelope: Vec<f64>,
    pub compensator: Vec<f64>,
    pub martingale: Vec<f64>,
}

impl SnellResult {
    pub fn reward(&self) -> &AdaptedProcess {
        &self.reward
    }

    pub fn envelope(&self) -> &AdaptedProcess {
        &self.envelope
    }

    pub fn value(&self) -> f64 {
        self.envelope.at(0, 0)
    }

    /// `E[Z_{k+1} | F_k]`; at the last step it equals `Z_N`.
    pub fn continuation(&self) -> &AdaptedProcess {
        &self.continuation
    }

    pub fn compensator_increment(&self) -> &AdaptedProcess {
        &self.compensator_increment
    }

    /// Running compensator, available on path scenes.
    pub fn compensator(&self) -> Option<&AdaptedProcess> {
        self.compensator.as_ref()
    }

    /// `M = Z + A`, available on path scenes.
    pub fn martingale(&self) -> Option<&AdaptedProcess> {
        self.martingale.as_ref()
    }

    pub fn doob_along(&self, scenario: usize) -> DoobPath {
        let nodes = self.envelope.scene().trajectory(scenario);
        let envelope: Vec<f64> = nodes.iter().enumerate().map(|(k, &i)| self.envelope.at(k, i)).collect();
        let mut compensator = vec![0.0; nodes.len()];
        for k in 1..nodes.len() {
            compensator[k] = compensator[k - 1] + self.compensator_increment.at(k - 1, nodes[k - 1]);
        }
        let martingale = envelope.iter().zip(&compensator).map(|(z, a)| z + a).collect();
        DoobPath {
            envelope,
            compensator,
            martingale,
        }
    }

    /// Columns: `step,node,U,Z,A,dA`. `A` is empty on lattices.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let scene = self.envelope.scene();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "node", "U", "Z", "A", "dA"])?;
        for k in 0..=scene.steps() {
            for i in 0..scene.width(k) {
                let a = self
                    .compensator
                    .as_ref()
                    .map(|a| a.at(k, i).to_string())
                    .unwrap_or_default();
                w.write_record([
                    k.to_string(),
                    i.to_string(),
                    self.reward.at(k, i).to_string(),
                    self.envelope.at(k, i).to_string(),
                    a,
                    self.compensator_increment.at(k, i).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Envelope with the scene's default conditional expectation.
pub fn snell_envelope(reward: &AdaptedProcess) -> Result<SnellResult> {
    let ce = ConditionalExpectation::new(reward.scene())?;
    snell_envelope_with(reward, &ce)
}

/// `Z_N = U_N`, `Z_k = max(U_k, E[Z_{k+1} | F_k])`.
pub fn snell_envelope_with(reward: &AdaptedProcess, ce: &ConditionalExpectation) -> Result<SnellResult> {
    let scene = reward.scene();
    if !scene.same_as(ce.scene()) {
        return Err(Error::Shape(
            "reward and conditional expectation use different scenes".into(),
        ));
    }
    let n = scene.steps();
    let mut z: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut cont: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut da: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    z[n] = reward.level(n).to_vec();
    cont[n] = z[n].clone();
    da[n] = vec![0.0; scene.width(n)];
    for k in (0..n).rev() {
        let c = ce.expect(k, &z[k + 1]);
        let level: Vec<f64> = reward.level(k).iter().zip(&c).map(|(&u, &c)| u.max(c)).collect();
        da[k] = level.iter().zip(&c).map(|(z, c)| z - c).collect();
        z[k] = level;
        cont[k] = c;
    }
    let (compensator, martingale) = match scene {
        Scene::Lattice(_) => (None, None),
        Scene::Paths(_) => {
            let width = scene.width(0);
            let mut a = vec![vec![0.0; width]; n + 1];
            for k in 1..=n {
                for i in 0..width {
                    a[k][i] = a[k - 1][i] + da[k - 1][i];
                }
            }
            let m = z
                .iter()
                .zip(&a)
                .map(|(zl, al)| zl.iter().zip(al).map(|(z, a)| z + a).collect())
                .collect();
            (
                Some(AdaptedProcess::new(scene, a)?),
                Some(AdaptedProcess::new(scene, m)?),
            )
        }
    };
    Ok(SnellResult {
        reward: reward.clone(),
        envelope: AdaptedProcess::new(scene, z)?,
        continuation: AdaptedProcess::new(scene, cont)?,
        compensator_increment: AdaptedProcess::new(scene, da)?,
        compensator,
        martingale,
    })
}

/// Lattice stopping rule as a node set: stop at the first visited node in
/// the set.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingRegion {
    gamma: usize,
    stop: Vec<Vec<bool>>,
}

impl StoppingRegion {
    pub fn new(gamma: usize, stop: Vec<Vec<bool>>) -> Self {
        StoppingRegion { gamma, stop }
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn is_stop(&self, step: usize, node: usize) -> bool {
        step >= self.gamma && self.stop[step][node]
    }

    /// Stopping step along a lattice trajectory.
    pub fn time_along(&self, scene: &Scene, scenario: usize) -> Option<usize> {
        scene
            .trajectory(scenario)
            .into_iter()
            .enumerate()
            .find(|&(k, j)| self.is_stop(k, j))
            .map(|(k, _)| k)
    }

    /// `E[U_tau]` by backward evaluation of the rule; the reward counts as
    /// zero on trajectories that never stop.
    pub fn value(&self, reward: &AdaptedProcess, ce: &ConditionalExpectation) -> f64 {
        let scene = reward.scene();
        let n = scene.steps();
        let mut v: Vec<f64> = (0..scene.width(n))
            .map(|j| if self.is_stop(n, j) { reward.at(n, j) } else { 0.0 })
            .collect();
        for k in (0..n).rev() {
            let c = ce.expect(k, &v);
            v = (0..scene.width(k))
                .map(|j| if self.is_stop(k, j) { reward.at(k, j) } else { c[j] })
                .collect();
        }
        v[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoppingRule {
    Lattice(StoppingRegion),
    /// Stopping step per path; `None` when the path never stops.
    Paths(Vec<Option<usize>>),
}

/// First `k >= gamma` with `Z_k <= U_k + tol`, ties toward stopping.
pub fn first_optimal_time(
    result: &SnellResult,
    reward: &AdaptedProcess,
    gamma: usize,
    tol: f64,
) -> Result<StoppingRule> {
    let scene = reward.scene();
    result.envelope.require_same_scene(reward)?;
    let n = scene.steps();
    if gamma > n {
        return Err(Error::InvalidGrid(format!("gamma {gamma} beyond the last step {n}")));
    }
    if !(tol >= 0.0) {
        return Err(Error::Domain(format!("tolerance must be nonnegative, got {tol}")));
    }
    let optimal = |k: usize, i: usize| result.envelope.at(k, i) <= reward.at(k, i) + tol;
    Ok(match scene {
        Scene::Lattice(_) => {
            let stop = (0..=n)
                .map(|k| (0..scene.width(k)).map(|j| k >= gamma && optimal(k, j)).collect())
                .collect();
            StoppingRule::Lattice(StoppingRegion { gamma, stop })
        }
        Scene::Paths(_) => StoppingRule::Paths(
            (0..scene.width(0))
                .map(|i| (gamma..=n).find(|&k| optimal(k, i)))
                .collect(),
        ),
    })
}
