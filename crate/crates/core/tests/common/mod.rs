//! Random instance generators shared by the integration tests.
#![allow(dead_code)]

use optswitch::{build_tree, ConditionalExpectation, Drift, ModelSpec, Profit, Scene, TimeGrid, Volatility};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A spec with affine drift, affine-clipped volatility and saturating
/// profits whose declared constants are the analytic ones.
pub fn random_spec(rng: &mut ChaCha8Rng) -> ModelSpec {
    let c10 = rng.random_range(0.05..0.5);
    let mut spec = ModelSpec {
        beta: rng.random_range(0.4..2.0),
        c01: c10 + rng.random_range(0.05..0.8),
        c10,
        drift: std::array::from_fn(|_| Drift::Affine {
            intercept: rng.random_range(-0.2..0.2),
            slope: rng.random_range(-0.3..0.1),
        }),
        vol: std::array::from_fn(|_| Volatility::AffineClipped {
            level: rng.random_range(0.2..0.8),
            slope: rng.random_range(-0.1..0.1),
        }),
        profit: std::array::from_fn(|_| Profit::Saturating {
            scale: rng.random_range(0.2..1.5),
            steepness: rng.random_range(0.5..3.0),
            shift: rng.random_range(-0.5..0.5),
            floor: rng.random_range(0.05..0.5),
        }),
        x0: rng.random_range(-0.3..0.3),
        lipschitz_k: 0.0,
        bound_f: 0.0,
    };
    spec.lipschitz_k = spec.analytic_k();
    spec.bound_f = spec.analytic_profit_bound();
    spec
}

pub fn lattice(spec: &ModelSpec, horizon: f64, steps: usize) -> ConditionalExpectation {
    let grid = TimeGrid::new(horizon, steps).unwrap();
    let scene: Scene = build_tree(spec, &grid).unwrap().into();
    ConditionalExpectation::new(&scene).unwrap()
}

/// The equal-profits example: `f = 1` in both modes, `beta = 1`.
pub fn equal_profits_spec() -> ModelSpec {
    ModelSpec::constant_coefficients(1.0, 0.5, 0.2, [0.0; 2], [0.3; 2], [1.0; 2], 0.0)
}

/// Profits that cross as the state moves, cheap switching and strong noise,
/// so that both switching regions are visited.
pub fn switching_spec(rng: &mut ChaCha8Rng) -> ModelSpec {
    let c10 = rng.random_range(0.02..0.2);
    let steep = rng.random_range(1.0..4.0);
    let mut spec = ModelSpec {
        beta: rng.random_range(0.3..1.0),
        c01: c10 + rng.random_range(0.02..0.3),
        c10,
        drift: std::array::from_fn(|_| Drift::Affine {
            intercept: rng.random_range(-0.1..0.1),
            slope: rng.random_range(-0.2..0.0),
        }),
        vol: std::array::from_fn(|_| Volatility::AffineClipped {
            level: rng.random_range(0.5..1.2),
            slope: rng.random_range(-0.05..0.05),
        }),
        profit: [
            Profit::Saturating {
                scale: rng.random_range(0.5..1.5),
                steepness: steep,
                shift: rng.random_range(-0.3..0.3),
                floor: rng.random_range(0.05..0.3),
            },
            Profit::Saturating {
                scale: rng.random_range(0.5..1.5),
                steepness: -steep * rng.random_range(0.5..1.5),
                shift: rng.random_range(-0.3..0.3),
                floor: rng.random_range(0.05..0.3),
            },
        ],
        x0: rng.random_range(-0.2..0.2),
        lipschitz_k: 0.0,
        bound_f: 0.0,
    };
    spec.lipschitz_k = spec.analytic_k();
    spec.bound_f = spec.analytic_profit_bound();
    spec
}
