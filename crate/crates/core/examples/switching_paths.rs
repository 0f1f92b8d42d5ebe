//! Switching by regression Monte Carlo, with the realized gain of the
//! extracted strategy on the same paths.

use optswitch::switching::{self, GainOptions};
use optswitch::{
    simulate_paths, solve_switching, ConditionalExpectation, Drift, Mode, ModelSpec, Profit, Scene, TimeGrid,
    Volatility,
};

fn main() -> optswitch::Result<()> {
    let mut spec = ModelSpec {
        beta: 0.5,
        c01: 0.4,
        c10: 0.1,
        drift: [
            Drift::Affine {
                intercept: 0.05,
                slope: -0.2,
            },
            Drift::Affine {
                intercept: 0.0,
                slope: -0.2,
            },
        ],
        vol: [
            Volatility::AffineClipped {
                level: 0.4,
                slope: 0.05,
            },
            Volatility::AffineClipped {
                level: 0.5,
                slope: 0.05,
            },
        ],
        profit: [
            Profit::Saturating {
                scale: 1.0,
                steepness: 1.5,
                shift: 0.0,
                floor: 0.2,
            },
            Profit::Saturating {
                scale: 1.6,
                steepness: 2.0,
                shift: -0.5,
                floor: 0.1,
            },
        ],
        x0: 0.0,
        lipschitz_k: 0.0,
        bound_f: 0.0,
    };
    spec.lipschitz_k = spec.analytic_k();
    spec.bound_f = spec.analytic_profit_bound();

    let grid = TimeGrid::new(6.0, 100)?;
    for n_paths in [2_000, 8_000, 32_000] {
        let scene: Scene = simulate_paths(&spec, &grid, n_paths, 7)?.into();
        let ce = ConditionalExpectation::new(&scene)?;
        let sol = solve_switching(&spec, &ce)?;
        let strategy = switching::extract_strategy(&sol, switching::default_region_tol(&scene))?;
        let gain = switching::evaluate_gain(&spec, &strategy, &scene, GainOptions { include_tail: false })?;
        let report = switching::check_admissible(&spec, &strategy, &scene)?;
        println!(
            "{n_paths:6} paths: Y1_0 = {:.4}, gain {:.4} +- {:.4}, expected cost {:.4}, at most {} switches",
            sol.value(Mode::Old),
            gain.mean,
            gain.std_error,
            report.expected_cost,
            report.max_switches
        );
    }
    Ok(())
}
