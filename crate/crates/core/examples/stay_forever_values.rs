//! Value of running one technology forever: a BSDE with zero terminal data
//! on a truncated horizon, on a lattice and on simulated paths.

use optswitch::bsde::{self, BsdeOptions};
use optswitch::switching::profit_process;
use optswitch::{
    build_tree, simulate_paths, solve_bsde_finite, ConditionalExpectation, Drift, Mode, ModelSpec, Profit, Scene,
    TimeGrid, Volatility,
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
            Drift::constant(0.0),
        ],
        vol: [
            Volatility::AffineClipped {
                level: 0.4,
                slope: 0.05,
            },
            Volatility::constant(0.5),
        ],
        profit: [
            Profit::Saturating {
                scale: 1.0,
                steepness: 1.5,
                shift: 0.0,
                floor: 0.2,
            },
            Profit::Constant { value: 0.9 },
        ],
        x0: 0.0,
        lipschitz_k: 0.0,
        bound_f: 0.0,
    };
    spec.lipschitz_k = spec.analytic_k();
    spec.bound_f = spec.analytic_profit_bound();

    let cut = bsde::truncation_horizon(&spec, 0.0, 1e-3)?;
    println!("tail constant D = {:.4}, horizon T = {:.3}", cut.constant, cut.horizon);
    let grid = TimeGrid::new(cut.horizon, 400)?;
    let scenes: [(&str, Scene); 2] = [
        ("lattice", build_tree(&spec, &grid)?.into()),
        ("paths", simulate_paths(&spec, &grid, 20_000, 1)?.into()),
    ];
    for (name, scene) in scenes {
        let ce = ConditionalExpectation::new(&scene)?;
        let terminal = vec![0.0; scene.width(grid.steps())];
        for mode in Mode::BOTH {
            let f = profit_process(&spec, &scene, mode)?;
            let sol = solve_bsde_finite(&f, &terminal, &ce, &BsdeOptions::new(spec.beta))?;
            let tail = bsde::tail_bound_slack(&sol, cut.constant, spec.beta);
            println!(
                "{name:8} {mode:?}: Y_0 = {:.5}, tail bound holds: {}",
                sol.value(),
                tail.holds(0.0)
            );
        }
    }
    Ok(())
}
