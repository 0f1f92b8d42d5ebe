//! Two-mode switching on a lattice: values, regions, extracted strategy and
//! a brute-force cross-check.

use optswitch::oracle::{self, EnumerationBudget};
use optswitch::switching::{self, GainOptions};
use optswitch::{
    build_tree, solve_switching, ConditionalExpectation, Drift, Mode, ModelSpec, Profit, Scene, TimeGrid, Volatility,
};

fn main() -> optswitch::Result<()> {
    let mut spec = ModelSpec {
        beta: 0.5,
        c01: 0.15,
        c10: 0.05,
        drift: [Drift::constant(0.0); 2],
        vol: [Volatility::constant(0.9); 2],
        profit: [
            Profit::Saturating {
                scale: 1.0,
                steepness: 2.0,
                shift: 0.0,
                floor: 0.1,
            },
            Profit::Saturating {
                scale: 1.0,
                steepness: -2.0,
                shift: 0.0,
                floor: 0.15,
            },
        ],
        x0: 0.0,
        lipschitz_k: 0.0,
        bound_f: 0.0,
    };
    spec.lipschitz_k = spec.analytic_k();
    spec.bound_f = spec.analytic_profit_bound();

    let grid = TimeGrid::new(2.0, 8)?;
    let scene: Scene = build_tree(&spec, &grid)?.into();
    let ce = ConditionalExpectation::new(&scene)?;
    let sol = solve_switching(&spec, &ce)?;
    println!(
        "Y1_0 = {:.10}  Y2_0 = {:.10}",
        sol.value(Mode::Old),
        sol.value(Mode::New)
    );

    let strategy = switching::extract_strategy(&sol, switching::LATTICE_REGION_TOL)?;
    let gain = switching::evaluate_gain(&spec, &strategy, &scene, GainOptions { include_tail: false })?;
    let found = oracle::enumerate_switching_strategies(&spec, &scene, &EnumerationBudget::default())?;
    println!("strategy gain {:.10}, oracle {:.10}", gain.mean, found.value);
    let open = found.best_open_loop();
    println!("best open-loop plan {:?} earns {:.10}", open.times, open.gain);

    for row in sol.boundary_table() {
        println!(
            "t = {:.2}: lower boundary {:?}, upper boundary {:?}",
            row.time, row.lower_boundary, row.upper_boundary
        );
    }
    Ok(())
}
