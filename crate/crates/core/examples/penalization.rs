//! Penalized reflection converging to the directly reflected solution.

use optswitch::rbsde::{self, ReflectedOptions};
use optswitch::switching::{profit_process, switching_barriers};
use optswitch::{build_tree, ConditionalExpectation, Mode, ModelSpec, Scene, TimeGrid};

fn main() -> optswitch::Result<()> {
    let spec = ModelSpec::constant_coefficients(1.0, 0.3, 0.1, [0.0; 2], [0.5; 2], [0.2, 1.0], 0.0);
    let schedule = [10.0, 100.0, 1000.0];
    let grid = rbsde::refine_for_penalty(&TimeGrid::new(0.5, 10)?, 1000.0)?;
    let scene: Scene = build_tree(&spec, &grid)?.into();
    let ce = ConditionalExpectation::new(&scene)?;
    let f0 = profit_process(&spec, &scene, Mode::Old)?;
    let f1 = profit_process(&spec, &scene, Mode::New)?;
    let driver = f0.zip_with(&f1, |a, b| a - b)?;
    let (lower, upper) = switching_barriers(&spec, &scene)?;
    let terminal = vec![0.0; scene.width(grid.steps())];
    let opts = ReflectedOptions::new(spec.beta);

    for (label, up) in [("lower barrier", None), ("two barriers", Some(&upper))] {
        let (direct, rungs) = rbsde::penalization_schedule(&driver, &lower, up, &terminal, &ce, &schedule, &opts)?;
        println!("{label}: direct Y_0 = {:.6} on {} steps", direct.value(), grid.steps());
        for r in &rungs {
            println!(
                "  n = {:6}: Y_0 = {:.6}, sup error {:.2e}, monotonicity {}",
                r.n,
                r.value,
                r.sup_error,
                r.monotonicity_violation.map_or("-".into(), |v| format!("{v:.1e}"))
            );
        }
    }
    for n in schedule {
        let b = rbsde::penalization_bound_check(&spec, &ce, n)?;
        println!("penalty bound slack at n = {n}: {:.3e}", b.slack);
    }
    Ok(())
}
