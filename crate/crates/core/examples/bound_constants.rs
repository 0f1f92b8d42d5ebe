//! The a-priori constants: tail constant, truncation horizon and the
//! reflection-cost ceiling, against a measured push.

use optswitch::bsde;
use optswitch::rbsde::{self, ReflectedOptions, Reflection};
use optswitch::{build_tree, solve_rbsde_lower, AdaptedProcess, ConditionalExpectation, ModelSpec, Scene, TimeGrid};

fn main() -> optswitch::Result<()> {
    let spec = ModelSpec::constant_coefficients(1.0, 2.0, 1.0, [0.0; 2], [1.0; 2], [1.0; 2], 0.0);
    let d = bsde::tail_constant(spec.bound_f, spec.beta, 0.0)?;
    let ceiling = rbsde::k_integral_bound(spec.bound_f, spec.beta, spec.c10, 0.0, 0.05)?;
    println!("D = {d:.5}, C_eps(0.05) = {ceiling:.2}");
    for tol in [1e-2, 1e-4, 1e-6] {
        println!(
            "tail below {tol:e} from T = {:.3}",
            bsde::truncation_horizon(&spec, 0.0, tol)?.horizon
        );
    }

    let grid = TimeGrid::new(5.0, 200)?;
    let scene: Scene = build_tree(&spec, &grid)?.into();
    let ce = ConditionalExpectation::new(&scene)?;
    let driver = AdaptedProcess::constant(&scene, -(spec.bound_f + spec.beta * spec.c10))?;
    let lower = AdaptedProcess::from_time(&scene, |t| -spec.c01 * (-spec.beta * t).exp())?;
    let terminal = vec![0.0; scene.width(grid.steps())];
    let push = solve_rbsde_lower(
        &driver,
        &lower,
        &terminal,
        &ce,
        Reflection::Direct,
        &ReflectedOptions::new(spec.beta),
    )?;
    println!(
        "measured E[(sum e^(-beta t) dK)^2] = {:.4}",
        rbsde::discounted_k_second_moment(&push, true)?
    );
    Ok(())
}
