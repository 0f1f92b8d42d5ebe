//! Optimal exercise of a put on the old-technology state, solved by the
//! Snell envelope and checked against exhaustive search.

use optswitch::oracle::{self, EnumerationBudget};
use optswitch::snell::{self, StoppingRule};
use optswitch::{build_tree, snell_envelope, AdaptedProcess, ConditionalExpectation, Mode, ModelSpec, Scene, TimeGrid};

fn main() -> optswitch::Result<()> {
    let spec = ModelSpec::constant_coefficients(1.0, 0.5, 0.2, [0.0; 2], [0.4; 2], [1.0; 2], 0.0);
    let grid = TimeGrid::new(1.0, 10)?;
    let scene: Scene = build_tree(&spec, &grid)?.into();
    let strike = 0.1;
    let reward = AdaptedProcess::from_fn(&scene, |k, i| {
        (-0.05 * grid.time(k)).exp() * (strike - scene.state(Mode::Old, k, i)).max(0.0)
    })?;

    let result = snell_envelope(&reward)?;
    let found = oracle::enumerate_stopping_values(&reward, &EnumerationBudget::new(10, 0)?)?;
    println!("envelope value   {:.12}", result.value());
    println!(
        "oracle value     {:.12} over {} histories",
        found.value, found.histories
    );

    let ce = ConditionalExpectation::new(&scene)?;
    if let StoppingRule::Lattice(region) = snell::first_optimal_time(&result, &reward, 0, snell::LATTICE_TOL)? {
        println!("first optimal time value {:.12}", region.value(&reward, &ce));
        for k in 0..=grid.steps() {
            let row: String = (0..=k).map(|j| if region.is_stop(k, j) { 'x' } else { '.' }).collect();
            println!("  step {k:2} {row}");
        }
    }
    Ok(())
}
