//! How fast the number of stopping rules grows, and a raw enumeration of
//! every rule on a shallow lattice.

use optswitch::oracle;
use optswitch::{snell_envelope, AdaptedProcess, LatticeTree, Scene, TimeGrid};

fn main() -> optswitch::Result<()> {
    for n in 0..=6 {
        println!("depth {n}: {} rules", oracle::stopping_rule_count(n));
    }
    let grid = TimeGrid::new(1.0, 4)?;
    let scene: Scene = LatticeTree::standard(&grid).into();
    let reward = AdaptedProcess::from_fn(&scene, |k, j| ((k * 7 + j * 3) % 5) as f64 - 2.0)?;
    let values = oracle::all_stopping_values(&reward)?;
    let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "{} rule values, best {best}, envelope {}",
        values.len(),
        snell_envelope(&reward)?.value()
    );
    Ok(())
}
