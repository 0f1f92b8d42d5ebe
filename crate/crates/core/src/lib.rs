//! Numerical solver for two-mode optimal switching with discounted,
//! infinite-horizon profits.
//!
//! The value of switching between an old and a new technology is read off a
//! doubly reflected backward equation for the difference of the two values.
//! The crate builds that equation on two kinds of scene:
//!
//! * a recombining binomial lattice, where conditional expectations are
//!   exact and every result can be checked against brute-force enumeration
//!   in [`oracle`];
//! * Euler–Maruyama paths with regression-based conditional expectations.
//!
//! Building blocks, bottom up: [`model`] (coefficients and hypotheses),
//! [`grid`] and [`scene`] (time grids, paths, lattices, adapted processes),
//! [`snell`] (optimal stopping), [`bsde`], [`rbsde`] (one and two reflecting
//! barriers) and [`switching`] (values, regions and strategies). [`cli`] wraps
//! them in a JSON-configured command-line tool.
//!
//! ```
//! use optswitch::{build_tree, solve_switching, ConditionalExpectation, ModelSpec, Mode, Scene, TimeGrid};
//!
//! // Old technology earns 0.4, new earns 1.0; switching costs 0.5 and 0.2.
//! let spec = ModelSpec::constant_coefficients(1.0, 0.5, 0.2, [0.0; 2], [0.3; 2], [0.4, 1.0], 0.0);
//! let grid = TimeGrid::new(5.0, 50).unwrap();
//! let scene: Scene = build_tree(&spec, &grid).unwrap().into();
//! let ce = ConditionalExpectation::new(&scene).unwrap();
//! let sol = solve_switching(&spec, &ce).unwrap();
//! assert!(sol.value(Mode::Old) > 0.4 * (1.0 - (-5.0f64).exp()));
//! ```

pub mod bsde;
pub mod cli;
pub mod error;
pub mod grid;
pub mod model;
pub mod oracle;
pub mod rbsde;
pub mod scene;
pub mod snell;
pub mod switching;

pub use bsde::{solve_bsde_finite, BsdeOptions, BsdeSolution, Driver};
pub use error::{Error, Result};
pub use grid::{build_tree, simulate_paths, LatticeTree, PathBatch, TimeGrid};
pub use model::{validate_spec, Drift, Mode, ModelSpec, Profit, Volatility};
pub use oracle::EnumerationBudget;
pub use rbsde::{solve_rbsde_double, solve_rbsde_lower, RbsdeSolution, ReflectedOptions, Reflection};
pub use scene::{AdaptedProcess, ConditionalExpectation, Scene};
pub use snell::{snell_envelope, SnellResult};
pub use switching::{extract_strategy, solve_switching, Strategy, SwitchingSolution};
