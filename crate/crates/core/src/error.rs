//! Crate-wide error type.
//!
//! Every variant carries a stable, module-qualified code (see [`Error::code`])
//! so the command-line front end can emit machine-readable failures.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid model: {0}")]
    InvalidSpec(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("numerical blow-up on path {path} at step {step}")]
    NumericalBlowup { path: usize, step: usize },

    #[error("degenerate lattice: {0}")]
    DegenerateLattice(String),

    #[error("ill-posed regression: {paths} paths for {basis} basis functions")]
    IllPosedRegression { paths: usize, basis: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("step size too large for Picard contraction: lipschitz {lipschitz} * dt {dt} >= 1, refine the grid")]
    StepSize { lipschitz: f64, dt: f64 },

    #[error("Picard iteration did not converge at step {step} (last defect {defect:e})")]
    Convergence { step: usize, defect: f64 },

    #[error("infeasible barriers at step {step}, node {node}: lower {lower} > upper {upper}")]
    InfeasibleBarriers {
        step: usize,
        node: usize,
        lower: f64,
        upper: f64,
    },

    #[error("barrier sign: {0}")]
    BarrierSign(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("enumeration budget exceeded for {what}: estimated {estimate} > limit {limit}")]
    BudgetExceeded { what: String, estimate: u128, limit: u128 },

    #[error("switch regions overlap at step {step}, node {node}")]
    OverlappingRegions { step: usize, node: usize },

    #[error("usage: {0}")]
    Usage(String),

    #[error("unknown command `{0}`")]
    UnknownCommand(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, `<module>.<kind>`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "model.config",
            Error::InvalidSpec(_) => "model.invalid",
            Error::Validation(_) => "model.validation",
            Error::InvalidGrid(_) => "grid.invalid",
            Error::NumericalBlowup { .. } => "grid.blowup",
            Error::DegenerateLattice(_) => "grid.degenerate_lattice",
            Error::IllPosedRegression { .. } => "scene.ill_posed_regression",
            Error::Shape(_) => "scene.shape",
            Error::StepSize { .. } => "bsde.step_size",
            Error::Convergence { .. } => "bsde.convergence",
            Error::InfeasibleBarriers { .. } => "rbsde.infeasible_barriers",
            Error::BarrierSign(_) => "rbsde.barrier_sign",
            Error::Domain(_) => "rbsde.domain",
            Error::Precondition(_) => "oracle.precondition",
            Error::BudgetExceeded { .. } => "oracle.budget",
            Error::OverlappingRegions { .. } => "switching.overlapping_regions",
            Error::Usage(_) => "cli.usage",
            Error::UnknownCommand(_) => "cli.unknown_command",
            Error::Io(_) => "cli.io",
            Error::Csv(_) => "cli.csv",
            Error::Json(_) => "cli.json",
        }
    }
}
