//! Problem data for the two-technology switching problem.
//!
//! A [`ModelSpec`] holds the discount rate, the two switching costs and, for
//! each mode, a drift, a volatility and a profit rate drawn from a small
//! parametric catalog:
//!
//! * drift `b(i,x) = intercept + slope * x`
//! * volatility `sigma(i,x) = max(0, level + slope * x)`
//! * profit `f(i,x) = value` or `scale * (1 + tanh(steepness * x + shift)) / 2 + floor`
//!
//! The firm value is `S = exp(X)`; only the log-state `X` is modelled here.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Technology index. Mode `Old` (0) is the initial one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Old,
    New,
}

impl Mode {
    pub const BOTH: [Mode; 2] = [Mode::Old, Mode::New];

    pub fn index(self) -> usize {
        match self {
            Mode::Old => 0,
            Mode::New => 1,
        }
    }

    pub fn from_index(i: usize) -> Mode {
        if i == 0 {
            Mode::Old
        } else {
            Mode::New
        }
    }

    pub fn other(self) -> Mode {
        match self {
            Mode::Old => Mode::New,
            Mode::New => Mode::Old,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Drift {
    Affine { intercept: f64, slope: f64 },
}

impl Drift {
    pub fn constant(value: f64) -> Self {
        Drift::Affine {
            intercept: value,
            slope: 0.0,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Drift::Affine { intercept, slope } => intercept + slope * x,
        }
    }

    fn params(&self) -> [f64; 2] {
        match *self {
            Drift::Affine { intercept, slope } => [intercept, slope],
        }
    }

    pub fn is_constant(&self) -> bool {
        self.params()[1] == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Volatility {
    AffineClipped { level: f64, slope: f64 },
}

impl Volatility {
    pub fn constant(value: f64) -> Self {
        Volatility::AffineClipped {
            level: value,
            slope: 0.0,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Volatility::AffineClipped { level, slope } => (level + slope * x).max(0.0),
        }
    }

    fn params(&self) -> [f64; 2] {
        match *self {
            Volatility::AffineClipped { level, slope } => [level, slope],
        }
    }

    pub fn is_constant(&self) -> bool {
        self.params()[1] == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profit {
    Constant {
        value: f64,
    },
    Saturating {
        scale: f64,
        steepness: f64,
        shift: f64,
        floor: f64,
    },
}

impl Profit {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Profit::Constant { value } => value,
            Profit::Saturating {
                scale,
                steepness,
                shift,
                floor,
            } => scale * (1.0 + (steepness * x + shift).tanh()) / 2.0 + floor,
        }
    }

    /// `sup_x |f(x)|`.
    pub fn sup_abs(&self) -> f64 {
        match *self {
            Profit::Constant { value } => value.abs(),
            Profit::Saturating { scale, floor, .. } => floor.abs().max((floor + scale).abs()),
        }
    }

    fn params(&self) -> Vec<f64> {
        match *self {
            Profit::Constant { value } => vec![value],
            Profit::Saturating {
                scale,
                steepness,
                shift,
                floor,
            } => vec![scale, steepness, shift, floor],
        }
    }
}

/// Full problem datum. Serialized with explicit field names; unknown fields
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub beta: f64,
    pub c01: f64,
    pub c10: f64,
    pub drift: [Drift; 2],
    pub vol: [Volatility; 2],
    pub profit: [Profit; 2],
    pub x0: f64,
    #[serde(rename = "lipschitz_K")]
    pub lipschitz_k: f64,
    pub bound_f: f64,
}

impl ModelSpec {
    /// State-independent coefficients in both modes; `lipschitz_K` and
    /// `bound_f` are filled with their analytic values.
    pub fn constant_coefficients(
        beta: f64,
        c01: f64,
        c10: f64,
        drift: [f64; 2],
        vol: [f64; 2],
        profit: [f64; 2],
        x0: f64,
    ) -> Self {
        let mut spec = ModelSpec {
            beta,
            c01,
            c10,
            drift: drift.map(Drift::constant),
            vol: vol.map(Volatility::constant),
            profit: profit.map(|value| Profit::Constant { value }),
            x0,
            lipschitz_k: 0.0,
            bound_f: 0.0,
        };
        spec.lipschitz_k = spec.analytic_k();
        spec.bound_f = spec.analytic_profit_bound();
        spec
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model spec serializes")
    }

    pub fn drift_at(&self, mode: Mode, x: f64) -> f64 {
        self.drift[mode.index()].eval(x)
    }

    pub fn vol_at(&self, mode: Mode, x: f64) -> f64 {
        self.vol[mode.index()].eval(x)
    }

    pub fn profit_at(&self, mode: Mode, x: f64) -> f64 {
        self.profit[mode.index()].eval(x)
    }

    pub fn switching_cost(&self, from: Mode) -> f64 {
        match from {
            Mode::Old => self.c01,
            Mode::New => self.c10,
        }
    }

    /// True when drift and volatility are state independent in both modes.
    pub fn has_constant_coefficients(&self) -> bool {
        self.drift.iter().all(Drift::is_constant) && self.vol.iter().all(Volatility::is_constant)
    }

    /// Smallest `K` satisfying both the Lipschitz and the linear-growth
    /// hypothesis for the affine catalog.
    pub fn analytic_k(&self) -> f64 {
        let mut k: f64 = 0.0;
        for i in 0..2 {
            let [a, m] = self.drift[i].params();
            let [s, v] = self.vol[i].params();
            k = k.max(m.abs() + v.abs());
            // sup_x ((a + m x)^2 + (s + v x)^2) / (1 + x^2): top eigenvalue of
            // the 2x2 Gram matrix of (a, m) and (s, v).
            let p = a * a + s * s;
            let q = a * m + s * v;
            let r = m * m + v * v;
            let top = 0.5 * (p + r) + (0.25 * (p - r) * (p - r) + q * q).sqrt();
            k = k.max(top.sqrt());
        }
        k
    }

    pub fn analytic_profit_bound(&self) -> f64 {
        self.profit[0].sup_abs().max(self.profit[1].sup_abs())
    }

    fn check_finite(&self) -> Result<()> {
        let mut values = vec![
            ("beta", self.beta),
            ("c01", self.c01),
            ("c10", self.c10),
            ("x0", self.x0),
            ("lipschitz_K", self.lipschitz_k),
            ("bound_f", self.bound_f),
        ];
        for i in 0..2 {
            for v in self.drift[i].params() {
                values.push(("drift", v));
            }
            for v in self.vol[i].params() {
                values.push(("vol", v));
            }
            for v in self.profit[i].params() {
                values.push(("profit", v));
            }
        }
        match values.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, v)) => Err(Error::Config(format!("non-finite {name} parameter: {v}"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub hypothesis: String,
    /// Mode index and state of the witness point, when the hypothesis is
    /// pointwise.
    pub mode: Option<usize>,
    pub point: Option<f64>,
    pub measured: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        ValidationReport {
            ok: violations.is_empty(),
            violations,
        }
    }

    pub fn has(&self, hypothesis: &str) -> bool {
        self.violations.iter().any(|v| v.hypothesis == hypothesis)
    }
}

/// Relative slack granted to declared constants.
const DECLARED_TOLERANCE: f64 = 1e-9;

/// Checks the standing hypotheses by deterministic sampling.
///
/// Sampled quantities: Lipschitz quotients of `b` and `sigma`, the
/// linear-growth ratio, the sign of `sigma` and `|f| <= bound_f`. Scalar
/// conditions (`beta > 0`, `c01 > c10 > 0`) are checked exactly. Violations are
/// collected, never raised; only a malformed descriptor is an error.
pub fn validate_spec(spec: &ModelSpec, probes: usize, seed: u64) -> Result<ValidationReport> {
    if probes == 0 {
        return Err(Error::Config("probes must be >= 1".into()));
    }
    spec.check_finite()?;

    let mut violations = Vec::new();
    let scalar = |name: &str, value: f64| Violation {
        hypothesis: name.to_string(),
        mode: None,
        point: None,
        measured: value,
    };
    if spec.beta <= 0.0 {
        violations.push(scalar("beta>0", spec.beta));
    }
    if spec.c01 <= spec.c10 {
        violations.push(scalar("c01>c10", spec.c01 - spec.c10));
    }
    if spec.c10 <= 0.0 {
        violations.push(scalar("c10>0", spec.c10));
    }

    let k = spec.lipschitz_k;
    let lip_ceiling = k * (1.0 + DECLARED_TOLERANCE) + 1e-12;
    let f_ceiling = spec.bound_f * (1.0 + DECLARED_TOLERANCE) + 1e-12;
    let radius = 10.0 * (1.0 + spec.x0.abs());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for mode in Mode::BOTH {
        let i = mode.index();
        for _ in 0..probes {
            let x = spec.x0 + radius * (2.0 * rng.random::<f64>() - 1.0);
            let h = radius * (1e-3 + rng.random::<f64>());
            let y = x + h;
            let b = spec.drift_at(mode, x);
            let s = spec.vol_at(mode, x);
            let f = spec.profit_at(mode, x);

            let quotient = ((b - spec.drift_at(mode, y)).abs() + (s - spec.vol_at(mode, y)).abs()) / h;
            if quotient > lip_ceiling {
                violations.push(Violation {
                    hypothesis: "lipschitz".into(),
                    mode: Some(i),
                    point: Some(x),
                    measured: quotient,
                });
            }
            let growth = b * b + s * s;
            if growth > k * k * (1.0 + x * x) * (1.0 + DECLARED_TOLERANCE) + 1e-12 {
                violations.push(Violation {
                    hypothesis: "growth".into(),
                    mode: Some(i),
                    point: Some(x),
                    measured: growth / (1.0 + x * x),
                });
            }
            if s < 0.0 {
                violations.push(Violation {
                    hypothesis: "sigma>=0".into(),
                    mode: Some(i),
                    point: Some(x),
                    measured: s,
                });
            }
            if f.abs() > f_ceiling {
                violations.push(Violation {
                    hypothesis: "profit_bound".into(),
                    mode: Some(i),
                    point: Some(x),
                    measured: f.abs(),
                });
            }
        }
    }
    Ok(ValidationReport::from_violations(violations))
}
