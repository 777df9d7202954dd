//! Step-length rules: Armijo backtracking and fixed steps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::linalg::dot;

/// Learning-rate grid used for fixed-step tuning.
pub const STEP_GRID: [f64; 7] = [1.0, 0.5, 0.1, 0.05, 0.01, 0.005, 0.001];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LineSearchError {
    #[error("not a descent direction (directional derivative {0:.3e})")]
    NotDescent(f64),
    #[error("no sufficient decrease after {evals} evaluations (last step {last_alpha:.3e})")]
    Exhausted { evals: usize, last_alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmijoParams {
    pub alpha0: f64,
    /// Sufficient-decrease constant.
    pub c: f64,
    /// Backtracking factor.
    pub tau: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            c: 1e-4,
            tau: 0.5,
            max_backtracks: 50,
        }
    }
}

impl ArmijoParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha0 > 0.0
            && self.alpha0.is_finite()
            && self.c > 0.0
            && self.c < 1.0
            && self.tau > 0.0
            && self.tau < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid Armijo parameters {self:?}")))
        }
    }
}

/// Accepted Armijo step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmijoStep {
    pub alpha: f64,
    /// Objective evaluations spent, including the accepted one.
    pub evals: usize,
    /// `F(w + alpha·p)`.
    pub value: f64,
}

/// Backtracks from `alpha0` until `F(w + αp) ≤ F(w) + c·α·∇Fᵀp`.
///
/// `f0` is `F(w)` and is not re-evaluated. Non-finite trial values count as
/// failures.
pub fn armijo(
    mut value_fn: impl FnMut(&[f64]) -> f64,
    w: &[f64],
    p: &[f64],
    grad: &[f64],
    f0: f64,
    params: &ArmijoParams,
) -> std::result::Result<ArmijoStep, LineSearchError> {
    let slope = dot(grad, p);
    if slope.is_nan() || slope >= 0.0 {
        return Err(LineSearchError::NotDescent(slope));
    }
    let mut alpha = params.alpha0;
    let mut trial = vec![0.0; w.len()];
    for attempt in 0..=params.max_backtracks {
        for ((t, wi), pi) in trial.iter_mut().zip(w).zip(p) {
            *t = wi + alpha * pi;
        }
        let value = value_fn(&trial);
        if value.is_finite() && value <= f0 + params.c * alpha * slope {
            return Ok(ArmijoStep {
                alpha,
                evals: attempt + 1,
                value,
            });
        }
        if attempt < params.max_backtracks {
            alpha *= params.tau;
        }
    }
    Err(LineSearchError::Exhausted {
        evals: params.max_backtracks + 1,
        last_alpha: alpha,
    })
}

/// A constant step length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedStep(f64);

impl FixedStep {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha.is_finite() {
            Ok(Self(alpha))
        } else {
            Err(Error::InvalidConfig(format!("fixed step must be positive, got {alpha}")))
        }
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepRule {
    Armijo(ArmijoParams),
    Fixed(FixedStep),
}

impl StepRule {
    pub fn armijo() -> Self {
        StepRule::Armijo(ArmijoParams::default())
    }

    pub fn fixed(alpha: f64) -> Result<Self> {
        FixedStep::new(alpha).map(StepRule::Fixed)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StepRule::Armijo(p) => p.validate(),
            StepRule::Fixed(f) => FixedStep::new(f.alpha()).map(|_| ()),
        }
    }
}

impl fmt::Display for StepRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepRule::Armijo(_) => write!(f, "armijo"),
            StepRule::Fixed(s) => write!(f, "fixed:{}", s.alpha()),
        }
    }
}

/// Parses `armijo` or `fixed:ALPHA`.
impl FromStr for StepRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "armijo" {
            return Ok(StepRule::armijo());
        }
        if let Some(alpha) = s.strip_prefix("fixed:") {
            let alpha: f64 = alpha
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad step length in {s:?}")))?;
            return StepRule::fixed(alpha);
        }
        Err(Error::InvalidConfig(format!("unknown step rule {s:?}")))
    }
}
