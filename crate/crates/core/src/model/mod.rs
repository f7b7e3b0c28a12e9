//! Parametric utilities, weighting functions, loss models and the problem
//! statement that ties them together.

mod loss;
mod utility;
mod weighting;

use alloc::vec::Vec;

pub use loss::{LossModel, QuantilePoint, QuantileTable};
pub use utility::{MarginalTable, UtilityEval, UtilitySpec};
pub use weighting::{WeightingEval, WeightingSpec};

use crate::error::{invalid, Result};
use crate::numeric::{interpolate_knots, segment_index};

/// Nonnegative budget density `φ` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Density {
    Constant(f64),
    /// `scale · t^exponent`, `exponent ≥ 0`.
    Power {
        scale: f64,
        exponent: f64,
    },
    /// Piecewise linear through knots spanning `[0, 1]`.
    Tabulated {
        t: Vec<f64>,
        values: Vec<f64>,
    },
}

impl Default for Density {
    fn default() -> Self {
        Density::Constant(1.0)
    }
}

impl Density {
    pub fn validate(&self) -> Result<()> {
        match self {
            Density::Constant(c) if !(*c >= 0.0 && c.is_finite()) => Err(invalid("phi.value")),
            Density::Power { scale, exponent } => {
                if !(*scale >= 0.0 && scale.is_finite()) {
                    Err(invalid("phi.scale"))
                } else if !(*exponent >= 0.0 && exponent.is_finite()) {
                    Err(invalid("phi.exponent"))
                } else {
                    Ok(())
                }
            }
            Density::Tabulated { t, values } => {
                let n = t.len();
                if n < 2 || n != values.len() || t[0] != 0.0 || t[n - 1] != 1.0 {
                    return Err(invalid("phi.t/phi.values"));
                }
                if t.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(invalid("phi.t must be strictly increasing"));
                }
                if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(invalid("phi.values must be nonnegative"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Density::Constant(c) => *c,
            Density::Power { scale, exponent } => {
                if *exponent == 0.0 {
                    *scale
                } else {
                    scale * libm::pow(t, *exponent)
                }
            }
            Density::Tabulated { t: knots, values } => {
                interpolate_knots(knots, values, t.clamp(0.0, 1.0)).unwrap_or(0.0)
            }
        }
    }

    /// Closed-form `∫₀ˣ φ`.
    pub fn integral_to(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match self {
            Density::Constant(c) => c * x,
            Density::Power { scale, exponent } => {
                scale * libm::pow(x, exponent + 1.0) / (exponent + 1.0)
            }
            Density::Tabulated { t, values } => {
                let k = segment_index(t, x);
                let mut total = 0.0;
                for j in 0..k {
                    total += 0.5 * (values[j] + values[j + 1]) * (t[j + 1] - t[j]);
                }
                let v = interpolate_knots(t, values, x).unwrap_or(0.0);
                total + 0.5 * (values[k] + v) * (x - t[k])
            }
        }
    }
}

/// How the budget enters: premium cap `π` (then `ϖ = β + π - E[X]`) or `ϖ`
/// directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Premium(f64),
    Direct(f64),
}

/// Full problem statement in the original (untransformed) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    /// Wealth when no loss occurs.
    pub beta: f64,
    pub budget: Budget,
    pub density: Density,
    pub utility: UtilitySpec,
    pub weighting: WeightingSpec,
    pub loss: LossModel,
}

impl ProblemSpec {
    /// `ϖ`.
    pub fn varpi(&self) -> f64 {
        match self.budget {
            Budget::Direct(v) => v,
            Budget::Premium(pi) => self.beta + pi - self.loss.mean(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.utility.validate()?;
        self.weighting.validate()?;
        self.loss.validate()?;
        self.density.validate()?;
        if !self.beta.is_finite() {
            return Err(invalid("beta"));
        }
        if !self.varpi().is_finite() {
            return Err(invalid("budget"));
        }
        // β > X a.s., and the smallest admissible quantile stays in the utility domain
        if !(self.beta > self.loss.ess_sup()) {
            return Err(invalid(
                "beta must exceed the essential supremum of the loss",
            ));
        }
        if !(self.beta - self.loss.ess_sup() > self.utility.domain_lower_bound()) {
            return Err(invalid("beta - sup X must lie inside the utility domain"));
        }
        Ok(())
    }
}
