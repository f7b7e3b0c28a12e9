use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::numeric::segment_index;

/// Strictly concave utility families.
///
/// `Cara { alpha }` is `u(x) = (1 - e^{-αx}) / α`, `Crra { gamma }` is
/// `u(x) = x^{1-γ} / (1-γ)` and `Log` is `ln x`.
#[derive(Debug, Clone, PartialEq)]
pub enum UtilitySpec {
    Cara { alpha: f64 },
    Crra { gamma: f64 },
    Log,
    Tabulated(MarginalTable),
}

/// `(u, u', u'')` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityEval {
    pub value: f64,
    pub marginal: f64,
    pub curvature: f64,
}

/// Utility given by samples of its marginal `u'` on increasing wealth knots.
///
/// `u'` is interpolated linearly, so `u''` is piecewise constant and `u` is
/// piecewise quadratic with `u(x[0]) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTable {
    x: Vec<f64>,
    marginal: Vec<f64>,
    cumulative: Vec<f64>,
}

impl MarginalTable {
    pub fn new(x: Vec<f64>, marginal: Vec<f64>) -> Result<Self> {
        if x.len() < 2 || x.len() != marginal.len() {
            return Err(invalid("utility.x/utility.marginal"));
        }
        if x.iter().chain(&marginal).any(|v| !v.is_finite()) {
            return Err(invalid("utility.x/utility.marginal"));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("utility.x must be strictly increasing"));
        }
        if marginal.windows(2).any(|w| !(w[1] < w[0])) || marginal[marginal.len() - 1] <= 0.0 {
            return Err(invalid(
                "utility.marginal must be positive and strictly decreasing",
            ));
        }
        let mut cumulative = Vec::with_capacity(x.len());
        cumulative.push(0.0);
        for k in 1..x.len() {
            let area = 0.5 * (marginal[k - 1] + marginal[k]) * (x[k] - x[k - 1]);
            cumulative.push(cumulative[k - 1] + area);
        }
        Ok(Self {
            x,
            marginal,
            cumulative,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn marginals(&self) -> &[f64] {
        &self.marginal
    }

    fn slope(&self, k: usize) -> f64 {
        (self.marginal[k + 1] - self.marginal[k]) / (self.x[k + 1] - self.x[k])
    }

    fn eval(&self, x: f64) -> Result<UtilityEval> {
        let n = self.x.len();
        if !(x >= self.x[0] && x <= self.x[n - 1]) {
            return Err(Error::Domain {
                what: "wealth",
                value: x,
                lower: self.x[0],
            });
        }
        let k = segment_index(&self.x, x);
        let s = self.slope(k);
        let dx = x - self.x[k];
        Ok(UtilityEval {
            value: self.cumulative[k] + self.marginal[k] * dx + 0.5 * s * dx * dx,
            marginal: self.marginal[k] + s * dx,
            curvature: s,
        })
    }

    /// Segment whose marginal range contains `y` (marginals are decreasing).
    fn marginal_segment(&self, y: f64) -> Result<usize> {
        let n = self.marginal.len();
        if !(y <= self.marginal[0] && y >= self.marginal[n - 1]) {
            return Err(Error::Range(y));
        }
        // bisection over knots: first index whose marginal drops below y
        let (mut lo, mut hi) = (0usize, n - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.marginal[mid] >= y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }

    fn marginal_inverse(&self, y: f64) -> Result<f64> {
        let k = self.marginal_segment(y)?;
        let (m0, m1) = (self.marginal[k], self.marginal[k + 1]);
        if y == m0 {
            return Ok(self.x[k]);
        }
        Ok(self.x[k] + (m0 - y) / (m0 - m1) * (self.x[k + 1] - self.x[k]))
    }
}

impl UtilitySpec {
    pub fn cara(alpha: f64) -> Result<Self> {
        let u = UtilitySpec::Cara { alpha };
        u.validate()?;
        Ok(u)
    }

    pub fn crra(gamma: f64) -> Result<Self> {
        let u = UtilitySpec::Crra { gamma };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            UtilitySpec::Cara { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                Err(invalid("utility.alpha"))
            }
            UtilitySpec::Crra { gamma } if !(gamma > 0.0 && gamma.is_finite()) || gamma == 1.0 => {
                Err(invalid("utility.gamma"))
            }
            _ => Ok(()),
        }
    }

    /// Infimum of the wealth domain (`-∞` for CARA).
    pub fn domain_lower_bound(&self) -> f64 {
        match self {
            UtilitySpec::Cara { .. } => f64::NEG_INFINITY,
            UtilitySpec::Crra { .. } | UtilitySpec::Log => 0.0,
            UtilitySpec::Tabulated(t) => t.x[0],
        }
    }

    fn check_open_domain(x: f64) -> Result<()> {
        if x > 0.0 && x.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain {
                what: "wealth",
                value: x,
                lower: 0.0,
            })
        }
    }

    pub fn eval(&self, x: f64) -> Result<UtilityEval> {
        match self {
            UtilitySpec::Cara { alpha } => {
                if !x.is_finite() {
                    return Err(Error::Domain {
                        what: "wealth",
                        value: x,
                        lower: f64::NEG_INFINITY,
                    });
                }
                let e = libm::exp(-alpha * x);
                Ok(UtilityEval {
                    value: -libm::expm1(-alpha * x) / alpha,
                    marginal: e,
                    curvature: -alpha * e,
                })
            }
            UtilitySpec::Crra { gamma } => {
                Self::check_open_domain(x)?;
                let m = libm::pow(x, -gamma);
                Ok(UtilityEval {
                    value: x * m / (1.0 - gamma),
                    marginal: m,
                    curvature: -gamma * m / x,
                })
            }
            UtilitySpec::Log => {
                Self::check_open_domain(x)?;
                Ok(UtilityEval {
                    value: libm::log(x),
                    marginal: 1.0 / x,
                    curvature: -1.0 / (x * x),
                })
            }
            UtilitySpec::Tabulated(t) => t.eval(x),
        }
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        self.eval(x).map(|e| e.value)
    }

    pub fn marginal(&self, x: f64) -> Result<f64> {
        self.eval(x).map(|e| e.marginal)
    }

    /// `(u')⁻¹(y)`.
    pub fn marginal_inverse(&self, y: f64) -> Result<f64> {
        if !(y > 0.0 && y.is_finite()) {
            return Err(Error::Range(y));
        }
        match self {
            UtilitySpec::Cara { alpha } => Ok(-libm::log(y) / alpha),
            UtilitySpec::Crra { gamma } => Ok(libm::pow(y, -1.0 / gamma)),
            UtilitySpec::Log => Ok(1.0 / y),
            UtilitySpec::Tabulated(t) => t.marginal_inverse(y),
        }
    }

    /// `κ(y) = u''((u')⁻¹(y))` and its derivative `κ'(y)`, in closed form.
    ///
    /// `κ` is defined for `y ≥ 0` on the closed-form families (it vanishes at
    /// `y = 0` for CRRA and log).
    pub fn curvature_at_marginal(&self, y: f64) -> Result<(f64, f64)> {
        if !(y >= 0.0 && y.is_finite()) {
            return Err(Error::Range(y));
        }
        match self {
            UtilitySpec::Cara { alpha } => Ok((-alpha * y, -alpha)),
            UtilitySpec::Crra { gamma } => {
                let root = libm::pow(y, 1.0 / gamma);
                Ok((-gamma * y * root, -(gamma + 1.0) * root))
            }
            UtilitySpec::Log => Ok((-y * y, -2.0 * y)),
            UtilitySpec::Tabulated(t) => {
                let k = t.marginal_segment(y)?;
                Ok((t.slope(k), 0.0))
            }
        }
    }
}
