use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::numeric::{interpolate_knots, segment_index, trapezoid_nonuniform};

/// Loss distributions, stored through their quantile function `F_X⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub enum LossModel {
    /// `X ~ Uniform(0, b)`.
    Uniform { b: f64 },
    /// `X = 0` with probability `q`, otherwise `Uniform(0, b)`.
    MassAtZero { q: f64, b: f64 },
    /// Piecewise-linear quantile through `(t_k, x_k)`.
    Tabulated(QuantileTable),
}

/// Knots of a piecewise-linear quantile function on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    t: Vec<f64>,
    x: Vec<f64>,
}

impl QuantileTable {
    pub fn new(t: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        let n = t.len();
        if n < 2 || n != x.len() || t.iter().chain(&x).any(|v| !v.is_finite()) {
            return Err(invalid("loss.p/loss.x"));
        }
        if t[0] != 0.0 || t[n - 1] != 1.0 || t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("loss.p must increase strictly from 0 to 1"));
        }
        if x[0] < 0.0 || x.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("loss.x must be nonnegative and nondecreasing"));
        }
        Ok(Self { t, x })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.t
    }

    pub fn losses(&self) -> &[f64] {
        &self.x
    }
}

/// `F_X⁻¹(p)` together with `h(p) = (F_X⁻¹)'(1-p)`.
///
/// `one_sided` is set when the quantile has a kink at `1-p`; the rate is then
/// the slope of the segment just above `1-p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantilePoint {
    pub value: f64,
    pub rate: f64,
    pub one_sided: bool,
}

fn check_unit(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "probability",
            value: t,
            lower: 0.0,
        })
    }
}

impl LossModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossModel::Uniform { b } if !(b > 0.0 && b.is_finite()) => Err(invalid("loss.b")),
            LossModel::MassAtZero { b, .. } if !(b > 0.0 && b.is_finite()) => {
                Err(invalid("loss.b"))
            }
            LossModel::MassAtZero { q, .. } if !(0.0..1.0).contains(&q) => Err(invalid("loss.q")),
            _ => Ok(()),
        }
    }

    /// `F_X⁻¹(t)`.
    pub fn quantile(&self, t: f64) -> Result<f64> {
        check_unit(t)?;
        Ok(match self {
            LossModel::Uniform { b } => b * t,
            LossModel::MassAtZero { q, b } => {
                if t <= *q {
                    0.0
                } else {
                    b * (t - q) / (1.0 - q)
                }
            }
            LossModel::Tabulated(tab) => interpolate_knots(&tab.t, &tab.x, t).unwrap_or(0.0),
        })
    }

    /// `(F_X⁻¹)'(t)` and whether `t` sits on a kink.
    pub fn quantile_slope(&self, t: f64) -> Result<(f64, bool)> {
        check_unit(t)?;
        Ok(match self {
            LossModel::Uniform { b } => (*b, false),
            LossModel::MassAtZero { q, b } => {
                let s = b / (1.0 - q);
                if t > *q {
                    (s, false)
                } else if t < *q {
                    (0.0, false)
                } else {
                    (s, true)
                }
            }
            LossModel::Tabulated(tab) => {
                let k = segment_index(&tab.t, t);
                let slope = |k: usize| (tab.x[k + 1] - tab.x[k]) / (tab.t[k + 1] - tab.t[k]);
                let s = slope(k);
                let kink = k > 0 && tab.t[k] == t && slope(k - 1) != s;
                (s, kink)
            }
        })
    }

    /// Quantile value at `p` and the derivative bound rate `h(p)`.
    pub fn point(&self, p: f64) -> Result<QuantilePoint> {
        let value = self.quantile(p)?;
        let (rate, one_sided) = self.quantile_slope(1.0 - p)?;
        Ok(QuantilePoint {
            value,
            rate,
            one_sided,
        })
    }

    /// `h(p) = (F_X⁻¹)'(1-p)`.
    pub fn rate(&self, p: f64) -> Result<f64> {
        self.quantile_slope(1.0 - p).map(|(s, _)| s)
    }

    pub fn mean(&self) -> f64 {
        match self {
            LossModel::Uniform { b } => 0.5 * b,
            LossModel::MassAtZero { q, b } => 0.5 * b * (1.0 - q),
            LossModel::Tabulated(tab) => trapezoid_nonuniform(&tab.t, &tab.x),
        }
    }

    /// Essential supremum `F_X⁻¹(1)`.
    pub fn ess_sup(&self) -> f64 {
        match self {
            LossModel::Uniform { b } | LossModel::MassAtZero { b, .. } => *b,
            LossModel::Tabulated(tab) => tab.x[tab.x.len() - 1],
        }
    }

    /// `F_X(x) = sup { t : F_X⁻¹(t) ≤ x }`, by bisection on the quantile.
    ///
    /// With an atom at zero this gives `F_X(0) = q`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(Error::Inversion { x });
        }
        if x >= self.ess_sup() {
            return Ok(1.0);
        }
        if self.quantile(0.0)? > x {
            return Ok(0.0);
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.quantile(mid)? <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if !(self.quantile(lo)? <= x) {
            return Err(Error::Inversion { x });
        }
        Ok(lo)
    }
}
