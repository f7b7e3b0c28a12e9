use crate::error::{invalid, Error, Result};
use crate::numeric::bisect_increasing;

/// Probability weighting (distortion) functions `w: [0,1] → [0,1]`.
///
/// * `Power { gamma }`: `w(p) = p^γ`
/// * `Prelec { a, b }`: `w(p) = exp(-b (-ln p)^a)`
/// * `TverskyKahneman { gamma }`: `w(p) = p^γ / (p^γ + (1-p)^γ)^{1/γ}`
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightingSpec {
    Identity,
    Power { gamma: f64 },
    Prelec { a: f64, b: f64 },
    TverskyKahneman { gamma: f64 },
}

/// `(w(p), w'(p), w⁻¹(p))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightingEval {
    pub value: f64,
    pub derivative: f64,
    pub inverse: f64,
}

/// Below this the Tversky–Kahneman form stops being monotone.
const TK_MIN_GAMMA: f64 = 0.28;

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "probability",
            value: p,
            lower: 0.0,
        })
    }
}

/// Limit of `c p^{e}` as `p → 0+` for `e` possibly zero or negative.
fn power_limit_at_zero(c: f64, e: f64) -> f64 {
    if e > 0.0 {
        0.0
    } else if e == 0.0 {
        c
    } else {
        f64::INFINITY
    }
}

impl WeightingSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        match *self {
            WeightingSpec::Identity => Ok(()),
            WeightingSpec::Power { gamma } if !ok(gamma) => Err(invalid("weighting.gamma")),
            WeightingSpec::Prelec { a, .. } if !ok(a) => Err(invalid("weighting.a")),
            WeightingSpec::Prelec { b, .. } if !ok(b) => Err(invalid("weighting.b")),
            WeightingSpec::TverskyKahneman { gamma } if !(ok(gamma) && gamma >= TK_MIN_GAMMA) => {
                Err(invalid("weighting.gamma"))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, p: f64) -> Result<f64> {
        check_probability(p)?;
        Ok(match *self {
            WeightingSpec::Identity => p,
            WeightingSpec::Power { gamma } => libm::pow(p, gamma),
            WeightingSpec::Prelec { a, b } => prelec(a, b, p),
            WeightingSpec::TverskyKahneman { gamma } => tk(gamma, p),
        })
    }

    /// `w'(p)`; may be `+∞` at an endpoint.
    pub fn derivative(&self, p: f64) -> Result<f64> {
        check_probability(p)?;
        Ok(match *self {
            WeightingSpec::Identity => 1.0,
            WeightingSpec::Power { gamma } => {
                if p == 0.0 {
                    power_limit_at_zero(gamma, gamma - 1.0)
                } else {
                    gamma * libm::pow(p, gamma - 1.0)
                }
            }
            WeightingSpec::Prelec { a, b } => {
                if p == 0.0 {
                    // w(p)/p ~ exp(L - b L^a) with L = -ln p → ∞
                    if a < 1.0 || (a == 1.0 && b < 1.0) {
                        f64::INFINITY
                    } else if a == 1.0 && b == 1.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    let l = -libm::log(p);
                    prelec(a, b, p) * a * b * libm::pow(l, a - 1.0) / p
                }
            }
            WeightingSpec::TverskyKahneman { gamma } => {
                if p == 0.0 {
                    power_limit_at_zero(1.0, gamma - 1.0)
                } else {
                    let s = libm::pow(p, gamma) + libm::pow(1.0 - p, gamma);
                    let diff = libm::pow(p, gamma - 1.0) - libm::pow(1.0 - p, gamma - 1.0);
                    tk(gamma, p) * (gamma / p - diff / s)
                }
            }
        })
    }

    /// `w⁻¹(q)`: closed form where available, bisection otherwise.
    pub fn inverse(&self, q: f64) -> Result<f64> {
        check_probability(q)?;
        Ok(match *self {
            WeightingSpec::Identity => q,
            WeightingSpec::Power { gamma } => libm::pow(q, 1.0 / gamma),
            WeightingSpec::Prelec { a, b } => {
                if q == 0.0 || q == 1.0 {
                    q
                } else {
                    libm::exp(-libm::pow(-libm::log(q) / b, 1.0 / a))
                }
            }
            WeightingSpec::TverskyKahneman { gamma } => {
                if q == 0.0 || q == 1.0 {
                    q
                } else {
                    bisect_increasing(|p| tk(gamma, p) - q, 0.0, 1.0, 1e-16, 200)
                }
            }
        })
    }

    pub fn eval(&self, p: f64) -> Result<WeightingEval> {
        Ok(WeightingEval {
            value: self.value(p)?,
            derivative: self.derivative(p)?,
            inverse: self.inverse(p)?,
        })
    }
}

fn prelec(a: f64, b: f64, p: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        libm::exp(-b * libm::pow(-libm::log(p), a))
    }
}

fn tk(gamma: f64, p: f64) -> f64 {
    if p == 0.0 {
        return 0.0;
    }
    let pg = libm::pow(p, gamma);
    let s = pg + libm::pow(1.0 - p, gamma);
    pg / libm::pow(s, 1.0 / gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_case() {
        let e = WeightingSpec::Identity.eval(0.3).unwrap();
        assert_eq!((e.value, e.derivative, e.inverse), (0.3, 1.0, 0.3));
    }

    #[test]
    fn power_two_at_half() {
        let e = WeightingSpec::Power { gamma: 2.0 }.eval(0.5).unwrap();
        assert_eq!(e.value, 0.25);
        assert_eq!(e.derivative, 1.0);
        assert!((e.inverse - libm::sqrt(0.5)).abs() < 1e-16);
    }

    #[test]
    fn prelec_round_trip() {
        let w = WeightingSpec::Prelec { a: 0.65, b: 1.0 };
        for k in 1..=9 {
            let p = k as f64 / 10.0;
            let back = w.inverse(w.value(p).unwrap()).unwrap();
            assert!((back - p).abs() < 1e-10, "{p} -> {back}");
        }
    }

    #[test]
    fn tk_round_trip_by_bisection() {
        let w = WeightingSpec::TverskyKahneman { gamma: 0.61 };
        for k in 1..=9 {
            let p = k as f64 / 10.0;
            let back = w.inverse(w.value(p).unwrap()).unwrap();
            assert!((back - p).abs() < 1e-12, "{p} -> {back}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let specs = [
            WeightingSpec::Power { gamma: 0.5 },
            WeightingSpec::Power { gamma: 2.0 },
            WeightingSpec::Prelec { a: 0.65, b: 1.0 },
            WeightingSpec::Prelec { a: 1.3, b: 0.8 },
            WeightingSpec::TverskyKahneman { gamma: 0.61 },
            WeightingSpec::TverskyKahneman { gamma: 1.4 },
        ];
        for w in &specs {
            for k in 1..20 {
                let p = k as f64 / 20.0;
                let h = 1e-6;
                let fd = (w.value(p + h).unwrap() - w.value(p - h).unwrap()) / (2.0 * h);
                let d = w.derivative(p).unwrap();
                assert!(
                    (fd - d).abs() < 1e-6 * (1.0 + d.abs()),
                    "{w:?} at {p}: {d} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn endpoint_derivatives() {
        let inv_s = WeightingSpec::Prelec { a: 0.65, b: 1.0 };
        assert_eq!(inv_s.derivative(0.0).unwrap(), f64::INFINITY);
        assert_eq!(inv_s.derivative(1.0).unwrap(), f64::INFINITY);
        let convex = WeightingSpec::Power { gamma: 2.0 };
        assert_eq!(convex.derivative(0.0).unwrap(), 0.0);
        assert_eq!(
            WeightingSpec::TverskyKahneman { gamma: 0.61 }
                .derivative(0.0)
                .unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(WeightingSpec::Power { gamma: 0.0 }.validate().is_err());
        assert!(WeightingSpec::Prelec { a: 0.5, b: -1.0 }
            .validate()
            .is_err());
        assert!(WeightingSpec::TverskyKahneman { gamma: 0.2 }
            .validate()
            .is_err());
        assert!(WeightingSpec::Identity.value(1.5).is_err());
    }
}
