//! Brute-force solvers of the discretized Lagrangian problem
//!
//! ```text
//! max  Σ_i w_i [u(Q_i) - λ Q_i φ̃'_i]   over 0 ≤ Q_{i+1} - Q_i ≤ c̄_i,  Q_{n-1} = β,
//! ```
//!
//! with trapezoid weights `w_i`, parameterized by the increments
//! `c_i = Q_{i+1} - Q_i`. These work directly on the quantile and are used to
//! cross-check [`crate::fbp`].

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::UtilitySpec;
use crate::transform::TransformedProblem;

const EXHAUSTIVE_LIMIT: u128 = 134_217_728; // 8^9
const MAX_SWEEPS: usize = 100_000;

fn trapezoid_weights(m: usize) -> Vec<f64> {
    let h = 1.0 / (m - 1) as f64;
    let mut w = vec![h; m];
    w[0] = 0.5 * h;
    w[m - 1] = 0.5 * h;
    w
}

/// Lagrangian objective of `q` on the grid of `tp`; `-∞` outside the
/// utility's domain.
pub fn lagrangian(tp: &TransformedProblem, lambda: f64, q: &[f64]) -> f64 {
    let w = trapezoid_weights(q.len());
    q.iter()
        .zip(&w)
        .zip(&tp.phi_tilde_prime)
        .map(|((qi, wi), fp)| match tp.utility.value(*qi) {
            Ok(v) => wi * (v - lambda * qi * fp),
            Err(_) => f64::NEG_INFINITY,
        })
        .sum()
}

struct Enumeration<'a> {
    utility: &'a UtilitySpec,
    weights: Vec<f64>,
    price: Vec<f64>,
    steps: Vec<f64>,
    levels: usize,
    choice: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
}

impl Enumeration<'_> {
    fn term(&self, k: usize, q: f64) -> Option<f64> {
        let v = self.utility.value(q).ok()?;
        Some(self.weights[k] * (v - self.price[k] * q))
    }

    fn visit(&mut self, k: usize, q_right: f64, partial: f64) {
        for level in (0..self.levels).rev() {
            let q = q_right - self.steps[k] * level as f64;
            let Some(t) = self.term(k, q) else { continue };
            self.choice[k] = level;
            let value = partial + t;
            if k == 0 {
                let better = match &self.best {
                    None => true,
                    Some((b, c)) => value > *b || (value == *b && self.choice > *c),
                };
                if better {
                    self.best = Some((value, self.choice.clone()));
                }
            } else {
                self.visit(k - 1, q, value);
            }
        }
    }
}

/// Exhaustive search over `levels` equally spaced values of every increment
/// on the `m`-node subgrid of `tp` (`(n-1)` must be a multiple of `m-1`).
///
/// Returns the `m` quantile values; ties go to the lexicographically largest
/// increment vector.
pub fn oracle_exhaustive(
    tp: &TransformedProblem,
    lambda: f64,
    m: usize,
    levels: usize,
) -> Result<Vec<f64>> {
    let n = tp.grid.len();
    if m < 2 || levels == 0 || (n - 1) % (m - 1) != 0 {
        return Err(crate::error::invalid("oracle.nodes must divide the grid"));
    }
    let cost = (levels as u128).saturating_pow((m - 1) as u32);
    if cost > EXHAUSTIVE_LIMIT {
        return Err(Error::Size {
            cost,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let stride = (n - 1) / (m - 1);
    let fine = tp.increment_bounds();
    let spacing = if levels > 1 { (levels - 1) as f64 } else { 1.0 };
    let steps: Vec<f64> = (0..m - 1)
        .map(|k| fine[k * stride..(k + 1) * stride].iter().sum::<f64>() / spacing)
        .collect();
    let price: Vec<f64> = (0..m)
        .map(|k| lambda * tp.phi_tilde_prime[k * stride])
        .collect();
    let mut search = Enumeration {
        utility: &tp.utility,
        weights: trapezoid_weights(m),
        price,
        steps,
        levels,
        choice: vec![0; m - 1],
        best: None,
    };
    let top = search.term(m - 1, tp.beta).ok_or(Error::Domain {
        what: "utility",
        value: tp.beta,
        lower: tp.utility.domain_lower_bound(),
    })?;
    search.visit(m - 2, tp.beta, top);
    let (_, choice) = search.best.ok_or(Error::Domain {
        what: "utility",
        value: tp.beta,
        lower: tp.utility.domain_lower_bound(),
    })?;
    let mut q = vec![tp.beta; m];
    for k in (0..m - 1).rev() {
        q[k] = q[k + 1] - search.steps[k] * choice[k] as f64;
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedOracle {
    pub quantile: Vec<f64>,
    pub objective: f64,
    pub sweeps: usize,
}

/// Maximizer of a concave scalar function on `[lo, hi]` given its first and
/// second derivatives; `None` from `slope` means "outside the domain, to the
/// right". Newton steps are kept inside a bisection bracket.
fn maximize_concave<F>(slope: F, mut lo: f64, mut hi: f64) -> f64
where
    F: Fn(f64) -> Option<(f64, f64)>,
{
    let at_lo = slope(lo);
    if let Some((d, _)) = at_lo {
        if d <= 0.0 {
            return lo;
        }
    }
    match slope(hi) {
        Some((d, _)) if d >= 0.0 => return hi,
        _ => {}
    }
    let mut t = 0.0f64.clamp(lo, hi);
    for _ in 0..100 {
        let next = match slope(t) {
            None => {
                hi = t;
                0.5 * (lo + hi)
            }
            Some((d, dd)) => {
                if d > 0.0 {
                    lo = t;
                } else if d < 0.0 {
                    hi = t;
                } else {
                    return t;
                }
                let newton = t - d / dd;
                if dd < 0.0 && newton > lo && newton < hi {
                    newton
                } else {
                    0.5 * (lo + hi)
                }
            }
        };
        if (next - t).abs() <= 4.0 * f64::EPSILON * (1.0 + t.abs()) || hi - lo <= f64::EPSILON {
            return next;
        }
        t = next;
    }
    t
}

/// Cyclic coordinate ascent over the increments, interleaved with single-node
/// moves (which change two adjacent increments and keep the rest).
pub fn oracle_projected(tp: &TransformedProblem, lambda: f64) -> Result<ProjectedOracle> {
    let n = tp.grid.len();
    let bounds = tp.increment_bounds();
    let weights = trapezoid_weights(n);
    let price: Vec<f64> = tp.phi_tilde_prime.iter().map(|f| lambda * f).collect();
    let u = &tp.utility;
    let mut q = vec![tp.beta; n];
    for i in (0..n - 1).rev() {
        q[i] = q[i + 1] - 0.5 * bounds[i];
    }
    let mut objective = lagrangian(tp, lambda, &q);
    if !objective.is_finite() {
        return Err(Error::Domain {
            what: "utility",
            value: q[0],
            lower: u.domain_lower_bound(),
        });
    }
    for sweep in 1..=MAX_SWEEPS {
        for k in 0..n - 1 {
            let lo = if k == 0 {
                q[1] - bounds[0]
            } else {
                q[k - 1].max(q[k + 1] - bounds[k])
            };
            let hi = if k == 0 {
                q[1]
            } else {
                (q[k - 1] + bounds[k - 1]).min(q[k + 1])
            };
            let (wk, pk, qk) = (weights[k], price[k], q[k]);
            let t = maximize_concave(
                |s| {
                    let e = u.eval(qk + s).ok()?;
                    Some((wk * (e.marginal - pk), wk * e.curvature))
                },
                lo - qk,
                hi - qk,
            );
            q[k] = (qk + t).max(lo).min(hi);
        }
        for j in 0..n - 1 {
            let c = q[j + 1] - q[j];
            let head = &q[..=j];
            let t = maximize_concave(
                |s| {
                    let mut d = 0.0;
                    let mut dd = 0.0;
                    for i in 0..=j {
                        let e = u.eval(head[i] - s).ok()?;
                        d -= weights[i] * (e.marginal - price[i]);
                        dd += weights[i] * e.curvature;
                    }
                    Some((d, dd))
                },
                -c,
                bounds[j] - c,
            );
            if t != 0.0 {
                for v in q[..=j].iter_mut() {
                    *v -= t;
                }
            }
        }
        let next = lagrangian(tp, lambda, &q);
        let gain = next - objective;
        objective = next;
        if gain < 1e-12 {
            return Ok(ProjectedOracle {
                quantile: q,
                objective,
                sweeps: sweep,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_SWEEPS,
        residual: f64::NAN,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub sup_norm: f64,
    pub mean_abs: f64,
}

pub fn compare(a: &[f64], b: &[f64]) -> Result<Comparison> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::GridMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut sup = 0.0f64;
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = (x - y).abs();
        sup = sup.max(d);
        sum += d;
    }
    Ok(Comparison {
        sup_norm: sup,
        mean_abs: sum / a.len() as f64,
    })
}
