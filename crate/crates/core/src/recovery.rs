//! From the optimal transformed quantile back to a retention/indemnity pair.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{LossModel, ProblemSpec, UtilitySpec, WeightingSpec};
use crate::numeric::{segment_index, trapezoid};
use crate::transform::TransformedProblem;

#[derive(Debug, Clone, PartialEq)]
pub struct Contract {
    pub x: Vec<f64>,
    pub retention: Vec<f64>,
    pub indemnity: Vec<f64>,
    /// `E[I(X)]`.
    pub premium: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViolationReport {
    pub count: usize,
    /// Left index of the worst pair.
    pub worst_node: Option<usize>,
    pub worst_magnitude: f64,
}

impl ViolationReport {
    pub fn is_compliant(&self) -> bool {
        self.count == 0
    }
}

/// `G(p) = Q̄(1 - w(1 - p))` on the grid of `tp`.
///
/// `G(ν_j) = Q̄_j`; between those points `G` is linear in the loss level
/// `F⁻¹(1 - p)`, so its slope against the loss is the one `Q̄` carries.
pub fn recover_quantile(
    quantile: &[f64],
    tp: &TransformedProblem,
    loss: &LossModel,
) -> Result<Vec<f64>> {
    let n = tp.grid.len();
    if quantile.len() != n {
        return Err(Error::GridMismatch {
            left: n,
            right: quantile.len(),
        });
    }
    let level = |p: f64| loss.quantile(1.0 - p);
    let knots = tp
        .nu
        .iter()
        .map(|&v| level(v))
        .collect::<Result<Vec<f64>>>()?;
    let mut g = Vec::with_capacity(n);
    for i in 0..n {
        let p = tp.grid.node(i);
        let j = segment_index(&tp.nu, p);
        let (lo, hi) = (tp.nu[j], tp.nu[j + 1]);
        let value = if p <= lo {
            quantile[j]
        } else if p >= hi {
            quantile[j + 1]
        } else {
            let span = knots[j] - knots[j + 1];
            let theta = if span > 0.0 {
                (knots[j] - level(p)?) / span
            } else {
                (p - lo) / (hi - lo)
            };
            quantile[j] + (quantile[j + 1] - quantile[j]) * theta.clamp(0.0, 1.0)
        };
        g.push(value);
    }
    g[n - 1] = quantile[n - 1];
    Ok(g)
}

/// `count` equally spaced loss values on `[0, F⁻¹(1 - 10⁻⁶)]`.
pub fn default_loss_points(loss: &LossModel, count: usize) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(crate::error::invalid("contract.points >= 2"));
    }
    let top = loss.quantile(1.0 - 1e-6)?;
    Ok((0..count)
        .map(|j| top * j as f64 / (count - 1) as f64)
        .collect())
}

/// `R(x) = g(F_X(x))` with `g(p) = β - G(1 - p)`, and `I = x - R`.
///
/// `G` is read between grid nodes linearly in the loss level, so `R` is
/// piecewise linear in `x`.
pub fn recover_contract(g: &[f64], loss: &LossModel, beta: f64, x: &[f64]) -> Result<Contract> {
    let n = g.len();
    if n < 2 {
        return Err(crate::error::invalid("quantile samples"));
    }
    if x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(crate::error::invalid("loss points must increase"));
    }
    let step = 1.0 / (n - 1) as f64;
    // F⁻¹(1 - p_i), nonincreasing in i
    let levels = (0..n)
        .map(|i| {
            loss.quantile(if i == n - 1 {
                0.0
            } else {
                1.0 - i as f64 * step
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut retention = Vec::with_capacity(x.len());
    let mut indemnity = Vec::with_capacity(x.len());
    for &xj in x {
        let r = if xj == 0.0 {
            0.0
        } else {
            let k = levels.partition_point(|&l| l > xj);
            let i = k.saturating_sub(1).min(n - 2);
            let span = levels[i] - levels[i + 1];
            let theta = if span > 0.0 {
                ((levels[i] - xj) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
            beta - (g[i] + (g[i + 1] - g[i]) * theta)
        };
        // I + R reproduces x exactly with this split
        let i = xj - r;
        retention.push(xj - i);
        indemnity.push(i);
    }
    let premium = loss.mean() - beta + trapezoid(g, step);
    Ok(Contract {
        x: x.to_vec(),
        retention,
        indemnity,
        premium,
    })
}

/// `∫ u(G(p)) w'(1-p) dp = ∫ u(G) dW` with `W(p) = 1 - w(1 - p)`.
///
/// Composite Simpson rule on the nonuniform knots `W(p_i)`, pairing cells
/// from the left; a leftover cell, or a pair whose widths differ by more than
/// a factor of 4, takes the trapezoid rule. An end cell where `u(G)` is
/// undefined at the node uses the value at the cell midpoint.
pub fn rdut_value(g: &[f64], u: &UtilitySpec, w: &WeightingSpec) -> Result<f64> {
    let n = g.len();
    if n < 2 {
        return Err(crate::error::invalid("quantile samples"));
    }
    let dp = 1.0 / (n - 1) as f64;
    let mut knots = Vec::with_capacity(n);
    for i in 0..n {
        knots.push(match i {
            0 => 0.0,
            _ if i == n - 1 => 1.0,
            _ => 1.0 - w.value(1.0 - i as f64 * dp)?,
        });
    }
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        values.push(match u.value(g[i]) {
            Ok(v) => v,
            Err(_) if i == 0 => u.value(0.5 * (g[0] + g[1]))?,
            Err(_) if i == n - 1 => u.value(0.5 * (g[n - 2] + g[n - 1]))?,
            Err(e) => return Err(e),
        });
    }
    let mut total = 0.0;
    let mut i = 0;
    while i + 1 < n {
        let h0 = knots[i + 1] - knots[i];
        if i + 2 < n {
            let h1 = knots[i + 2] - knots[i + 1];
            if h0 > 0.0 && h1 > 0.0 && h1 <= 4.0 * h0 && h0 <= 4.0 * h1 {
                let (f0, f1, f2) = (values[i], values[i + 1], values[i + 2]);
                total += (h0 + h1) / 6.0
                    * ((2.0 - h1 / h0) * f0
                        + (h0 + h1) * (h0 + h1) / (h0 * h1) * f1
                        + (2.0 - h0 / h1) * f2);
                i += 2;
                continue;
            }
        }
        total += 0.5 * (values[i] + values[i + 1]) * h0;
        i += 1;
    }
    Ok(total)
}

/// Sub-intervals for a cell next to a singular node of `ν'`.
const END_CELL_REFINEMENT: usize = 256;

/// Trapezoid value of `∫ u(Q̄) dp`.
///
/// Cells touching a node where `ν'` is infinite are refined on a mesh graded
/// toward that node, with `Q̄` following the loss level `F⁻¹(1 - ν(p))` inside
/// the cell as it does where the derivative bound binds.
pub fn transformed_objective(
    quantile: &[f64],
    tp: &TransformedProblem,
    spec: &ProblemSpec,
) -> Result<f64> {
    let n = tp.grid.len();
    if quantile.len() != n {
        return Err(Error::GridMismatch {
            left: n,
            right: quantile.len(),
        });
    }
    let u = &spec.utility;
    let dp = tp.grid.step();
    let level = |p: f64| -> Result<f64> {
        let nu = if p <= 0.0 {
            0.0
        } else if p >= 1.0 {
            1.0
        } else {
            1.0 - spec.weighting.inverse(1.0 - p)?
        };
        spec.loss.quantile(1.0 - nu)
    };
    let mut total = 0.0;
    for i in 0..n - 1 {
        let toward_left = tp.singular_nodes.contains(&i);
        if !toward_left && !tp.singular_nodes.contains(&(i + 1)) {
            total += 0.5 * (u.value(quantile[i])? + u.value(quantile[i + 1])?) * dp;
            continue;
        }
        let (left, right) = (tp.grid.node(i), tp.grid.node(i + 1));
        let (l0, l1) = (level(left)?, level(right)?);
        let rise = quantile[i + 1] - quantile[i];
        let mut previous: Option<(f64, f64)> = None;
        for k in 0..=END_CELL_REFINEMENT {
            let s = k as f64 / END_CELL_REFINEMENT as f64;
            let t = if toward_left {
                s * s
            } else {
                1.0 - (1.0 - s) * (1.0 - s)
            };
            let p = left + t * dp;
            let theta = if k == 0 {
                0.0
            } else if k == END_CELL_REFINEMENT {
                1.0
            } else if l0 > l1 {
                ((l0 - level(p)?) / (l0 - l1)).clamp(0.0, 1.0)
            } else {
                t
            };
            let v = u.value(quantile[i] + theta * rise)?;
            if let Some((p0, v0)) = previous {
                total += 0.5 * (v0 + v) * (p - p0);
            }
            previous = Some((p, v));
        }
    }
    Ok(total)
}

pub fn validate_incentive_compatibility(c: &Contract) -> ViolationReport {
    const TOL: f64 = 1e-9;
    let mut report = ViolationReport::default();
    for j in 0..c.x.len().saturating_sub(1) {
        let dr = c.retention[j + 1] - c.retention[j];
        let dx = c.x[j + 1] - c.x[j];
        let excess = (-dr).max(dr - dx);
        if excess > TOL {
            report.count += 1;
            if excess > report.worst_magnitude {
                report.worst_magnitude = excess;
                report.worst_node = Some(j);
            }
        }
    }
    report
}
