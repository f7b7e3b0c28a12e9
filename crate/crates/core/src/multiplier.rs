//! Budget evaluation and calibration of the multiplier `λ`.

use crate::error::{Error, Result};
use crate::fbp::{solve_fbp_with, FbpOptions, FbpSolution};
use crate::transform::{feasibility_classify, Classification, TransformedProblem};

/// Trapezoid value of `∫ Q̄ φ̃'`.
pub fn budget_of(sol: &FbpSolution, tp: &TransformedProblem) -> f64 {
    tp.budget_of_quantile(&sol.quantile)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub lambda: f64,
    pub solution: FbpSolution,
    pub budget: f64,
    pub bracket: (f64, f64),
    pub iterations: usize,
    /// The budget is constant near `λ*` (the target sits at the threshold, or
    /// the bracket collapsed without meeting the budget tolerance).
    pub flat: bool,
}

const LAMBDA_MIN: f64 = 8.673617379884035e-19; // 2^-60
const LAMBDA_MAX: f64 = 1.152921504606847e18; // 2^60

pub fn calibrate_lambda(tp: &TransformedProblem) -> Result<CalibrationResult> {
    calibrate_lambda_with(tp, &FbpOptions::default())
}

pub fn calibrate_lambda_with(
    tp: &TransformedProblem,
    opts: &FbpOptions,
) -> Result<CalibrationResult> {
    let threshold = match feasibility_classify(tp) {
        Classification::Infeasible { threshold } => {
            return Err(Error::Infeasible {
                budget: tp.varpi,
                threshold,
            })
        }
        c => c.threshold(),
    };
    let target = tp.varpi;
    let tol = 1e-7 * (1.0 + target.abs());
    let ceiling = tp.budget_of_quantile(&alloc::vec![tp.beta; tp.grid.len()]);
    let solve = |lambda: f64| -> Result<(FbpSolution, f64)> {
        let sol = solve_fbp_with(tp, lambda, opts)?;
        let b = budget_of(&sol, tp);
        Ok((sol, b))
    };
    let finish = |lambda, solution, budget: f64, bracket, iterations, collapsed: bool| {
        let flat = collapsed || (budget - threshold).abs() <= tol;
        Ok(CalibrationResult {
            lambda,
            solution,
            budget,
            bracket,
            iterations,
            flat,
        })
    };

    let mut iterations = 1;
    let (sol, b) = solve(1.0)?;
    if (b - target).abs() <= tol {
        return finish(1.0, sol, b, (1.0, 1.0), iterations, false);
    }
    // budget(λ) is non-increasing: lo has budget above the target, hi below
    let (mut lo, mut hi);
    if b > target {
        lo = 1.0;
        hi = 2.0;
        loop {
            iterations += 1;
            let (sol, b) = solve(hi)?;
            if (b - target).abs() <= tol {
                return finish(hi, sol, b, (lo, hi), iterations, false);
            }
            if b < target {
                break;
            }
            lo = hi;
            hi *= 2.0;
            if hi > LAMBDA_MAX {
                return Err(Error::Bracket { lo, hi: LAMBDA_MAX });
            }
        }
    } else {
        hi = 1.0;
        lo = 0.5;
        loop {
            iterations += 1;
            let (sol, b) = solve(lo)?;
            if (b - target).abs() <= tol {
                return finish(lo, sol, b, (lo, hi), iterations, false);
            }
            if b > target {
                break;
            }
            if b >= ceiling - tol {
                return Err(Error::Bracket { lo, hi });
            }
            hi = lo;
            lo *= 0.5;
            if lo < LAMBDA_MIN {
                return Err(Error::Bracket { lo: LAMBDA_MIN, hi });
            }
        }
    }
    loop {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let (sol, b) = solve(mid)?;
        if (b - target).abs() <= tol {
            return finish(mid, sol, b, (lo, hi), iterations, false);
        }
        if b > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            let (sol, b) = solve(mid)?;
            return finish(mid, sol, b, (lo, hi), iterations + 1, true);
        }
    }
}
