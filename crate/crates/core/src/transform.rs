//! Change of variable `Q = G∘ν` that removes the weighting function from the
//! objective, discretization onto a uniform grid, and the feasibility
//! trichotomy of the transformed problem.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::model::{Density, ProblemSpec, UtilitySpec, WeightingSpec};
use crate::numeric::trapezoid;

/// Uniform grid `p_i = i / (n-1)` on `[0, 1]`, `n ≥ 9`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub const MIN_NODES: usize = 9;

    pub fn new(n: usize) -> Result<Self> {
        if n < Self::MIN_NODES {
            return Err(invalid("grid.n >= 9"));
        }
        Ok(Self { n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        1.0 / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            1.0
        } else {
            i as f64 / (self.n - 1) as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }
}

/// `ν(p) = 1 - w⁻¹(1-p)` and `ν'(p) = 1 / w'(w⁻¹(1-p))`.
pub fn nu_map(w: &WeightingSpec, p: f64) -> Result<(f64, f64)> {
    let inv = w.inverse(1.0 - p)?;
    let slope = w.derivative(inv)?;
    if slope == 0.0 {
        return Err(Error::SingularDerivative { p });
    }
    let nu = if p == 1.0 { 1.0 } else { 1.0 - inv };
    Ok((nu, 1.0 / slope))
}

/// Grid samples of the transformed problem
/// `max ∫u(Q) s.t. ∫Q φ̃' ≤ ϖ, Q(1) = β, 0 ≤ Q' ≤ ħ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedProblem {
    pub grid: Grid,
    /// `ν(p_i)`.
    pub nu: Vec<f64>,
    /// `ħ(p_i) = h(ν(p_i)) ν'(p_i)`.
    pub hbar: Vec<f64>,
    /// `φ̃(p_i) = ∫₀^{ν(p_i)} φ`.
    pub phi_tilde: Vec<f64>,
    /// `φ̃'(p_i) = φ(ν(p_i)) ν'(p_i)`.
    pub phi_tilde_prime: Vec<f64>,
    pub beta: f64,
    pub varpi: f64,
    pub utility: UtilitySpec,
    /// Endpoint nodes where `ν'` is infinite; `ħ` and `φ̃'` there hold the
    /// average over the adjacent cell.
    pub singular_nodes: Vec<usize>,
    /// Nodes where the loss quantile has a kink and `ħ` is one-sided.
    pub one_sided_nodes: Vec<usize>,
    /// `∫ħ` over each cell.
    pub cell_bounds: Vec<f64>,
}

/// Sub-intervals per grid cell for the `φ̃` quadrature.
const REFINEMENT: usize = 32;

fn refined_trapezoid(phi: &Density, a: f64, b: f64) -> f64 {
    let h = (b - a) / REFINEMENT as f64;
    let mut sum = 0.5 * (phi.value(a) + phi.value(b));
    for k in 1..REFINEMENT {
        sum += phi.value(a + k as f64 * h);
    }
    sum * h
}

pub fn transform_problem(spec: &ProblemSpec, grid: Grid) -> Result<TransformedProblem> {
    spec.validate()?;
    let n = grid.len();
    let dp = grid.step();
    let mut nu = Vec::with_capacity(n);
    let mut nu_prime = Vec::with_capacity(n);
    let mut singular_nodes = Vec::new();
    for i in 0..n {
        let p = grid.node(i);
        match nu_map(&spec.weighting, p) {
            Ok((v, d)) if d.is_finite() => {
                nu.push(v);
                nu_prime.push(d);
            }
            Ok(_) | Err(Error::SingularDerivative { .. }) if i == 0 || i == n - 1 => {
                nu.push(if i == 0 { 0.0 } else { 1.0 });
                nu_prime.push(f64::NAN);
                singular_nodes.push(i);
            }
            Ok(_) => return Err(Error::SingularDerivative { p }),
            Err(e) => return Err(e),
        }
    }

    let mut phi_tilde = Vec::with_capacity(n);
    phi_tilde.push(0.0);
    for i in 1..n {
        let next = phi_tilde[i - 1] + refined_trapezoid(&spec.density, nu[i - 1], nu[i]);
        if !next.is_finite() {
            return Err(Error::Quadrature { p: grid.node(i) });
        }
        phi_tilde.push(next);
    }

    let mut hbar = Vec::with_capacity(n);
    let mut phi_tilde_prime = Vec::with_capacity(n);
    let mut one_sided_nodes = Vec::new();
    for i in 0..n {
        if singular_nodes.contains(&i) {
            let (a, b) = if i == 0 { (0, 1) } else { (n - 2, n - 1) };
            let mass = spec.loss.quantile(1.0 - nu[a])? - spec.loss.quantile(1.0 - nu[b])?;
            hbar.push(mass.abs() / dp);
            phi_tilde_prime.push((phi_tilde[b] - phi_tilde[a]) / dp);
            continue;
        }
        let pt = spec.loss.point(nu[i])?;
        if pt.one_sided {
            one_sided_nodes.push(i);
        }
        let h = if nu_prime[i] == 0.0 {
            0.0
        } else {
            pt.rate * nu_prime[i]
        };
        hbar.push(h);
        phi_tilde_prime.push(spec.density.value(nu[i]) * nu_prime[i]);
    }
    if let Some(i) = hbar.iter().position(|h| !h.is_finite()) {
        return Err(Error::SingularDerivative { p: grid.node(i) });
    }
    let mut loss_quantile = Vec::with_capacity(n);
    for &v in &nu {
        loss_quantile.push(spec.loss.quantile(1.0 - v)?);
    }
    let cell_bounds = loss_quantile
        .windows(2)
        .map(|x| (x[0] - x[1]).max(0.0))
        .collect();

    Ok(TransformedProblem {
        grid,
        nu,
        hbar,
        phi_tilde,
        phi_tilde_prime,
        beta: spec.beta,
        varpi: spec.varpi(),
        utility: spec.utility.clone(),
        singular_nodes,
        one_sided_nodes,
        cell_bounds,
    })
}

impl TransformedProblem {
    /// Assemble a transformed problem from raw samples (`ν` is taken to be the
    /// identity).
    pub fn from_parts(
        grid: Grid,
        hbar: Vec<f64>,
        phi_tilde: Vec<f64>,
        phi_tilde_prime: Vec<f64>,
        beta: f64,
        varpi: f64,
        utility: UtilitySpec,
    ) -> Result<Self> {
        let n = grid.len();
        for len in [hbar.len(), phi_tilde.len(), phi_tilde_prime.len()] {
            if len != n {
                return Err(Error::GridMismatch {
                    left: n,
                    right: len,
                });
            }
        }
        if hbar.iter().any(|h| !(*h >= 0.0 && h.is_finite())) {
            return Err(invalid("hbar must be finite and nonnegative"));
        }
        if phi_tilde.windows(2).any(|w| w[1] < w[0]) || phi_tilde[0] != 0.0 {
            return Err(invalid("phi_tilde must start at 0 and increase"));
        }
        utility.validate()?;
        let dp = grid.step();
        let cell_bounds = hbar.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dp).collect();
        Ok(Self {
            grid,
            nu: grid.nodes(),
            hbar,
            phi_tilde,
            phi_tilde_prime,
            beta,
            varpi,
            utility,
            singular_nodes: Vec::new(),
            one_sided_nodes: Vec::new(),
            cell_bounds,
        })
    }

    /// Per-cell bounds on `Q_{i+1} - Q_i`.
    pub fn increment_bounds(&self) -> Vec<f64> {
        self.cell_bounds.clone()
    }

    /// `ħ` at each node as the mean slope of the adjacent cells.
    pub fn node_bounds(&self) -> Vec<f64> {
        let n = self.grid.len();
        let dp = self.grid.step();
        let b = &self.cell_bounds;
        (0..n)
            .map(|i| match i {
                0 => b[0] / dp,
                _ if i == n - 1 => b[n - 2] / dp,
                _ => 0.5 * (b[i - 1] + b[i]) / dp,
            })
            .collect()
    }

    /// `β φ̃(1) - ∫ φ̃ ħ`, the smallest attainable budget, taken as the
    /// budget of the minimal quantile.
    pub fn threshold(&self) -> f64 {
        self.budget_of_quantile(&self.minimal_quantile())
    }

    /// `Q*(p) = β - ∫_p^1 ħ`, the pointwise smallest member of the constraint set.
    pub fn minimal_quantile(&self) -> Vec<f64> {
        let n = self.grid.len();
        let bounds = self.increment_bounds();
        let mut q = alloc::vec![0.0; n];
        q[n - 1] = self.beta;
        for i in (0..n - 1).rev() {
            q[i] = q[i + 1] - bounds[i];
        }
        q
    }

    /// Trapezoid value of `∫ Q φ̃'`.
    pub fn budget_of_quantile(&self, q: &[f64]) -> f64 {
        let integrand: Vec<f64> = q
            .iter()
            .zip(&self.phi_tilde_prime)
            .map(|(a, b)| a * b)
            .collect();
        trapezoid(&integrand, self.grid.step())
    }

    /// Tolerance used to decide `ϖ = T`.
    pub fn threshold_tolerance(threshold: f64) -> f64 {
        1e-9 * (1.0 + threshold.abs())
    }
}

/// Outcome of the feasibility test.
#[derive(Debug, Clone, PartialEq)]
pub enum Classification {
    Infeasible { threshold: f64 },
    UniqueSolution { threshold: f64, quantile: Vec<f64> },
    Feasible { threshold: f64 },
}

impl Classification {
    pub fn threshold(&self) -> f64 {
        match self {
            Classification::Infeasible { threshold }
            | Classification::UniqueSolution { threshold, .. }
            | Classification::Feasible { threshold } => *threshold,
        }
    }
}

pub fn feasibility_classify(tp: &TransformedProblem) -> Classification {
    let threshold = tp.threshold();
    let tol = TransformedProblem::threshold_tolerance(threshold);
    if tp.varpi < threshold - tol {
        Classification::Infeasible { threshold }
    } else if (tp.varpi - threshold).abs() <= tol {
        Classification::UniqueSolution {
            threshold,
            quantile: tp.minimal_quantile(),
        }
    } else {
        Classification::Feasible { threshold }
    }
}
