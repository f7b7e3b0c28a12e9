//! Discrete free-boundary problem for `δ` and the optimal quantile
//! `Q̄ = (u')⁻¹(δ')`.
//!
//! At every interior node the solver enforces
//!
//! ```text
//! max{ δ'',  min{ δ'' - ħ κ(δ'),  λφ̃ - δ } } = 0,     κ(y) = u''((u')⁻¹(y)),
//! ```
//!
//! with `δ(0) = 0` and `δ'(1) = u'(β)`. The inner `min` is the free-boundary
//! problem whose concave solutions give the optimal quantile; the outer
//! `max` with `δ''` adds the concavity requirement (`Q̄' ≥ 0`) as a third
//! branch. When `δ` is concave and stays below the obstacle both forms
//! coincide, which is always the case for concave `φ̃` with `λφ̃'(1) ≥ u'(β)`.
//!
//! The three branches are
//!
//! * [`Branch::Ode`]: `δ'' = ħ κ(δ')`, i.e. `Q̄' = ħ` (derivative bound active);
//! * [`Branch::Obstacle`]: `δ = λφ̃`, i.e. `Q̄ = (u')⁻¹(λφ̃')` (bound inactive);
//! * [`Branch::Flat`]: `δ'' = 0`, i.e. `Q̄' = 0` (monotonicity active).
//!
//! The nodewise system is solved by policy iteration: for fixed branch
//! flags the nonlinear two-point boundary problem is solved by damped
//! Newton, then every node switches to the branch selected by the current
//! iterate, until the flags stop changing.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numeric::interpolate_uniform;
use crate::transform::{feasibility_classify, Classification, Grid, TransformedProblem};

/// Active branch of the complementarity system at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Ode,
    Obstacle,
    Flat,
}

impl Branch {
    /// Token used in CSV output.
    pub fn token(self) -> &'static str {
        match self {
            Branch::Ode => "ODE",
            Branch::Obstacle => "OBST",
            Branch::Flat => "FLAT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbpOptions {
    pub max_policy_iterations: usize,
    pub max_newton_iterations: usize,
    /// Bound on the max-norm of the (grid-scaled) Newton residual.
    pub newton_tolerance: f64,
}

impl Default for FbpOptions {
    fn default() -> Self {
        Self {
            max_policy_iterations: 200,
            max_newton_iterations: 60,
            newton_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbpSolution {
    pub lambda: f64,
    pub delta: Vec<f64>,
    pub delta_prime: Vec<f64>,
    /// `Q̄_i = (u')⁻¹(δ'_i)`, with `Q̄_{n-1} = β`.
    pub quantile: Vec<f64>,
    pub branch: Vec<Branch>,
    /// Max scaled complementarity residual (see [`ResidualReport`]).
    pub residual: f64,
    pub policy_iterations: usize,
    pub newton_iterations: usize,
}

impl FbpSolution {
    pub fn has_flat_region(&self) -> bool {
        let n = self.branch.len();
        self.branch[1..n - 1].contains(&Branch::Flat)
    }
}

const STEP_FLOOR: f64 = 1.0 / (1u32 << 20) as f64;

struct Discretization<'a> {
    tp: &'a TransformedProblem,
    lambda: f64,
    hbar: Vec<f64>,
    obstacle: Vec<f64>,
    dp: f64,
    end_slope: f64,
}

impl<'a> Discretization<'a> {
    fn new(tp: &'a TransformedProblem, lambda: f64) -> Result<Self> {
        Ok(Self {
            tp,
            lambda,
            hbar: tp.node_bounds(),
            obstacle: tp.phi_tilde.iter().map(|f| lambda * f).collect(),
            dp: tp.grid.step(),
            end_slope: tp.utility.marginal(tp.beta)?,
        })
    }

    fn n(&self) -> usize {
        self.obstacle.len()
    }

    fn kappa(&self, d: &[f64], i: usize) -> Option<(f64, f64)> {
        let y = (d[i + 1] - d[i - 1]) / (2.0 * self.dp);
        self.tp.utility.curvature_at_marginal(y).ok()
    }

    /// Row residuals in units of `δ` (ODE/flat rows multiplied by `Δp²`).
    fn residual(&self, d: &[f64], branch: &[Branch], out: &mut [f64]) -> Option<()> {
        let n = self.n();
        let dp2 = self.dp * self.dp;
        out[0] = d[0];
        for i in 1..n - 1 {
            let second = d[i + 1] - 2.0 * d[i] + d[i - 1];
            out[i] = match branch[i] {
                Branch::Ode => {
                    let (k, _) = self.kappa(d, i)?;
                    second - dp2 * self.hbar[i] * k
                }
                Branch::Obstacle => d[i] - self.obstacle[i],
                Branch::Flat => second,
            };
        }
        out[n - 1] = 3.0 * d[n - 1] - 4.0 * d[n - 2] + d[n - 3] - 2.0 * self.dp * self.end_slope;
        if out.iter().all(|r| r.is_finite()) {
            Some(())
        } else {
            None
        }
    }

    /// Tridiagonal part of the Jacobian for rows `0..n-1`; the last row is
    /// always `(1, -4, 3)` on the last three unknowns.
    fn jacobian(&self, d: &[f64], branch: &[Branch], jac: &mut Tridiagonal) -> Option<()> {
        let n = self.n();
        jac.lower[0] = 0.0;
        jac.diag[0] = 1.0;
        jac.upper[0] = 0.0;
        for i in 1..n - 1 {
            let (l, c, u) = match branch[i] {
                Branch::Ode => {
                    let (_, dk) = self.kappa(d, i)?;
                    let t = 0.5 * self.dp * self.hbar[i] * dk;
                    (1.0 + t, -2.0, 1.0 - t)
                }
                Branch::Obstacle => (0.0, 1.0, 0.0),
                Branch::Flat => (1.0, -2.0, 1.0),
            };
            jac.lower[i] = l;
            jac.diag[i] = c;
            jac.upper[i] = u;
        }
        Some(())
    }

    fn newton(&self, d: &mut Vec<f64>, branch: &[Branch], opts: &FbpOptions) -> Result<usize> {
        let n = self.n();
        let mut r = vec![0.0; n];
        let mut trial_r = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut jac = Tridiagonal::zeros(n - 1);
        let fail = |iterations, residual| Error::NoConvergence {
            iterations,
            residual,
        };
        self.residual(d, branch, &mut r)
            .ok_or_else(|| fail(0, f64::INFINITY))?;
        let mut norm = l2(&r);
        let mut iterations = 0;
        while iterations < opts.max_newton_iterations {
            let scale = 1.0 + d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if max_abs(&r) <= 8.0 * f64::EPSILON * scale {
                break;
            }
            self.jacobian(d, branch, &mut jac)
                .ok_or_else(|| fail(iterations, max_abs(&r)))?;
            let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
            let step = jac
                .solve_bordered(&rhs)
                .ok_or_else(|| fail(iterations, max_abs(&r)))?;
            let mut t = 1.0;
            let accepted = loop {
                for i in 0..n {
                    trial[i] = d[i] + t * step[i];
                }
                if self.residual(&trial, branch, &mut trial_r).is_some() {
                    let trial_norm = l2(&trial_r);
                    if trial_norm < norm {
                        norm = trial_norm;
                        break true;
                    }
                }
                t *= 0.5;
                if t < STEP_FLOOR {
                    break false;
                }
            };
            if !accepted {
                break;
            }
            core::mem::swap(d, &mut trial);
            core::mem::swap(&mut r, &mut trial_r);
            iterations += 1;
        }
        let residual = max_abs(&r);
        if residual > opts.newton_tolerance {
            return Err(fail(iterations, residual));
        }
        Ok(iterations)
    }

    /// Nodewise operator parts at an interior node, in row units:
    /// `(Δp²·A, B, Δp²·D)`.
    fn parts(&self, d: &[f64], i: usize) -> Option<(f64, f64, f64)> {
        let second = d[i + 1] - 2.0 * d[i] + d[i - 1];
        let (k, _) = self.kappa(d, i)?;
        let ode = second - self.dp * self.dp * self.hbar[i] * k;
        Some((ode, self.obstacle[i] - d[i], second))
    }

    fn tolerance(&self, d: &[f64], i: usize) -> f64 {
        1e-13 * (1.0 + d[i].abs() + self.obstacle[i].abs())
    }

    /// Two-branch update on non-flat nodes: argmin of `{A, B}`, ties to ODE.
    fn select_inner(&self, d: &[f64], current: &[Branch]) -> Option<Vec<Branch>> {
        let n = self.n();
        let mut next = current.to_vec();
        for i in 1..n - 1 {
            let (ode, obst, _) = self.parts(d, i)?;
            let tol = self.tolerance(d, i);
            next[i] = match current[i] {
                Branch::Flat => Branch::Flat,
                Branch::Ode if obst < ode - tol => Branch::Obstacle,
                Branch::Obstacle if ode < obst - tol => Branch::Ode,
                b => b,
            };
        }
        Some(with_boundary(next))
    }

    /// Update of the flat set: a node turns flat where `δ'' > 0`, and leaves
    /// it where it lies strictly below the obstacle.
    fn select_outer(&self, d: &[f64], current: &[Branch]) -> Option<Vec<Branch>> {
        let n = self.n();
        let mut next = current.to_vec();
        for i in 1..n - 1 {
            let (ode, obst, second) = self.parts(d, i)?;
            let tol = self.tolerance(d, i);
            next[i] = match current[i] {
                Branch::Flat if obst > tol => {
                    if ode <= obst {
                        Branch::Ode
                    } else {
                        Branch::Obstacle
                    }
                }
                Branch::Ode | Branch::Obstacle if second > tol => Branch::Flat,
                b => b,
            };
        }
        Some(with_boundary(next))
    }

    /// `δ⁰ = min(λφ̃, u'(β) p)` with every node flat (the small-λ limit).
    fn cold_start(&self) -> (Vec<f64>, Vec<Branch>) {
        let grid = self.tp.grid;
        let delta = (0..self.n())
            .map(|i| self.obstacle[i].min(self.end_slope * grid.node(i)))
            .collect();
        (delta, vec![Branch::Flat; self.n()])
    }

    /// Inner loop: two-branch Howard iteration with the flat set frozen.
    /// Outer loop: flat-set update once the inner flags are stable.
    /// Returns the number of linearized solves and of Newton steps.
    fn policy_iteration(
        &self,
        delta: &mut Vec<f64>,
        branch: &mut Vec<Branch>,
        opts: &FbpOptions,
    ) -> Result<(usize, usize)> {
        let n = self.n();
        let stalled = |delta: &[f64], branch: &[Branch], iterations| {
            let mut r = vec![0.0; n];
            let residual = self
                .residual(delta, branch, &mut r)
                .map_or(f64::INFINITY, |_| max_abs(&r));
            Error::NoConvergence {
                iterations,
                residual,
            }
        };
        let mut newton_iterations = 0;
        // release acceleration: doubling reach, capped after every overshoot
        let (mut reach, mut cap, mut last_extension) = (0, n, 0);
        for sweep in 1..=opts.max_policy_iterations {
            newton_iterations += self.newton(delta, branch, opts)?;
            let mut inner = self
                .select_inner(delta, branch)
                .ok_or_else(|| stalled(delta, branch, sweep))?;
            if inner != *branch {
                if creeping(branch, &inner) {
                    let extension = reach.min(cap);
                    extend_release(branch, &mut inner, extension);
                    last_extension = extension;
                    reach = (2 * reach).max(1);
                } else {
                    if last_extension > 0 {
                        cap = last_extension / 2;
                    }
                    last_extension = 0;
                    reach = 0;
                }
                *branch = inner;
                continue;
            }
            let outer = self
                .select_outer(delta, branch)
                .ok_or_else(|| stalled(delta, branch, sweep))?;
            if outer == *branch {
                return Ok((sweep, newton_iterations));
            }
            *branch = outer;
        }
        Err(stalled(delta, branch, opts.max_policy_iterations))
    }
}

/// Every change releases an obstacle node to the ODE branch.
fn creeping(current: &[Branch], next: &[Branch]) -> bool {
    current
        .iter()
        .zip(next)
        .all(|(c, x)| c == x || (*c == Branch::Obstacle && *x == Branch::Ode))
}

/// Releases up to `reach` further obstacle nodes beyond each released node,
/// continuing into the contact run it was taken from. Overshoot is undone in
/// bulk by the next update.
fn extend_release(current: &[Branch], next: &mut [Branch], reach: usize) {
    if reach == 0 {
        return;
    }
    let n = current.len();
    let released: Vec<usize> = (1..n - 1)
        .filter(|&i| current[i] == Branch::Obstacle && next[i] == Branch::Ode)
        .collect();
    for i in released {
        let mut j = i + 1;
        while j < n - 1 && j <= i + reach && current[j] == Branch::Obstacle {
            next[j] = Branch::Ode;
            j += 1;
        }
        let mut j = i;
        while j > 1 && i - j < reach && current[j - 1] == Branch::Obstacle {
            j -= 1;
            next[j] = Branch::Ode;
        }
    }
    next[0] = next[1];
    next[n - 1] = next[n - 2];
}

/// Log-barrier path following for the quantile problem
///
/// ```text
/// max Σ w_i [u(Q_i) - λ φ̃'_i Q_i]   s.t.  0 ≤ Q_{i+1} - Q_i ≤ c̄_i,  Q_{n-1} = β,
/// ```
///
/// whose optimality conditions the complementarity system discretizes.
/// Nodes joined by cells with `c̄_i = 0` are merged; every Newton system is
/// tridiagonal. Used only to seed the policy iteration.
fn barrier_quantile(tp: &TransformedProblem, lambda: f64) -> Option<Vec<f64>> {
    let n = tp.grid.len();
    let dp = tp.grid.step();
    let bounds = tp.increment_bounds();
    let scale = bounds.iter().fold(0.0f64, |m, b| m.max(*b));
    // groups of nodes sharing one value, and the cells separating them
    let mut group_of = vec![0usize; n];
    let mut gaps = Vec::new();
    for i in 0..n - 1 {
        if bounds[i] > 1e-14 * scale {
            gaps.push(bounds[i]);
        }
        group_of[i + 1] = gaps.len();
    }
    let groups = gaps.len() + 1;
    let mut mass = vec![0.0; groups];
    let mut price = vec![0.0; groups];
    for i in 0..n {
        let w = if i == 0 || i == n - 1 { 0.5 * dp } else { dp };
        mass[group_of[i]] += w;
        price[group_of[i]] += w * lambda * tp.phi_tilde_prime[i];
    }
    let m = groups - 1;
    let u = &tp.utility;
    let mut v = vec![tp.beta; groups];
    for k in (0..m).rev() {
        v[k] = v[k + 1] - 0.5 * gaps[k];
    }
    let merit = |v: &[f64], t: f64| -> f64 {
        let mut total = 0.0;
        for k in 0..m {
            let Ok(val) = u.value(v[k]) else {
                return f64::NEG_INFINITY;
            };
            let d = v[k + 1] - v[k];
            if !(d > 0.0 && d < gaps[k]) {
                return f64::NEG_INFINITY;
            }
            total += t * (mass[k] * val - price[k] * v[k]) + libm::log(d) + libm::log(gaps[k] - d);
        }
        total
    };
    let mut grad = vec![0.0; m];
    let mut system = Tridiagonal::zeros(m.max(1));
    let mut t = 1.0;
    let t_final = 1e11 * groups as f64;
    if m > 0 {
        loop {
            for _ in 0..80 {
                let mut slack = vec![0.0; m];
                for k in 0..m {
                    let d = v[k + 1] - v[k];
                    let (a, b) = (1.0 / d, 1.0 / (gaps[k] - d));
                    slack[k] = a * a + b * b;
                    let e = u.eval(v[k]).ok()?;
                    grad[k] = t * (mass[k] * e.marginal - price[k]) - (a - b);
                    system.diag[k] = -t * mass[k] * e.curvature + slack[k];
                    if k > 0 {
                        let dl = v[k] - v[k - 1];
                        grad[k] += 1.0 / dl - 1.0 / (gaps[k - 1] - dl);
                        system.diag[k] += slack[k - 1];
                        system.lower[k] = -slack[k - 1];
                    } else {
                        system.lower[k] = 0.0;
                    }
                    system.upper[k] = if k + 1 < m { -slack[k] } else { 0.0 };
                }
                let step = system.thomas(&grad)?;
                let decrement: f64 = step.iter().zip(&grad).map(|(a, b)| a * b).sum();
                if !(decrement > 1e-10) {
                    break;
                }
                let mut alpha = 1.0f64;
                for k in 0..m {
                    let dv = if k + 1 < m {
                        step[k + 1] - step[k]
                    } else {
                        -step[k]
                    };
                    let d = v[k + 1] - v[k];
                    if dv < 0.0 {
                        alpha = alpha.min(-0.99 * d / dv);
                    } else if dv > 0.0 {
                        alpha = alpha.min(0.99 * (gaps[k] - d) / dv);
                    }
                }
                let base = merit(&v, t);
                let mut trial = v.clone();
                loop {
                    for k in 0..m {
                        trial[k] = v[k] + alpha * step[k];
                    }
                    if merit(&trial, t) >= base + 1e-4 * alpha * decrement {
                        break;
                    }
                    alpha *= 0.5;
                    if alpha < 1e-12 {
                        break;
                    }
                }
                if alpha < 1e-12 {
                    break;
                }
                v.copy_from_slice(&trial);
            }
            if t >= t_final {
                break;
            }
            t *= 10.0;
        }
    }
    Some((0..n).map(|i| v[group_of[i]]).collect())
}

/// Initial iterate and flags read off the barrier solution.
fn barrier_start(disc: &Discretization) -> Option<(Vec<f64>, Vec<Branch>)> {
    let tp = disc.tp;
    let n = disc.n();
    let dp = disc.dp;
    let q = barrier_quantile(tp, disc.lambda)?;
    let bounds = tp.increment_bounds();
    let mut marginal = Vec::with_capacity(n);
    for &x in &q {
        marginal.push(tp.utility.marginal(x).ok()?);
    }
    let mut delta = vec![0.0; n];
    for i in 1..n {
        delta[i] = delta[i - 1] + 0.5 * dp * (marginal[i - 1] + marginal[i]);
    }
    let at_bound = |c: usize| q[c + 1] - q[c] >= bounds[c] * (1.0 - 1e-6);
    let at_rest = |c: usize| q[c + 1] - q[c] <= bounds[c] * 1e-6;
    let mut flags = vec![Branch::Obstacle; n];
    for i in 1..n - 1 {
        let gap = disc.obstacle[i] - delta[i];
        flags[i] = if at_bound(i - 1) && at_bound(i) {
            Branch::Ode
        } else if at_rest(i - 1) && at_rest(i) && gap < -1e-9 * (1.0 + disc.obstacle[i].abs()) {
            Branch::Flat
        } else {
            Branch::Obstacle
        };
    }
    Some((delta, with_boundary(flags)))
}

const COARSEST: usize = 17;

/// The problem resampled on a grid with about half the nodes.
fn coarsened(tp: &TransformedProblem) -> Option<TransformedProblem> {
    let m = (tp.grid.len() + 1) / 2;
    if m < COARSEST {
        return None;
    }
    let grid = Grid::new(m).ok()?;
    let nodes = grid.nodes();
    let sample =
        |v: &[f64]| -> Vec<f64> { nodes.iter().map(|&p| interpolate_uniform(v, p)).collect() };
    TransformedProblem::from_parts(
        grid,
        sample(&tp.node_bounds()),
        sample(&tp.phi_tilde),
        sample(&tp.phi_tilde_prime),
        tp.beta,
        tp.varpi,
        tp.utility.clone(),
    )
    .ok()
}

/// Initial iterate and flags prolonged from the solution on coarser grids.
fn multigrid_start(
    tp: &TransformedProblem,
    lambda: f64,
    opts: &FbpOptions,
) -> Option<(Vec<f64>, Vec<Branch>)> {
    let coarse = coarsened(tp)?;
    let disc = Discretization::new(&coarse, lambda).ok()?;
    let (mut delta, mut branch) = multigrid_start(&coarse, lambda, opts)
        .or_else(|| barrier_start(&disc))
        .unwrap_or_else(|| disc.cold_start());
    let relaxed = FbpOptions {
        max_policy_iterations: 50 * coarse.grid.len(),
        ..*opts
    };
    disc.policy_iteration(&mut delta, &mut branch, &relaxed)
        .ok()?;
    let m = coarse.grid.len();
    let fine = tp.grid.nodes();
    let delta = fine
        .iter()
        .map(|&p| interpolate_uniform(&delta, p))
        .collect();
    let flags = fine
        .iter()
        .map(|&p| branch[(libm::round(p * (m - 1) as f64) as usize).min(m - 1)])
        .collect();
    Some((delta, flags))
}

fn with_boundary(mut flags: Vec<Branch>) -> Vec<Branch> {
    let n = flags.len();
    flags[0] = flags[1];
    flags[n - 1] = flags[n - 2];
    flags
}

fn l2(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Rows `0..m` of a tridiagonal matrix in unknowns `0..=m`, bordered by the
/// fixed last row `x_{m-2} - 4 x_{m-1} + 3 x_m`.
struct Tridiagonal {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Tridiagonal {
    fn zeros(m: usize) -> Self {
        Self {
            lower: vec![0.0; m],
            diag: vec![0.0; m],
            upper: vec![0.0; m],
        }
    }

    /// Thomas algorithm on the leading `m × m` block.
    fn thomas(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let m = self.diag.len();
        let mut c = vec![0.0; m];
        let mut x = vec![0.0; m];
        let mut pivot = self.diag[0];
        if pivot.abs() < 1e-300 {
            return None;
        }
        c[0] = self.upper[0] / pivot;
        x[0] = rhs[0] / pivot;
        for i in 1..m {
            pivot = self.diag[i] - self.lower[i] * c[i - 1];
            if pivot.abs() < 1e-300 {
                return None;
            }
            c[i] = self.upper[i] / pivot;
            x[i] = (rhs[i] - self.lower[i] * x[i - 1]) / pivot;
        }
        for i in (0..m - 1).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        Some(x)
    }

    fn solve_bordered(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let m = self.diag.len();
        let v = self.thomas(&rhs[..m])?;
        let mut e = vec![0.0; m];
        e[m - 1] = self.upper[m - 1];
        let w = self.thomas(&e)?;
        let denom = 3.0 - w[m - 2] + 4.0 * w[m - 1];
        if denom.abs() < 1e-300 {
            return None;
        }
        let z = (rhs[m] - v[m - 2] + 4.0 * v[m - 1]) / denom;
        let mut x: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a - z * b).collect();
        x.push(z);
        Some(x)
    }
}

pub fn solve_fbp(tp: &TransformedProblem, lambda: f64) -> Result<FbpSolution> {
    solve_fbp_with(tp, lambda, &FbpOptions::default())
}

pub fn solve_fbp_with(
    tp: &TransformedProblem,
    lambda: f64,
    opts: &FbpOptions,
) -> Result<FbpSolution> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(crate::error::invalid("lambda must be positive"));
    }
    if let Classification::Infeasible { threshold } = feasibility_classify(tp) {
        return Err(Error::Infeasible {
            budget: tp.varpi,
            threshold,
        });
    }
    let disc = Discretization::new(tp, lambda)?;
    let n = disc.n();
    let starts: [&dyn Fn() -> Option<(Vec<f64>, Vec<Branch>)>; 3] = [
        &|| multigrid_start(tp, lambda, opts),
        &|| barrier_start(&disc),
        &|| Some(disc.cold_start()),
    ];
    let mut outcome = None;
    for start in starts {
        if let Some((mut delta, mut branch)) = start() {
            let attempt = disc.policy_iteration(&mut delta, &mut branch, opts);
            let done = attempt.is_ok();
            outcome = Some(attempt.map(|counts| (delta, branch, counts)));
            if done {
                break;
            }
        }
    }
    let (delta, branch, (policy_iterations, newton_iterations)) =
        outcome.expect("cold start always yields an iterate")?;

    let dp = disc.dp;
    let mut delta_prime = Vec::with_capacity(n);
    delta_prime.push((-3.0 * delta[0] + 4.0 * delta[1] - delta[2]) / (2.0 * dp));
    for i in 1..n - 1 {
        delta_prime.push((delta[i + 1] - delta[i - 1]) / (2.0 * dp));
    }
    delta_prime.push(disc.end_slope);
    let mut quantile = Vec::with_capacity(n);
    for &y in &delta_prime[..n - 1] {
        quantile.push(tp.utility.marginal_inverse(y)?);
    }
    quantile.push(tp.beta);
    let mut terminal_run = true;
    for i in (0..n - 1).rev() {
        let upper = quantile[i + 1];
        terminal_run &= branch[i] == Branch::Ode;
        quantile[i] = if terminal_run {
            upper - tp.cell_bounds[i]
        } else {
            quantile[i].min(upper).max(upper - tp.cell_bounds[i])
        };
    }

    let mut sol = FbpSolution {
        lambda,
        delta,
        delta_prime,
        quantile,
        branch,
        residual: 0.0,
        policy_iterations,
        newton_iterations,
    };
    sol.residual = residual_check(&sol, tp).max_complementarity;
    Ok(sol)
}

/// Diagnostics of a computed solution.
///
/// Residuals are evaluated at interior nodes with the solver's stencils and
/// divided by `1 + |λφ̃_i|`. With `A = δ'' - ħκ(δ')`, `B = λφ̃ - δ`,
/// `ψ = B` and the discrete `Q̄' = δ''/κ(δ')`:
///
/// * `max_complementarity`: `|max{δ'', min{A, B}}|`;
/// * `max_two_branch`: `|min{A, B}|` over nodes not flagged [`Branch::Flat`];
/// * `max_product`: `|(Q̄' - ħ) ψ⁺| + |Q̄' ψ⁻|`, which reduces to
///   `|(Q̄' - ħ)(λφ̃ - δ)|` when `δ ≤ λφ̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub max_complementarity: f64,
    pub mean_complementarity: f64,
    pub worst_node: usize,
    pub max_two_branch: f64,
    pub max_product: f64,
    /// `max(δ - λφ̃, 0)`; positive only on flat nodes.
    pub max_obstacle_violation: f64,
    /// `max(-ΔQ̄, ΔQ̄ - ∫ħ, 0) / Δp` over cells.
    pub max_derivative_violation: f64,
    /// No interior node uses the flat branch.
    pub flat_free: bool,
}

pub fn residual_check(sol: &FbpSolution, tp: &TransformedProblem) -> ResidualReport {
    let n = sol.delta.len();
    let dp = tp.grid.step();
    let d = &sol.delta;
    let lambda = sol.lambda;
    let mut max_c = 0.0f64;
    let mut sum_c = 0.0;
    let mut worst = 0;
    let mut max_two = 0.0f64;
    let mut max_prod = 0.0f64;
    let hbar = tp.node_bounds();
    for i in 1..n - 1 {
        let obstacle = lambda * tp.phi_tilde[i];
        let scale = 1.0 + obstacle.abs();
        let second = (d[i + 1] - 2.0 * d[i] + d[i - 1]) / (dp * dp);
        let y = (d[i + 1] - d[i - 1]) / (2.0 * dp);
        let (comp, two, prod) = match tp.utility.curvature_at_marginal(y) {
            Ok((k, _)) => {
                let a = second - hbar[i] * k;
                let psi = obstacle - d[i];
                let qprime = if k == 0.0 { 0.0 } else { second / k };
                let prod =
                    ((qprime - hbar[i]) * psi.max(0.0)).abs() + (qprime * psi.min(0.0)).abs();
                (second.max(a.min(psi)).abs(), a.min(psi).abs(), prod)
            }
            Err(_) => (f64::INFINITY, f64::INFINITY, f64::INFINITY),
        };
        let comp = comp / scale;
        sum_c += comp;
        if comp > max_c || comp.is_nan() {
            max_c = comp;
            worst = i;
        }
        if sol.branch[i] != Branch::Flat {
            max_two = max_two.max(two / scale);
        }
        max_prod = max_prod.max(prod / scale);
    }
    let max_obstacle_violation = (0..n)
        .map(|i| d[i] - lambda * tp.phi_tilde[i])
        .fold(0.0f64, f64::max);
    let max_derivative_violation = tp
        .cell_bounds
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let step = sol.quantile[i + 1] - sol.quantile[i];
            (-step).max(step - b) / dp
        })
        .fold(0.0f64, f64::max);
    ResidualReport {
        max_complementarity: max_c,
        mean_complementarity: sum_c / (n - 2) as f64,
        worst_node: worst,
        max_two_branch: max_two,
        max_product: max_prod,
        max_obstacle_violation,
        max_derivative_violation,
        flat_free: !sol.has_flat_region(),
    }
}

fn is_concave(values: &[f64]) -> bool {
    let scale = 1.0 + values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    values
        .windows(3)
        .all(|w| w[2] - 2.0 * w[1] + w[0] <= 1e-12 * scale)
}

/// Least concave majorant of the piecewise-linear interpolant of grid
/// samples (upper convex hull, monotone chain).
///
/// Input that is already concave to within rounding is returned unchanged.
pub fn concave_envelope(values: &[f64], grid: &Grid) -> Result<Vec<f64>> {
    let n = grid.len();
    if values.len() != n {
        return Err(Error::GridMismatch {
            left: n,
            right: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(crate::error::invalid("envelope values must be finite"));
    }
    if is_concave(values) {
        return Ok(values.to_vec());
    }
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross =
                (b - a) as f64 * (values[i] - values[a]) - (values[b] - values[a]) * (i - a) as f64;
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut out = values.to_vec();
    for seg in hull.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let span = (b - a) as f64;
        for (j, slot) in out.iter_mut().enumerate().take(b).skip(a + 1) {
            let t = (j - a) as f64 / span;
            *slot = values[a] + t * (values[b] - values[a]);
        }
    }
    Ok(out)
}
