//! Quantile optimization under a bounded-derivative constraint.
//!
//! The crate solves
//!
//! ```text
//! max_G  ∫ u(G(p)) w'(1-p) dp   s.t.  ∫ G(p) φ(p) dp ≤ ϖ,  G(1) = β,  0 ≤ G' ≤ h
//! ```
//!
//! by removing the weighting `w` with the change of variable `Q = G∘ν`,
//! attaching a Lagrange multiplier to the budget, and solving the resulting
//! free-boundary (complementarity) problem for an auxiliary function `δ`
//! whose derivative yields the optimal quantile `Q̄ = (u')⁻¹(δ')`. The
//! optimal quantile is then mapped back to an insurance contract
//! (retention `R`, indemnity `I = X - R`).
//!
//! Every stage is independently checkable: [`oracle`] contains brute-force
//! solvers of the discretized Lagrangian problem that share no code with
//! [`fbp`].
//!
//! The crate is `no_std` and only needs `alloc`.
#![no_std]

extern crate alloc;

pub mod error;
pub mod fbp;
pub mod model;
pub mod multiplier;
pub mod numeric;
pub mod oracle;
pub mod recovery;
pub mod transform;

pub use error::{Error, Result};
pub use fbp::{
    concave_envelope, residual_check, solve_fbp, solve_fbp_with, Branch, FbpOptions, FbpSolution,
    ResidualReport,
};
pub use model::{
    Budget, Density, LossModel, MarginalTable, ProblemSpec, QuantilePoint, QuantileTable,
    UtilityEval, UtilitySpec, WeightingEval, WeightingSpec,
};
pub use multiplier::{budget_of, calibrate_lambda, calibrate_lambda_with, CalibrationResult};
pub use oracle::{compare, oracle_exhaustive, oracle_projected, Comparison, ProjectedOracle};
pub use recovery::{
    default_loss_points, rdut_value, recover_contract, recover_quantile, transformed_objective,
    validate_incentive_compatibility, Contract, ViolationReport,
};
pub use transform::{
    feasibility_classify, nu_map, transform_problem, Classification, Grid, TransformedProblem,
};
