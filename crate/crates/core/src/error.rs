use alloc::string::String;

/// Errors produced anywhere in the solver pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{what} = {value} lies outside the domain (lower bound {lower})")]
    Domain {
        what: &'static str,
        value: f64,
        lower: f64,
    },
    #[error("marginal utility {0} lies outside the range of u'")]
    Range(f64),
    #[error("invalid parameter `{0}`")]
    InvalidParameter(String),
    #[error("weighting derivative vanishes at p = {p}")]
    SingularDerivative { p: f64 },
    #[error("quadrature of the budget density is not finite near p = {p}")]
    Quadrature { p: f64 },
    #[error("budget {budget} is below the feasibility threshold {threshold}")]
    Infeasible { budget: f64, threshold: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("no budget crossing found for lambda in [{lo:e}, {hi:e}]")]
    Bracket { lo: f64, hi: f64 },
    #[error("enumeration needs {cost} candidates, limit is {limit}")]
    Size { cost: u128, limit: u128 },
    #[error("grid mismatch: {left} vs {right} samples")]
    GridMismatch { left: usize, right: usize },
    #[error("cannot invert the loss distribution at x = {x}")]
    Inversion { x: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(name: &str) -> Error {
    Error::InvalidParameter(String::from(name))
}
