use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    /// A sampling probability left [0,1]; the parameters are not admissible at this R.
    #[error("rho_R({x}) = {value} is outside [0,1]")]
    OutOfRange { x: f64, value: f64 },

    #[error("rho_R violates the boundary sandwich at x = {x}")]
    BoundaryViolation { x: f64 },

    #[error("limit function has the wrong boundary sign: rho(0) = {rho0}, rho(1) = {rho1}")]
    BoundarySign { rho0: f64, rho1: f64 },

    #[error("lattice has {states} states, above the limit of {limit}")]
    StateSpaceTooLarge { states: u128, limit: u128 },

    #[error("renewal window mass is undefined at p = {p}")]
    DivisionAtBoundary { p: f64 },

    #[error("invalid step size h = {h}")]
    InvalidStep { h: f64 },

    #[error("diffusion is not absorbing: rho(0) = {rho0}, rho(1) = {rho1}")]
    NonAbsorbing { rho0: f64, rho1: f64 },

    #[error("quadrature did not reach tolerance {tol} (error estimate {estimate} after {intervals} intervals)")]
    QuadratureFailure { tol: f64, estimate: f64, intervals: usize },

    #[error("scale function is improper at x = {x}")]
    SingularEndpoint { x: f64 },

    #[error("stationary density needs beta0 > 0 and beta1 > 0 (got {beta0}, {beta1})")]
    NonIntegrable { beta0: f64, beta1: f64 },

    #[error("moment order {0} is not supported (1..=4)")]
    UnsupportedOrder(u32),
}
