use thiserror::Error;

/// Errors raised by the expansion pipeline.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("near-resonant divisor: |omega.nu| = {divisor:e} at nu = {nu:?}")]
    Resonance { nu: Vec<i32>, divisor: f64 },

    #[error("scale {requested} not resolved (scales resolved up to {resolved})")]
    ScaleOutOfRange { requested: i32, resolved: i32 },

    #[error("p_n search capped at M_max = {m_max}: resolved scales up to n = {resolved}")]
    ScaleCap { m_max: usize, resolved: usize },

    #[error("divisor x = 0 has no scale")]
    ZeroDivisor,

    #[error(
        "near-singular propagator on scale {scale} at x = {x:e}: smallest singular value {sigma:e} below x^2/2"
    )]
    NearSingular { scale: i32, x: f64, sigma: f64 },

    #[error("parity violation (f not even in alpha) at nu = {0:?}")]
    Parity(Vec<Vec<i32>>),

    #[error("reality violation (missing conjugate term) at (nu, mu) = {0:?}")]
    Reality(Vec<(Vec<i32>, Vec<i32>)>),

    #[error("Newton iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("integrator failure: {0}")]
    Integrator(String),

    #[error("mode radius {radius} too small: composition tail {tail:e} exceeds tolerance {tol:e}")]
    ModeRadius { radius: i32, tail: f64, tol: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
