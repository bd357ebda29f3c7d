use thiserror::Error;

/// Errors raised by the simulation and numerics layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("divergent integral at endpoint {endpoint}: {detail}")]
    Divergent { endpoint: String, detail: String },

    #[error("non-finite value of {what} at {location}")]
    Evaluation { what: String, location: String },

    #[error("step budget exhausted after {0} steps")]
    MaxSteps(usize),

    #[error("fixed-point iteration stalled at lambda = {lambda} (residual {residual:e}); retry with a larger lambda")]
    NonConvergence { lambda: f64, residual: f64 },

    #[error(
        "contraction condition violated at lambda = {lambda}: |u|_inf + |u'|_inf = {norm} > 1/2"
    )]
    Contraction { lambda: f64, norm: f64 },

    #[error("x = {x} lies outside the extension range [{lo}, {hi}]")]
    Extrapolation { x: f64, lo: f64, hi: f64 },

    #[error("quadrature unreliable at r = {r}; asymptotic tail value is {tail:e}")]
    Accuracy { r: f64, tail: f64 },

    #[error("signal below noise floor: {0}")]
    SignalTooWeak(String),

    #[error("path exploded at t = {0}")]
    Explosion(f64),

    #[error("too few samples: {0}")]
    SampleStarved(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
