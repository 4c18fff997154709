use thiserror::Error;

/// Errors raised across density construction, map building, fitting and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value {value} at node {point:?}")]
    NonFinite { point: Vec<f64>, value: f64 },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("density construction failed: {0}")]
    Construction(String),

    #[error("reference density must factorize into one-dimensional marginals")]
    UnsupportedReference,

    #[error("component {component} is not increasing at {point:?} (diagonal partial {value})")]
    MonotonicityViolation {
        component: usize,
        point: Vec<f64>,
        value: f64,
    },

    #[error("inversion of component {component} failed: {reason}")]
    Inversion { component: usize, reason: String },

    #[error("diagonal partial range [{min}, {max}] is not inside the link range ({kmin}, {kmax}); widen (kmin, kmax)")]
    LinkRange {
        min: f64,
        max: f64,
        kmin: f64,
        kmax: f64,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input or configuration rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Io { .. } | Error::Json(_) | Error::Input(_) | Error::Grid(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
