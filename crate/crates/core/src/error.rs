use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("derivative order {requested} unsupported (max {supported})")]
    UnsupportedOrder { requested: usize, supported: usize },

    #[error("unsupported dimension {0}: the quantum layer is one-dimensional")]
    UnsupportedDimension(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("trajectory diverged at t = {t}")]
    Divergence { t: f64 },

    #[error("no convergence: {message}")]
    Convergence {
        message: String,
        residuals: Vec<f64>,
    },

    #[error("out of range: {0}")]
    Range(String),

    #[error(
        "boundary mass {mass:.3e} exceeded threshold {threshold:.1e} at t = {t}; enlarge the grid"
    )]
    BoundaryMass { mass: f64, threshold: f64, t: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// True for failures of the numerical machinery (as opposed to bad input
    /// or a legitimate domain verdict).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Integration { .. }
                | Error::Divergence { .. }
                | Error::Convergence { .. }
                | Error::BoundaryMass { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
