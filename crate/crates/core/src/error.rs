use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Variants are grouped so that callers (the CLI in particular) can map them
/// onto a small set of exit codes via [`Error::kind`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("matrix is not symmetric (max |A_ij - A_ji| = {asymmetry:e}, tolerance {tolerance:e})")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("degenerate covariance: largest eigenvalue {lambda_max:e} is not positive")]
    DegenerateCovariance { lambda_max: f64 },

    #[error("non-finite gradient at beta = {beta:e}")]
    NumericalOverflow { beta: f64 },

    #[error("simulation diverged at step {step}")]
    Diverged { step: usize },

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("no sign change of the lowest eigenvalue in [{lo}, {hi}]")]
    Bracket { lo: f64, hi: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no fit possible: {0}")]
    NoFit(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("run aborted at step {step}: {reason}")]
    Aborted {
        step: usize,
        reason: String,
        /// Readings logged before the failure.
        partial: Box<crate::experiments::TrajectoryLog>,
    },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off:e})")]
    NoConvergence { sweeps: usize, off: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse classification of an [`Error`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input, configuration or precondition.
    Validation,
    /// Numerical breakdown during a computation.
    Numerical,
    /// Filesystem or (de)serialization failure.
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Dimension(_)
            | Error::Validation(_)
            | Error::NotSymmetric { .. }
            | Error::Bracket { .. }
            | Error::Precondition(_)
            | Error::Config(_) => ErrorKind::Validation,
            Error::DegenerateCovariance { .. }
            | Error::NumericalOverflow { .. }
            | Error::Diverged { .. }
            | Error::SingularDesign(_)
            | Error::UndefinedCorrelation(_)
            | Error::NoFit(_)
            | Error::UndefinedMetric(_)
            | Error::Aborted { .. }
            | Error::NoConvergence { .. } => ErrorKind::Numerical,
            Error::Io(_) | Error::Csv(_) => ErrorKind::Io,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
