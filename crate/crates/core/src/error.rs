use std::fmt;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter set failed validation.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Quadrature did not reach the requested tolerance.
    #[error("quadrature did not converge (estimate {estimate:e}, error bound {error_bound:e})")]
    Quadrature { estimate: f64, error_bound: f64 },

    /// A link evaluation overflowed.
    #[error("link overflow: linear predictor {0} is not representable")]
    Overflow(f64),

    /// Dimensions of two inputs do not agree.
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    /// A design matrix is rank deficient.
    #[error("rank deficient design: {0}")]
    RankDeficient(String),

    /// The EM engine or an inner optimizer failed.
    #[error("fitting failed: {0}")]
    Fit(String),

    /// Iterative solver ran out of iterations.
    #[error("did not converge: {0}")]
    NotConverged(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// A text document could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Stored checksum does not match the document body.
    #[error("checksum mismatch: document is truncated or modified")]
    Checksum,

    /// Document format version is not supported.
    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl fmt::Display) -> Self {
        Error::Parse {
            line,
            message: message.to_string(),
        }
    }

    /// Coarse category used by front ends to choose exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Domain(_)
            | Error::Data(_)
            | Error::Parse { .. }
            | Error::Checksum
            | Error::Version { .. }
            | Error::Dimension { .. }
            | Error::RankDeficient(_)
            | Error::Io(_) => ErrorCategory::Data,
            Error::InvalidParameter(_) => ErrorCategory::Usage,
            Error::Quadrature { .. } | Error::Overflow(_) | Error::Fit(_) | Error::NotConverged(_) => {
                ErrorCategory::Numerical
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numerical,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
