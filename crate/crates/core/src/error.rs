use std::fmt;

use thiserror::Error;

/// Which effective control-weight matrix failed the conditioning guard.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaKind {
    /// `R + D'PD + sum(F'PF)`, acting on the centered component.
    Centered,
    /// The mean-field counterpart built from the summed coefficients.
    Mean,
}

impl fmt::Display for SigmaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaKind::Centered => f.write_str("sigma0"),
            SigmaKind::Mean => f.write_str("sigma1"),
        }
    }
}

/// A single failed structural check on a problem instance.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ShapeMismatch {
        field: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    AsymmetricWeight {
        field: String,
        node: usize,
        asymmetry: f64,
    },
    GridMismatch {
        field: String,
        expected: usize,
        found: usize,
    },
    InvalidValue {
        field: String,
        reason: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ShapeMismatch {
                field,
                expected,
                found,
            } => write!(
                f,
                "{field}: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Violation::AsymmetricWeight {
                field,
                node,
                asymmetry,
            } => write!(f, "{field}: not symmetric at node {node} (|W - W'| = {asymmetry:e})"),
            Violation::GridMismatch {
                field,
                expected,
                found,
            } => write!(f, "{field}: expected {expected} samples, found {found}"),
            Violation::InvalidValue { field, reason } => write!(f, "{field}: {reason}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid problem: {}", join(.0))]
    Invalid(Vec<Violation>),

    #[error("{which} is singular or ill-conditioned at t = {t} (condition number {condition:e})")]
    SigmaSingular {
        t: f64,
        which: SigmaKind,
        condition: f64,
    },

    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("{which} is singular at t = {t}")]
    RSingular { t: f64, which: &'static str },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("parse error at {field}: {message}")]
    Parse { field: String, message: String },

    #[error("unknown example `{0}` (expected one of 5.1, 5.2, 5.3, 5.4)")]
    UnknownExample(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("plot: {0}")]
    Plot(String),
}

impl Error {
    pub(crate) fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Flattened list of validation violations, empty for other errors.
    pub fn violations(&self) -> &[Violation] {
        match self {
            Error::Invalid(v) => v,
            _ => &[],
        }
    }
}

fn join(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
