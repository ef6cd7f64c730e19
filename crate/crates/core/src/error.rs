use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FbpinnError {
    #[error("invalid network shape: {0}")]
    InvalidShape(String),

    #[error("invalid interval [{a}, {b}]")]
    InvalidInterval { a: f64, b: f64 },

    #[error("invalid decomposition: {0}")]
    InvalidDecomposition(String),

    #[error("point {x} lies outside the domain [{a}, {b}]")]
    OutsideDomain { x: f64, a: f64, b: f64 },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid training setup: {0}")]
    InvalidTraining(String),

    /// A loss, residual or gradient became NaN or infinite.
    #[error(
        "numerical failure{} at x = {x}{}: {what}",
        step.map(|s| format!(" in step {s}")).unwrap_or_default(),
        subdomain.map(|j| format!(" (subdomain {j})")).unwrap_or_default()
    )]
    Numerical {
        what: String,
        x: f64,
        subdomain: Option<usize>,
        step: Option<usize>,
    },

    #[error("parameter file: {0}")]
    Serialization(String),
}

impl FbpinnError {
    pub(crate) fn numerical(what: impl Into<String>, x: f64) -> Self {
        FbpinnError::Numerical {
            what: what.into(),
            x,
            subdomain: None,
            step: None,
        }
    }

    /// Attaches a subdomain index to a numerical failure; other variants pass through.
    pub fn in_subdomain(self, j: usize) -> Self {
        match self {
            FbpinnError::Numerical { what, x, step, .. } => FbpinnError::Numerical {
                what,
                x,
                subdomain: Some(j),
                step,
            },
            other => other,
        }
    }

    /// Attaches the optimizer step to a numerical failure.
    pub fn at_step(self, s: usize) -> Self {
        match self {
            FbpinnError::Numerical { what, x, subdomain, .. } => FbpinnError::Numerical {
                what,
                x,
                subdomain,
                step: Some(s),
            },
            other => other,
        }
    }
}

pub type Result<T, E = FbpinnError> = std::result::Result<T, E>;
