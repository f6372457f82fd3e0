use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {got} samples, at least {required} required")]
    InsufficientData { required: usize, got: usize },

    #[error("regressor is rank deficient (condition estimate {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("input matrix is degenerate (no nonzero Markov block up to order {max_order})")]
    DegenerateInput { max_order: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid config at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical pipeline (rank, factorization,
    /// degenerate model) as opposed to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. } | Error::DegenerateInput { .. } | Error::Numerical(_)
        )
    }
}
