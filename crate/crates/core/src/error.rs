use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: String,
        got: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{name} is not positive definite")]
    NotPositiveDefinite { name: String },

    #[error("{name} is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { name: String, asymmetry: f64 },

    #[error("model domain error{}: {msg}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    ModelDomain { step: Option<u64>, msg: String },

    #[error("non-finite value in rollout at step {step}")]
    Divergence { step: u64 },

    #[error("horizon condition unsatisfiable: {0}")]
    Unsatisfiable(String),

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("at time {t}: {source}")]
    AtStep {
        t: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dimension(what: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            what: what.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn at(self, t: u64) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                t,
                source: Box::new(e),
            },
        }
    }

    /// Unwraps step annotations to the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            e => e,
        }
    }
}
