use thiserror::Error;

/// Errors produced by the offline conditioning pipeline and the online filter.
#[derive(Debug, Error)]
pub enum Error {
    /// A point was evaluated outside the domain of a basis expansion or model.
    #[error("point {point:?} lies outside the domain [{lower:?}, {upper:?}]")]
    Domain {
        point: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },

    /// Caller-supplied data violates an operation's precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// A factorization or decomposition failed.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Noise statistics cannot be used for a Student-t evaluation.
    #[error("invalid noise statistics: {0}")]
    Stats(String),

    /// Hyperparameter search found no finite objective value.
    #[error("hyperparameter optimization failed: {0}")]
    Optimization(String),

    /// Every particle weight vanished.
    #[error("filter diverged at step {step}: all particle weights are zero")]
    Divergence { step: usize },

    /// A simulated trajectory left the admissible state region.
    #[error("simulation failed at step {step}: {reason}")]
    Simulation { step: usize, reason: String },

    /// Configuration rejected while parsing or validating.
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
