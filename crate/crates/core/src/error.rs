use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inputs violate a structural precondition (support ordering, distribution family, ...).
    #[error("structure error: {0}")]
    Structure(String),

    /// Thresholds are outside the regime where an interior first-order condition exists.
    #[error("regime error: {0}")]
    Regime(String),

    /// A uniform scenario matches none of the enumerated closed-form cases.
    #[error("case error: {0}")]
    Case(String),

    /// The population state does not fit the dynamics kind.
    #[error("model error: {0}")]
    Model(String),

    /// Retention equals one, so the population grows without bound.
    #[error("divergence: {0}")]
    Divergence(String),

    /// A group has no samples left to learn from.
    #[error("group {0} has no samples")]
    EmptyGroup(char),

    /// A scenario file is malformed; `path` names the offending field.
    #[error("{path}: {message}")]
    Config { path: String, message: String },

    /// Reading or writing a file failed.
    #[error("i/o error: {0}")]
    Io(String),

    /// Failure at a given simulation step.
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            Error::AtStep { .. } => self,
            other => Error::AtStep {
                step,
                source: Box::new(other),
            },
        }
    }
}
