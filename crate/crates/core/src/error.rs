use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of a function or distribution.
    #[error("domain error: {0}")]
    Domain(String),

    /// One or more invalid fields, each listed.
    #[error("invalid hyperparameters: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("sampler fault at iteration {iteration}: {message}")]
    Sampler { iteration: usize, message: String },

    #[error("inference fault: {0}")]
    Inference(String),

    #[error("EM fault: {0}")]
    Em(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
