use thiserror::Error;

/// Errors produced by problem construction, the round engine and the harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("client index {index} out of range for {n_clients} clients")]
    ClientOutOfRange { index: usize, n_clients: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sample drawn for client {sample_client} used with client {client}")]
    SampleMismatch { sample_client: usize, client: usize },

    #[error("optimal value f* unknown and not supplied")]
    MissingOptimum,

    #[error("unsupported for variant {variant}: {reason}")]
    Unsupported { variant: &'static str, reason: String },

    #[error("divergence at round {round}{}", location_suffix(*client, *step))]
    Divergence {
        round: usize,
        client: Option<usize>,
        step: Option<usize>,
    },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("malformed document: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

fn location_suffix(client: Option<usize>, step: Option<usize>) -> String {
    match (client, step) {
        (Some(c), Some(k)) => format!(" (client {c}, local step {k})"),
        (Some(c), None) => format!(" (client {c})"),
        _ => String::new(),
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
