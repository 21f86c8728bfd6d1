//! Error type shared by every module of the runtime.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration value.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input or buffer dimensions do not match the network.
    #[error("shape error: expected {expected}, got {got} ({what})")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Two structures that must stay aligned (trace/state, meta/weights) disagree.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// A non-finite value would have been written into the network.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("argument error: {0}")]
    Argument(String),

    /// The expert pool is full and the context has no expert yet.
    #[error("expert pool at capacity ({max}) for unseen context {context:?}")]
    Capacity { context: String, max: usize },

    #[error("context {0:?} has no expert")]
    UnknownContext(String),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint corrupted: {0}")]
    Corruption(String),

    #[error("lifecycle phase error: {0}")]
    Phase(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Io(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn shape(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Shape { what, expected, got }
    }
}
