use thiserror::Error;

/// Errors produced anywhere in the simulator core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("parse error in {path} at {location}: {message}")]
    Parse {
        path: String,
        location: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    /// A feature vector hit the normalization guard at the cosine head.
    #[error("feature vector at row {row} has norm below {eps:e}; cosine logits undefined")]
    DegenerateFeature { row: usize, eps: f64 },

    #[error("forward cache does not match this call: {0}")]
    CacheMismatch(String),

    #[error("client {client} has an empty shard")]
    EmptyShard { client: usize },

    #[error("partition left at least one client empty after {attempts} attempts")]
    PartitionRetriesExhausted { attempts: usize },

    #[error("aggregation error: {0}")]
    Aggregation(String),

    /// Wraps a failure with the round/client it happened in.
    #[error("round {round}, client {client}: {source}")]
    InRound {
        round: usize,
        client: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_round(self, round: usize, client: usize) -> Self {
        Error::InRound {
            round,
            client,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
