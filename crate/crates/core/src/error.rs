use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Every particle weight underflowed to zero (or was NaN) at 1-based time `t`.
    #[error("{stage}: degenerate weights at t={t} (all particle weights are zero or non-finite)")]
    DegenerateWeights { stage: &'static str, t: usize },

    /// Every entry of a log-weight vector was `-inf`.
    #[error("total weight collapse: all log-weights are -inf")]
    WeightCollapse,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what}: length mismatch (expected {expected}, got {got})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Conjugate hyperparameters left the domain on which the normalizer is finite.
    #[error("hyperparameter domain error: {0}")]
    Domain(String),

    #[error("block {block}: {source}")]
    Block {
        block: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("node {node}: {source}")]
    Node {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn in_block(self, block: usize) -> Self {
        Error::Block {
            block,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_node(self, node: usize) -> Self {
        Error::Node {
            node,
            source: Box::new(self),
        }
    }

    /// True when the error (or a wrapped cause) is a numeric failure rather than bad input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::DegenerateWeights { .. }
            | Error::WeightCollapse
            | Error::NonFinite(_)
            | Error::Domain(_) => true,
            Error::Block { source, .. } | Error::Node { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
