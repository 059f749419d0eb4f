use thiserror::Error;

#[derive(Debug, Error)]
pub enum GdmpError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite integrand {value} at node {node} ({direction:?})")]
    NonFinite {
        node: usize,
        direction: Vec<f64>,
        value: f64,
    },

    #[error("unbounded direction {0:?}: no facet normal has positive inner product")]
    Unbounded(Vec<f64>),

    #[error("radial grid body evaluated off its grid at {0:?}")]
    OffGrid(Vec<f64>),

    #[error("exact check infeasible: {needed} subsets exceed the budget of {budget}")]
    SubsetBudget { needed: u128, budget: u128 },

    #[error("ambiguous atom matching: {0}")]
    AmbiguousMatch(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Parse {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, GdmpError>;

pub(crate) fn invalid(msg: impl Into<String>) -> GdmpError {
    GdmpError::InvalidInput(msg.into())
}
