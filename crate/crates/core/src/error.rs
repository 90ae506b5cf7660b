use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what}: requested {requested} but only {available} available")]
    Count {
        what: &'static str,
        requested: usize,
        available: usize,
    },

    #[error("merge count {requested} exceeds the bipartite limit of {limit} for {keys} keys (at most 50% per layer)")]
    MergeLimit {
        requested: usize,
        limit: usize,
        keys: usize,
    },

    #[error("schedule removes {removed} of {keys} keys; at least one key must survive")]
    Schedule { removed: usize, keys: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("layer hook rejected: {0}")]
    Hook(String),
}
