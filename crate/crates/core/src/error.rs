use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("topology generation failed after {attempts} attempts")]
    TopologyGeneration { attempts: usize },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("node {node}: missing value for neighbor {neighbor}")]
    IncompleteNeighborhood { node: usize, neighbor: usize },

    #[error("node {node} has no neighbor {neighbor}")]
    UnknownNeighbor { node: usize, neighbor: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed trace: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Protocol(_) | Error::Trace(_) => 2,
            Error::Numerical(_) => 3,
            _ => 1,
        }
    }
}
