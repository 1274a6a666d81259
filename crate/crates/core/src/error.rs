use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: {0}")]
    Range(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical consistency check failed: {0}")]
    Numerical(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("enumeration over 2^{n} realizations exceeds the cap of 2^{cap}")]
    TooLarge { n: usize, cap: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("model assumption violated: {0}")]
    Assumption(String),

    #[error("SDP solver: {0}")]
    Solver(String),

    #[error("bracket failure: {0}")]
    Bracket(String),

    #[error("I/O: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension { context, expected, got }
    }
}
