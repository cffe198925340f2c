use thiserror::Error;

/// Errors raised by the model, transcription, solver and diagnostics layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AwmpError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// `lambda + max|p|` vanished, so the multipliers cannot be normalized.
    #[error("degenerate multipliers: lambda + |p|_inf = 0")]
    DegenerateMultipliers,

    #[error("unknown problem '{name}' (available: {available})")]
    UnknownProblem { name: String, available: String },

    #[error("history too short: need at least {needed} iterates, got {got}")]
    HistoryTooShort { needed: usize, got: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("line search failed after {0} consecutive halvings")]
    LineSearch(usize),
}

pub type Result<T> = std::result::Result<T, AwmpError>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(AwmpError::Shape {
            what,
            expected,
            got,
        })
    }
}
