use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("space mismatch: {left:?} vs {right:?}")]
    SpaceMismatch { left: [usize; 3], right: [usize; 3] },

    #[error("mode index {0} is not 1 or 2")]
    InvalidMode(usize),

    #[error("atomic level {level} is not present in a {levels}-level space")]
    MissingLevel { level: char, levels: usize },

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("operator is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("partial trace needs a nonempty set of kept subsystems")]
    EmptyKeep,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("degenerate channel: r = 1, epsilon diverges (theta1 == theta2)")]
    DegenerateChannel,

    #[error("truncation too small: {reason}; need N >= {required}")]
    Truncation { required: usize, reason: String },

    #[error("truncation overflow: boundary Fock population {leak:e} exceeds 1e-3")]
    TruncationOverflow { leak: f64 },

    #[error("time step {given:e} too large; need dt <= {required:e}")]
    StepSize { required: f64, given: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
