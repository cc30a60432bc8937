use thiserror::Error;

/// Errors produced by the sampler library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("time {t} outside schedule range [{t_min}, {t_max}]")]
    Range { t: f64, t_min: f64, t_max: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate schedule: {0}")]
    DegenerateSchedule(String),

    #[error("degenerate step: {0}")]
    DegenerateStep(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("no convergence: {0}")]
    Convergence(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("length mismatch in `{field}`: expected {expected}, found {found}")]
    LengthMismatch {
        field: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at `{0}`")]
    NonFinite(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("parameters diverged at iteration {iteration}: loss={loss}")]
    Diverged {
        iteration: usize,
        loss: f64,
        params: Vec<f64>,
    },

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("backbone evaluation failed: {0}")]
    Backbone(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
