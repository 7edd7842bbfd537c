use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what}[{index}] = {value} outside [{lo}, {hi}]")]
    InputOutOfBounds {
        what: &'static str,
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid system `{name}`: {reason}")]
    InvalidSystem { name: String, reason: String },

    #[error("system `{0}` has no obstacle function")]
    NoObstacle(String),

    #[error("query coordinate {dim} = {value} outside [{lo}, {hi}]")]
    OutOfDomain {
        dim: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("grid: {0}")]
    Grid(String),

    #[error("non-finite parameter at index {0}")]
    NonFiniteParameter(usize),

    #[error("non-finite loss at sample {0}")]
    NonFiniteLoss(usize),

    #[error("non-finite gradient at parameter {0}")]
    NonFiniteGradient(usize),

    #[error("training diverged at iteration {iteration} (last good checkpoint: {last_good:?})")]
    Diverged {
        iteration: usize,
        last_good: Option<std::path::PathBuf>,
    },

    #[error("mismatched systems: `{0}` vs `{1}`")]
    SystemMismatch(String, String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status: 2 for numerical faults, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::NonFiniteParameter(_) | Self::NonFiniteLoss(_) | Self::NonFiniteGradient(_) | Self::Diverged { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
