use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("density matrix trace collapsed to {trace:e}")]
    TraceCollapse { trace: f64 },

    #[error("matrix is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("density matrix lost positivity (min eigenvalue {min_eigenvalue:e})")]
    NotPositive { min_eigenvalue: f64 },

    #[error("delay of {requested} steps exceeds history capacity of {capacity}")]
    DelayExceedsHistory { requested: usize, capacity: usize },

    #[error("history is empty")]
    EmptyHistory,

    #[error("empty sample set")]
    EmptyInput,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("integration diverged at t = {time} (|z| = {norm:e})")]
    Diverged { time: f64, norm: f64 },

    #[error("window [{start}, {end}] lies outside the simulated range [{min}, {max}]")]
    WindowOutOfRange {
        start: f64,
        end: f64,
        min: f64,
        max: f64,
    },

    #[error("trajectory {index} (seed {seed}) failed: {source}")]
    Trajectory {
        index: usize,
        seed: u64,
        #[source]
        source: Box<SimError>,
    },
}

impl SimError {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        SimError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical integration itself, as opposed to
    /// configuration problems.
    pub fn is_numerical(&self) -> bool {
        match self {
            SimError::TraceCollapse { .. }
            | SimError::NotHermitian { .. }
            | SimError::NotPositive { .. }
            | SimError::Diverged { .. } => true,
            SimError::Trajectory { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
