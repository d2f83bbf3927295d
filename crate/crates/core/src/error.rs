use thiserror::Error;

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// Population outside the retained Fock levels exceeded the allowed limit.
    #[error("Fock truncation exceeded: weight {weight:e} above limit {limit:e} (fock_dim = {fock_dim})")]
    Truncation { weight: f64, limit: f64, fock_dim: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("jump requested from a state with <a^dag a> = {mean_photons:e}")]
    ZeroNormJump { mean_photons: f64 },

    #[error("trace drifted to {trace} (|tr - 1| > {limit:e})")]
    TraceDrift { trace: f64, limit: f64 },

    #[error("time {t} is not on the sample grid")]
    TimeNotSampled { t: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("trajectory {index} failed: {source}")]
    Trajectory {
        index: u64,
        #[source]
        source: Box<SimError>,
    },
}

impl SimError {
    /// The underlying error with any trajectory wrapper removed.
    pub fn root(&self) -> &SimError {
        match self {
            SimError::Trajectory { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_truncation(&self) -> bool {
        matches!(self.root(), SimError::Truncation { .. })
    }
}
