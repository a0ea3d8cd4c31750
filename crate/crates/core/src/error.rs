use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rank {rank} exceeds grid capacity {capacity}")]
    RankExceedsGrid { rank: usize, capacity: usize },

    #[error("singular value s_{index} = {value:e} is below the floor {floor:e}")]
    NumericalRank { index: usize, value: f64, floor: f64 },

    #[error("interpolation to {target} from {source_grid} would shrink the grid")]
    ShrinkNotSupported { source_grid: usize, target: usize },

    #[error("at least {required} angles are required, got {got}")]
    InsufficientAngles { required: usize, got: usize },

    #[error("system is numerically singular or not positive definite: {0}")]
    Singular(String),

    #[error("dense reference solver limited to N <= {limit}, got N = {got}")]
    OracleScaleExceeded { limit: usize, got: usize },

    #[error("step {step} out of range 1..={steps}")]
    StepOutOfRange { step: usize, steps: usize },

    #[error("relative error undefined for an all-zero reference image")]
    ZeroTruth,

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep { step, source: Box::new(e) },
        }
    }

    /// Innermost error, skipping step annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
