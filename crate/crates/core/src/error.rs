use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate sample: zero median distance")]
    DegenerateSample,

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite input coordinate")]
    NonFinite,

    #[error("ill-conditioned Gram")]
    IllConditioned,

    #[error("singular system")]
    Singular,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("negative importance weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("kernel mismatch between embedding and evaluation points")]
    KernelMismatch,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite filter weights at step {0}")]
    FilterDiverged(usize),

    #[error("particle degeneracy")]
    ParticleDegeneracy,

    #[error("innovation covariance singular")]
    SingularInnovation,

    #[error("state reached the origin: angle undefined")]
    ZeroState,

    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics, as opposed to bad input or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateSample
                | Error::IllConditioned
                | Error::Singular
                | Error::FilterDiverged(_)
                | Error::ParticleDegeneracy
                | Error::SingularInnovation
                | Error::ZeroState
                | Error::NonFiniteLoss(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
