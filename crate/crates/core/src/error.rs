//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("denominator must be monic (leading coefficient 1), got {0}")]
    NotMonic(f64),

    #[error("empty polynomial coefficient vector")]
    EmptyPolynomial,

    #[error("unstable system: pole of magnitude {0}")]
    UnstableSystem(f64),

    #[error("hyperparameters outside the admissible domain: scale={scale}, decay={decay}")]
    HyperparameterDomain { scale: f64, decay: f64 },

    #[error("ordering exponent is singular at decay {0}")]
    SingularGamma(f64),

    #[error("operation not supported for the {0} kernel family")]
    UnsupportedFamily(crate::kernels::KernelFamily),

    #[error("invalid hyperparameter rectangle: lower corner must not exceed upper corner")]
    InvalidRectangle,

    #[error("dataset has {n} samples but the model needs at least {n_g}")]
    ShortDataset { n: usize, n_g: usize },

    #[error("dataset dimensions disagree: {0}")]
    DimensionMismatch(String),

    #[error("noise variance must be positive for this operation")]
    DegenerateNoise,

    #[error("negative noise variance {0}")]
    NegativeNoiseVariance(f64),

    #[error("regressor is rank deficient or ill conditioned (condition estimate {0:.3e})")]
    SingularRegressor(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("confidence level {0} outside (0, 1)")]
    ConfidenceDomain(f64),

    #[error("empty hyperparameter grid")]
    EmptyGrid,

    #[error("grid point ({0}, {1}) outside the grid")]
    GridIndex(usize, usize),

    #[error(
        "no grid rectangle containing the likelihood maximizer reaches mass {target}; \
         enlarge the hyperparameter grid"
    )]
    CoverageInfeasible { target: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("trial {index} (seed {seed}) failed: {source}")]
    TrialFailed {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
