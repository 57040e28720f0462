use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("system has no delays")]
    EmptySystem,
    #[error("delay {index} is not positive ({value})")]
    NonPositiveDelay { index: usize, value: f64 },
    #[error("delays must be strictly increasing (delay {index} = {value} follows {previous})")]
    NonIncreasingDelays {
        index: usize,
        value: f64,
        previous: f64,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("delays are not commensurate")]
    NotCommensurate,
    #[error("discontinuity lattice exceeds {cap} entries before reaching the horizon")]
    LatticeExplosion { cap: usize },
    #[error("step {step} is too large (must be at most {limit})")]
    StepTooLarge { step: f64, limit: f64 },
    #[error("delay {index} is not positive at t = {time}")]
    CausalityViolation { index: usize, time: f64 },
    #[error("delay profile {index} violates its declared bounds: {reason}")]
    ProfileBoundViolation { index: usize, reason: String },
    #[error("time {time} outside trajectory range [{start}, {end}]")]
    OutOfRange { time: f64, start: f64, end: f64 },
    #[error("decay fit needs at least 3 envelope points, found {found}")]
    DegenerateFit { found: usize },

    #[error("operation requires a scalar system (n = 1), got n = {0}")]
    NotScalar(usize),
    #[error("eigenvalue computation did not converge")]
    EigenFailure,
    #[error("spectral radius {0} is not less than one")]
    SpectralRadiusNotLessThanOne(f64),
    #[error("linear system is singular or ill-conditioned")]
    SingularSystem,
    #[error("invalid eigenvalue ratio: lambda_min(M) = {min_m} must be below lambda_max(P) = {max_p}")]
    InvalidRatio { min_m: f64, max_p: f64 },
    #[error("matrix P_{0} is not positive definite")]
    NotPositiveDefinite(usize),
    #[error("matrix P_{0} is not symmetric")]
    NotSymmetric(usize),

    #[error("certificate search failed (best margin {best_margin:e})")]
    SearchFailure { best_margin: f64 },
    #[error("no verified nominal certificate at the requested rate")]
    NoNominalCertificate,
    #[error("nominal certificate does not verify (margin {margin:e})")]
    NominalNotVerified { margin: f64 },
    #[error("derivative bound for delay {index} is {delta1}, must be below {cap}")]
    DerivativeBoundTooLarge { index: usize, delta1: f64, cap: f64 },
}
