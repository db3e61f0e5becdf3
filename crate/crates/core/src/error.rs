use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no roots defined for a constant polynomial")]
    NoRoots,
    #[error("polynomial has a root at exactly 0")]
    RootAtOrigin,
    #[error("improper filter: numerator degree {numerator} exceeds denominator degree {denominator}")]
    Improper { numerator: usize, denominator: usize },
    #[error("channel mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid model: {}", .0.join("; "))]
    InvalidModel(Vec<String>),
    #[error("parameter vector length {got} does not match structure (expected {expected})")]
    LengthMismatch { expected: usize, got: usize },
    #[error("pole at evaluation point (omega = {0})")]
    PoleAtEvaluationPoint(f64),
    #[error("covariance matrix is not symmetric positive semidefinite")]
    NotPositiveSemidefinite,
    #[error("excitation band exceeds the Nyquist frequency ({nyquist} Hz)")]
    BandExceedsNyquist { nyquist: f64 },
    #[error("delay of {delay} samples is not smaller than the record length {len}")]
    DelayTooLarge { delay: usize, len: usize },
    #[error("submodel index {index} out of range (K = {count})")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("instrument/regressor rank deficiency (insufficient excitation or overparameterization)")]
    RankDeficiency,
    #[error("divergence detected at iteration {0}")]
    Divergence(usize),
    #[error("closed-loop estimation requires reference signal r in the dataset")]
    MissingReference,
    #[error("closed-loop estimation requires the controller")]
    MissingController,
    #[error("ill-posed feedback interconnection: I + D_plant D_ctrl is singular")]
    IllPosed,
    #[error("closed loop is unstable (spectral radius {0})")]
    UnstableLoop(f64),
    #[error("structure is not free-free")]
    NotFreeFree,
    #[error("{0}")]
    InvalidConfig(String),
    #[error("repeated natural frequency {0} rad/s")]
    RepeatedFrequency(f64),
    #[error("found {found} local maxima, {requested} requested")]
    TooFewPeaks { found: usize, requested: usize },
    #[error("sample period mismatch: {0} s vs {1} s")]
    SamplePeriodMismatch(f64, f64),
    #[error("malformed data: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
