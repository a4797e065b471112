use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not Hermitian: asymmetry {asymmetry:e} exceeds {tolerance:e}")]
    NotHermitian { asymmetry: f64, tolerance: f64 },

    #[error("matrix is not positive definite: smallest eigenvalue {min_eigenvalue:e}")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eigenvalue:e}")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("control coordinate {index} = {value} lies outside [{lo}, {hi}]")]
    OutsideControlBox { index: usize, value: f64, lo: f64, hi: f64 },

    #[error("control box has {channels} channels; vertex enumeration is limited to 20")]
    TooManyVertices { channels: usize },

    #[error("invalid control box: {0}")]
    InvalidControlBox(String),

    #[error("channel count mismatch: system has {system}, schedule has {schedule}")]
    ChannelMismatch { system: usize, schedule: usize },

    #[error("time {t} lies outside the horizon [0, {horizon}]")]
    OutsideHorizon { t: f64, horizon: f64 },

    #[error("horizon mismatch: {0} vs {1}")]
    HorizonMismatch(f64, f64),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("schedule class {found} where {expected} is required")]
    WrongClass { expected: &'static str, found: &'static str },

    #[error("mollifier half-width {delta} must be below {limit} (half the shortest segment)")]
    DeltaTooLarge { delta: f64, limit: f64 },

    #[error("time {t} coincides with a schedule breakpoint")]
    AtBreakpoint { t: f64 },

    #[error("control jumps inside [{s}, {t}]; growth bounds need a continuous generator")]
    JumpInWindow { s: f64, t: f64 },

    #[error("step size fell below {floor:e} at t = {t} while meeting tolerance {tol:e}")]
    StepUnderflow { t: f64, floor: f64, tol: f64 },

    #[error("quadrature failed on [{a}, {b}]: {reason}")]
    QuadratureFailed { a: f64, b: f64, reason: &'static str },

    #[error("constants do not cover the schedules: {}", .0.join("; "))]
    HypothesisViolated(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
