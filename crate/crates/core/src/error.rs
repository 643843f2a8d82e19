use thiserror::Error;

use crate::fiber::FiberReport;
use crate::functionals::SolutionReport;

pub type Result<T> = std::result::Result<T, CknError>;

/// Every failure the library can report.
///
/// Variant names double as the machine-readable error codes emitted by the CLI.
#[derive(Debug, Error)]
pub enum CknError {
    #[error("dimension N = {0} must be at least 3")]
    DimensionTooSmall(u32),
    #[error("weight a = {a} must satisfy 0 < a < {upper}")]
    WeightOutOfRange { a: f64, upper: f64 },
    #[error("offset b = {b} must satisfy {lower} < b < {upper}")]
    OffsetOutOfRange { b: f64, lower: f64, upper: f64 },
    #[error("power q = {q} must satisfy 2 < q < {upper}")]
    PowerOutOfRange { q: f64, upper: f64 },
    #[error("mass radius rho = {0} must be positive")]
    NonPositiveMass(f64),
    #[error("coupling beta = {0} must be nonnegative and finite")]
    NegativeCoupling(f64),
    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),
    #[error("bad grid specification: {0}")]
    BadGridSpec(String),
    #[error("weight r^({exponent}) is not integrable at the origin")]
    NonIntegrable { exponent: f64 },
    #[error("shift {shift} exceeds half the window width {limit}")]
    ShiftTooLarge { shift: f64, limit: f64 },
    #[error("profile is degenerate: {0}")]
    DegenerateProfile(String),
    #[error("profile is identically zero")]
    ZeroProfile,
    #[error("cutoff support [0, {support}] does not fit inside the window (r_max = {r_max})")]
    CutoffOutsideWindow { support: f64, r_max: f64 },
    #[error("quadrature tail estimate {tail:.3e} exceeds tolerance; widen the window")]
    QuadratureDivergence { tail: f64 },
    #[error("parameters sit on a branch boundary (discriminant {discriminant:.3e})")]
    BranchBoundary { discriminant: f64 },
    #[error("log-log fit quality r2 = {r2} below 0.99")]
    PoorFit { r2: f64 },
    #[error("(a, b) = ({a}, {b}) lies outside the admissible strip")]
    OutsideStrip { a: f64, b: f64 },
    #[error("fiber coefficients are degenerate: {0}")]
    DegenerateCoefficients(String),
    #[error("critical point may lie outside the scan window: {0}")]
    ScanWindowExhausted(String),
    #[error("requested fiber branch {0} does not exist for this profile")]
    BranchAbsent(String),
    #[error("envelope has no positive interval (h_max = {h_max}, threshold = {threshold})")]
    NoPositiveInterval { h_max: f64, threshold: f64 },
    #[error("iterate left the ball of radius {radius} (gradient norm {norm})")]
    LeftBall { norm: f64, radius: f64 },
    #[error("no convergence after {iterations} iterations")]
    NoConvergence {
        iterations: usize,
        last: Box<SolutionReport>,
    },
    #[error("fiber structure contradicts the regime")]
    StructureViolation(Box<FiberReport>),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CknError {
    /// Stable name used in machine-readable error output.
    pub fn code(&self) -> &'static str {
        match self {
            CknError::DimensionTooSmall(_) => "DimensionTooSmall",
            CknError::WeightOutOfRange { .. } => "WeightOutOfRange",
            CknError::OffsetOutOfRange { .. } => "OffsetOutOfRange",
            CknError::PowerOutOfRange { .. } => "PowerOutOfRange",
            CknError::NonPositiveMass(_) => "NonPositiveMass",
            CknError::NegativeCoupling(_) => "NegativeCoupling",
            CknError::RegimeMismatch(_) => "RegimeMismatch",
            CknError::BadGridSpec(_) => "BadGridSpec",
            CknError::NonIntegrable { .. } => "NonIntegrable",
            CknError::ShiftTooLarge { .. } => "ShiftTooLarge",
            CknError::DegenerateProfile(_) => "DegenerateProfile",
            CknError::ZeroProfile => "ZeroProfile",
            CknError::CutoffOutsideWindow { .. } => "CutoffOutsideWindow",
            CknError::QuadratureDivergence { .. } => "QuadratureDivergence",
            CknError::BranchBoundary { .. } => "BranchBoundary",
            CknError::PoorFit { .. } => "PoorFit",
            CknError::OutsideStrip { .. } => "OutsideStrip",
            CknError::DegenerateCoefficients(_) => "DegenerateCoefficients",
            CknError::ScanWindowExhausted(_) => "ScanWindowExhausted",
            CknError::BranchAbsent(_) => "BranchAbsent",
            CknError::NoPositiveInterval { .. } => "NoPositiveInterval",
            CknError::LeftBall { .. } => "LeftBall",
            CknError::NoConvergence { .. } => "NoConvergence",
            CknError::StructureViolation(_) => "StructureViolation",
            CknError::Io(_) => "Io",
            CknError::Csv(_) => "Csv",
            CknError::Json(_) => "Json",
        }
    }

    /// Process exit code: 2 validation, 3 numeric failure, 4 non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CknError::DimensionTooSmall(_)
            | CknError::WeightOutOfRange { .. }
            | CknError::OffsetOutOfRange { .. }
            | CknError::PowerOutOfRange { .. }
            | CknError::NonPositiveMass(_)
            | CknError::NegativeCoupling(_)
            | CknError::RegimeMismatch(_)
            | CknError::BadGridSpec(_)
            | CknError::OutsideStrip { .. }
            | CknError::Io(_)
            | CknError::Csv(_)
            | CknError::Json(_) => 2,
            CknError::NoConvergence { .. } | CknError::LeftBall { .. } => 4,
            _ => 3,
        }
    }
}
