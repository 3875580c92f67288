use thiserror::Error;

/// Errors raised across the crate.
///
/// Geometric failures carry no payload; they describe input configurations
/// that a caller is expected to detect and skip (RANSAC samples, track
/// candidates). Pipeline-level variants carry context.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate input")]
    DegenerateInput,
    #[error("projected line is degenerate (line passes through the camera center)")]
    DegenerateProjection,
    #[error("point is behind the camera")]
    BehindCamera,
    #[error("degenerate 2D line")]
    DegenerateLine,
    #[error("viewing ray is parallel to the line")]
    DegenerateRay,
    #[error("degenerate triangulation")]
    DegenerateTriangulation,
    #[error("rotation logarithm undefined near angle pi")]
    LogDomain,
    #[error("solver found no admissible solution")]
    NoSolution,
    #[error("degenerate minimal sample")]
    DegenerateSample,
    #[error("no real root")]
    NoRealRoot,
    #[error("not enough correspondences for any solver")]
    NotEnoughCorrespondences,
    #[error("registration failed")]
    RegistrationFailed,
    #[error("all viewing rays degenerate")]
    AllRaysDegenerate,
    #[error("view {0} is not registered")]
    ViewNotRegistered(u32),
    #[error("optimization diverged")]
    OptimizationDiverged,
    #[error("insufficient reliable structure for joint refinement")]
    InsufficientReliableStructure,
    #[error("ill-conditioned normal equations")]
    IllConditioned,
    #[error("singular sensitivity system")]
    SingularSystem,
    #[error("missing covariance")]
    MissingCovariance,
    #[error("no support with a valid depth")]
    NoValidDepth,
    #[error("optimum not converged (gradient norm {0:e})")]
    NotConverged(f64),
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("no valid sample")]
    NonConvergence,
    #[error("robust alignment failed")]
    AlignmentFailed,
    #[error("no valid initial image pair")]
    NoValidPair,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
