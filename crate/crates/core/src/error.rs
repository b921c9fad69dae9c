use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph needs at least 2 vertices, got {0}")]
    TooFewVertices(usize),

    #[error("inner-product exponent r must lie in [0, 1], got {0}")]
    InvalidExponent(f64),

    #[error("graph is disconnected: vertex {unreached} is not reachable from vertex 0")]
    DisconnectedGraph { unreached: usize },

    #[error("edge ({i}, {j}) has non-positive or non-finite weight {weight}")]
    NonPositiveWeight { i: usize, j: usize, weight: f64 },

    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),

    #[error("vertex index {index} out of range for {num_vertices} vertices")]
    IndexOutOfRange { index: usize, num_vertices: usize },

    #[error("duplicate edge ({i}, {j})")]
    DuplicateEdge { i: usize, j: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("symmetric eigensolver did not converge")]
    EigensolverFailure,

    #[error("diffusion time must be non-negative, got {0}")]
    NegativeTime(f64),

    #[error("mass {mass} outside the feasible range [0, {max}]")]
    MassOutOfRange { mass: f64, max: f64 },

    #[error("value {value} at vertex {index} violates the admissible domain")]
    DomainViolation { index: usize, value: f64 },

    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),

    #[error("state touches the obstacle at vertex {0}; gradient needs a strictly interior state")]
    BoundaryState(usize),

    #[error("operation is defined only for lambda < 1")]
    LambdaIsOne,

    #[error("invalid scheme parameters: {0}")]
    InvalidParameters(String),

    #[error("graph has {num_vertices} vertices; enumeration is limited to {max}")]
    GraphTooLarge { num_vertices: usize, max: usize },

    #[error("no convergence after {iterations} iterations (last value {last_value:e})")]
    NoConvergence { iterations: usize, last_value: f64 },

    #[error("row {row} sums to {sum}, not 1")]
    RowNotInPi { row: usize, sum: f64 },

    #[error("infeasible class masses: {0}")]
    InfeasibleMasses(String),

    #[error("time step {tau} exceeds epsilon {epsilon}")]
    TauExceedsEpsilon { tau: f64, epsilon: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("vertex {0} missing from field file")]
    MissingVertex(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::TooFewVertices(_) => "TooFewVertices",
            Error::InvalidExponent(_) => "InvalidExponent",
            Error::DisconnectedGraph { .. } => "DisconnectedGraph",
            Error::NonPositiveWeight { .. } => "NonPositiveWeight",
            Error::SelfLoop(_) => "SelfLoop",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::DuplicateEdge { .. } => "DuplicateEdge",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::EigensolverFailure => "EigensolverFailure",
            Error::NegativeTime(_) => "NegativeTime",
            Error::MassOutOfRange { .. } => "MassOutOfRange",
            Error::DomainViolation { .. } => "DomainViolation",
            Error::InconsistentInputs(_) => "InconsistentInputs",
            Error::BoundaryState(_) => "BoundaryState",
            Error::LambdaIsOne => "LambdaIsOne",
            Error::InvalidParameters(_) => "InvalidParameters",
            Error::GraphTooLarge { .. } => "GraphTooLarge",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::RowNotInPi { .. } => "RowNotInPi",
            Error::InfeasibleMasses(_) => "InfeasibleMasses",
            Error::TauExceedsEpsilon { .. } => "TauExceedsEpsilon",
            Error::Parse { .. } => "ParseError",
            Error::MissingVertex(_) => "MissingVertex",
            Error::Io(_) => "IoError",
            Error::Json(_) => "IoError",
        }
    }

    /// Process exit code: 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::EigensolverFailure | Error::NoConvergence { .. } => 2,
            _ => 1,
        }
    }
}
