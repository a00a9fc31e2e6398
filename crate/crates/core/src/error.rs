use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown manifold `{0}` (expected torus1d, torus2d or sphere2)")]
    UnknownManifold(String),

    #[error("resolution of {got} nodes on axis {axis} is below the minimum of {min}")]
    Resolution { axis: usize, got: usize, min: usize },

    #[error("polar margin theta_min = {0} must lie in (0, pi/2)")]
    PolarMargin(f64),

    #[error("expected {expected} vector components, got {got}")]
    ComponentCount { expected: usize, got: usize },

    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("eigenbasis size {requested} exceeds the cap of {cap}")]
    BasisTooLarge { requested: usize, cap: usize },

    #[error("eigenbasis needs at least one mode")]
    EmptyBasis,

    #[error("Sobolev index {0} is not supported (expected -1, 0 or 1)")]
    SobolevIndex(i32),

    #[error("truncation level must be positive, got {0}")]
    TruncationLevel(f64),

    #[error("invalid time grid: {0}")]
    TimeGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown flux `{0}`")]
    UnknownFlux(String),

    #[error("field `{name}` does not vanish at the band edges (|value| = {value:e})")]
    BandEdge { name: String, value: f64 },

    #[error("explicit viscous step is unstable: dt*eps*|lambda_max| = {0} > 0.5")]
    Stability(f64),

    #[error(
        "evaluation grid too coarse for de-aliasing: axis {axis} has {nodes} nodes, needs {required}"
    )]
    Dealiasing {
        axis: usize,
        nodes: usize,
        required: usize,
    },

    #[error("solution left the working interval at step {step}: sup|u| = {sup} > {limit}")]
    BlowUp { step: usize, sup: f64, limit: f64 },

    #[error("non-finite coefficients at step {step} (last finite snapshot has {} modes)", snapshot.len())]
    NonFinite { step: usize, snapshot: Vec<f64> },

    #[error("value {value} outside the working interval (-{radius}, {radius})")]
    OutOfRange { value: f64, radius: f64 },

    #[error("test bank is ill-conditioned: condition number {0:e}")]
    IllConditioned(f64),

    #[error("mismatched configurations: {0}")]
    Mismatch(String),

    #[error("need at least {min} paths, got {got}")]
    TooFewPaths { got: usize, min: usize },

    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}
