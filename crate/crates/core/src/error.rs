use thiserror::Error;

/// Errors produced anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("preference list for node {node} is not a permutation of 1..={n_units}: {detail}")]
    NonPermutationPreference {
        node: usize,
        n_units: usize,
        detail: String,
    },
    #[error("demand fractions must be non-negative and sum to 1 (sum = {sum})")]
    FractionsNotNormalized { sum: f64 },
    #[error("{what} must be positive and finite, got {value}")]
    NonPositiveRate { what: String, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("layer {layer} out of range for {n_units} units (cap {cap})")]
    LayerOutOfRange {
        n_units: usize,
        layer: usize,
        cap: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("state space too large: {0}")]
    StateSpaceTooLarge(String),
    #[error("state {to:#b} is not an upward neighbor of {from:#b}")]
    NotUpwardNeighbor { from: u32, to: u32 },
    #[error("degenerate birth-death rates: {0}")]
    DegenerateRates(String),
    #[error("unstable system: arrival rate {arrival} >= saturated service rate {service}")]
    UnstableSystem { arrival: f64, service: f64 },
    #[error("inner iteration for layer {layer} did not converge within {iterations} updates")]
    InnerDiverged { layer: usize, iterations: usize },
    #[error("closed-form inner fixed point is singular for layer {layer} (1 - A = {denominator})")]
    FixedPointSingular { layer: usize, denominator: f64 },
    #[error("outer iteration did not converge within {iterations} sweeps (last difference {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("worker failed on layer {layer}, batch {batch}: {message}")]
    WorkerFailure {
        layer: usize,
        batch: usize,
        message: String,
    },
    #[error("need at least two distinct worker counts to fit, got {0}")]
    InsufficientSamples(usize),
    #[error("fitted slope is non-positive ({slope}); parallel fraction is meaningless")]
    NegativeSlope { slope: f64 },
    #[error("oracle limited to {cap} units, got {n_units}")]
    OracleTooLarge { n_units: usize, cap: usize },
    #[error("balance system is singular: {0}")]
    SingularSystem(String),
    #[error("travel times are required for this measure")]
    MissingTravelTimes,
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("system is saturated (blocking probability {0})")]
    SaturatedSystem(f64),
    #[error("vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("every reference entry is zero")]
    AllReferenceZero,
    #[error("transition cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
