use thiserror::Error;

/// Errors raised by the network, dataset, dynamics and analysis layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DlnError {
    #[error("a network needs at least 2 layers, got {0}")]
    TooFewLayers(usize),

    #[error("weight {index} is not finite ({value})")]
    NonFiniteWeight { index: usize, value: f64 },

    #[error("weight {index} is zero")]
    ZeroWeight { index: usize },

    #[error("layer index {index} out of range for d = {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("|W - 1| = {residual} exceeds the manifold tolerance {tolerance}")]
    NotOnManifold { residual: f64, tolerance: f64 },

    #[error("point lies on the minima manifold (W = 1); contraction factor undefined")]
    OnManifold,

    #[error("hypothesis violated: {0}")]
    OutsideHypothesis(String),

    #[error("pairwise imbalance D_{i}{j} is zero")]
    ZeroImbalance { i: usize, j: usize },

    #[error("{what} = {value} outside the proven interval {bound}")]
    BoundViolated {
        what: &'static str,
        value: f64,
        bound: String,
    },

    #[error("delta = {0} outside its admissible range")]
    BadDelta(f64),

    #[error("learning rate must be positive and finite, got {0}")]
    BadLearningRate(f64),

    #[error("weight decay must be non-negative, got {0}")]
    BadWeightDecay(f64),

    #[error("W = {0} must be positive for the weight decay band")]
    NonpositiveW(f64),

    #[error("batch size {batch} invalid for a dataset of {n} samples")]
    BadBatchSize { batch: usize, n: usize },

    #[error("dataset needs at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("at least {min} trials required, got {got}")]
    TooFewTrials { min: usize, got: usize },

    #[error("degenerate sample after {attempts} attempts: {reason}")]
    DegenerateSample { attempts: usize, reason: String },

    #[error("dataset violates normalization: {0}")]
    NotNormalized(String),

    #[error("step produced a non-finite weight")]
    NonFiniteStep,

    #[error("trajectory is empty")]
    EmptyTrajectory,

    #[error("invalid flow spec: {0}")]
    BadFlowSpec(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),
}

pub type Result<T> = std::result::Result<T, DlnError>;
