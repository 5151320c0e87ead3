//! Training dynamics of scalar deep linear networks `y = w_1 ⋯ w_d · x`.
//!
//! The crate covers exact loss geometry ([`WeightVector`]), normalized
//! synthetic data with mini-batch noise ([`dataset`]), continuous flows and
//! discrete steppers ([`dynamics`]), band and contraction analysis
//! ([`analysis`]), CSV trajectories ([`trajectory`]), a config-driven
//! experiment runner ([`experiment`]) and randomized property suites
//! ([`verify`]).

pub mod analysis;
pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod hessian;
pub mod network;
pub mod rng;
pub mod trajectory;
pub mod verify;

pub use analysis::{Band, BandKind, Phase, PhaseDecomposition};
pub use dataset::{Batch, Dataset, NoiseDecomposition, Sample};
pub use dynamics::{FlowSpec, FlowStatus, FlowTrajectory, FlowVariant, Rule, StepOutcome};
pub use error::{DlnError, Result};
pub use experiment::{RunConfig, RunOutput};
pub use hessian::HessianMatrix;
pub use network::WeightVector;
pub use trajectory::TrajectoryRecord;
