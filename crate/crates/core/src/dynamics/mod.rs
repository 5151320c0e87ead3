//! Training rules: discrete steppers with their adaptive learning rates, and
//! continuous flows.

pub mod flow;
pub mod steppers;

pub use flow::{integrate_flow, rk4_step, FlowPoint, FlowSpec, FlowStatus, FlowTrajectory, FlowVariant};
pub use steppers::{
    adaptive_lr_gd, adaptive_lr_noise, adaptive_lr_sgd, gd_step, gd_step_adaptive, gd_step_noise,
    gd_step_weight_decay, sgd_step, step, PairFactor, Rule, StepOutcome,
};
