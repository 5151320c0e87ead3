//! Bands, phases and empirical contraction checks over trajectories.

pub mod bands;
pub mod contraction;
pub mod phases;

pub use bands::{noise_band, sgd_band, sgd_band_condition, wd_band, Band, BandKind};
pub use contraction::{
    band_keeping_policy, band_keeping_step, divergence_witness, hyperbola_conservation,
    imbalance_factor_closed_form, imbalance_grew, loss_contraction_bounds, pair_grew,
    rounding_slack, two_layer_residual_factor, verify_imbalance_contraction,
    verify_loss_contraction,
};
pub use phases::{detect_phases, Phase, PhaseDecomposition};
