//! Discrete training rules.
//!
//! Every rule has the form `w_i(t+1) = w_i - 2·lr·f_i(w)` with all
//! coordinates updated from `w(t)`:
//!
//! | rule         | `f_i`                                   |
//! |--------------|-----------------------------------------|
//! | plain GD     | `(W - 1) · W/w_i`                       |
//! | weight decay | `(W - 1) · W/w_i + μ w_i`               |
//! | noise        | `(1 + η)(W(1 + η) - 1) · W/w_i`         |
//! | SGD          | `(W - 1 + η) · W/w_i`                   |
//!
//! The force terms are arranged so that `η = 0` or `μ = 0` reproduces the
//! plain GD update bit for bit.

use crate::error::{DlnError, Result};
use crate::network::{signed_imbalance, WeightVector};

/// Residual radius `|W - 1|` under which the adaptive GD guarantees hold.
pub const GD_HYPOTHESIS_RADIUS: f64 = 0.5;

/// `(1/2)(2/3)^5`, the noise-augmentation rate constant.
pub const NOISE_RATE_CONSTANT: f64 = 16.0 / 243.0;

/// Per-step contraction of one pairwise imbalance, `D_ij(t+1) / D_ij(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFactor {
    pub i: usize,
    pub j: usize,
    pub before: f64,
    pub after: f64,
}

impl PairFactor {
    pub fn factor(&self) -> f64 {
        self.after / self.before
    }
}

/// Result of one discrete step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub w_next: WeightVector,
    pub lr_used: f64,
    /// `(W(t+1) - 1) / (W(t) - 1)`; `None` on the minima manifold.
    pub loss_factor: Option<f64>,
    /// One entry per pair with `D_ij(t) ≠ 0`.
    pub imbalance_factors: Vec<PairFactor>,
}

/// Which update rule to apply in [`step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    Gd,
    WeightDecay { mu: f64 },
    Noise { eta: f64 },
    Sgd { eta: f64 },
}

fn check_lr(lr: f64) -> Result<()> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(DlnError::BadLearningRate(lr))
    }
}

/// Applies `rule` once with learning rate `lr`.
pub fn step(w: &WeightVector, lr: f64, rule: Rule) -> Result<StepOutcome> {
    check_lr(lr)?;
    if let Rule::WeightDecay { mu } = rule {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(DlnError::BadWeightDecay(mu));
        }
    }
    let q = w.products_without()?;
    let big_w = w.product();
    let residual = big_w - 1.0;
    let scale = 2.0 * lr;
    let next: Vec<f64> = w
        .as_slice()
        .iter()
        .zip(&q)
        .map(|(&wi, &qi)| {
            let force = match rule {
                Rule::Gd => residual * qi,
                Rule::WeightDecay { mu } => residual * qi + mu * wi,
                Rule::Noise { eta } => ((1.0 + eta) * (big_w * (1.0 + eta) - 1.0)) * qi,
                Rule::Sgd { eta } => (residual + eta) * qi,
            };
            wi - scale * force
        })
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(DlnError::NonFiniteStep);
    }
    let w_next = WeightVector::new(next)?;
    Ok(outcome(w, w_next, lr))
}

fn outcome(w: &WeightVector, w_next: WeightVector, lr: f64) -> StepOutcome {
    let residual = w.product() - 1.0;
    let loss_factor = (residual != 0.0).then(|| (w_next.product() - 1.0) / residual);
    let imbalance_factors = w
        .pairs()
        .filter_map(|(i, j)| {
            let before = signed_imbalance(w[i], w[j]);
            (before != 0.0).then(|| PairFactor {
                i,
                j,
                before,
                after: signed_imbalance(w_next[i], w_next[j]),
            })
        })
        .collect();
    StepOutcome {
        w_next,
        lr_used: lr,
        loss_factor,
        imbalance_factors,
    }
}

/// `1 / (4 Σ 1/w_i²)`.
pub fn adaptive_lr_gd(w: &WeightVector) -> Result<f64> {
    Ok(1.0 / (4.0 * w.inv_sq_sum()?))
}

/// `(16/243) / Σ 1/w_i²`.
pub fn adaptive_lr_noise(w: &WeightVector) -> Result<f64> {
    Ok(NOISE_RATE_CONSTANT / w.inv_sq_sum()?)
}

/// `1 / (2 δ (1 + δ) Σ 1/w_i²)` for `δ ∈ (0, 1)`.
pub fn adaptive_lr_sgd(w: &WeightVector, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DlnError::BadDelta(delta));
    }
    Ok(1.0 / (2.0 * delta * (1.0 + delta) * w.inv_sq_sum()?))
}

/// Plain gradient descent.
pub fn gd_step(w: &WeightVector, lr: f64) -> Result<StepOutcome> {
    step(w, lr, Rule::Gd)
}

/// Gradient descent with the adaptive rate, restricted to `|W - 1| < 1/2`
/// where the residual contracts by `|k| < 59/64` and every pairwise imbalance
/// by a factor in `(247/256, 1]`.
pub fn gd_step_adaptive(w: &WeightVector) -> Result<StepOutcome> {
    let residual = (w.product() - 1.0).abs();
    if !(residual < GD_HYPOTHESIS_RADIUS) {
        return Err(DlnError::OutsideHypothesis(format!(
            "|W - 1| = {residual} is not below {GD_HYPOTHESIS_RADIUS}"
        )));
    }
    gd_step(w, adaptive_lr_gd(w)?)
}

/// Forward-Euler step of gradient descent on `(W - 1)² + μ Σ w_i²`.
pub fn gd_step_weight_decay(w: &WeightVector, lr: f64, mu: f64) -> Result<StepOutcome> {
    step(w, lr, Rule::WeightDecay { mu })
}

/// Gradient descent on inputs scaled by `(1 + η)`; one draw shared by all
/// layers.
pub fn gd_step_noise(w: &WeightVector, lr: f64, eta: f64) -> Result<StepOutcome> {
    step(w, lr, Rule::Noise { eta })
}

/// Mini-batch step with combined SGD noise `η` added to the residual.
pub fn sgd_step(w: &WeightVector, lr: f64, eta: f64) -> Result<StepOutcome> {
    step(w, lr, Rule::Sgd { eta })
}
