//! Empirical checks of the per-step contraction factors, the fixed-rate
//! divergence construction, and hyperbola conservation.

use crate::dynamics::{adaptive_lr_gd, gd_step, gd_step_adaptive, PairFactor, StepOutcome};
use crate::error::{DlnError, Result};
use crate::network::WeightVector;

/// Imbalance comparisons allow this many ulps of `w_i² + w_j²`: below that
/// resolution two imbalances cannot be ordered in double precision.
pub const ROUNDING_SLACK_ULPS: f64 = 4.0;

/// Lower bound on the pairwise imbalance factor under adaptive GD.
pub const IMBALANCE_FACTOR_FLOOR: f64 = 247.0 / 256.0;

/// `|k| < 59/64` bounds the residual factor under adaptive GD.
pub const LOSS_FACTOR_CEILING: f64 = 59.0 / 64.0;
pub const LOSS_FACTOR_FLOOR: f64 = -4.0 / 5.0;

/// Lower clamp of [`band_keeping_policy`].
pub const BAND_KEEPING_MIN_LR: f64 = 1e-8;

/// Upper clamp of [`band_keeping_policy`] as a multiple of the adaptive GD
/// rate. Below 5 the residual converges and the imbalance freezes.
pub const BAND_KEEPING_CAP: f64 = 6.0;

pub fn rounding_slack(scale: f64) -> f64 {
    ROUNDING_SLACK_ULPS * f64::EPSILON * scale
}

/// Whether `|D_ij|` grew by more than rounding over the step `before → after`.
pub fn pair_grew(pf: &PairFactor, before: &WeightVector, after: &WeightVector) -> bool {
    let (i, j) = (pf.i, pf.j);
    let scale = (before[i] * before[i] + before[j] * before[j])
        .max(after[i] * after[i] + after[j] * after[j]);
    pf.after.abs() > pf.before.abs() + rounding_slack(scale)
}

/// Whether the max-pair layer imbalance grew by more than rounding.
pub fn imbalance_grew(before: &WeightVector, after: &WeightVector) -> bool {
    let max_sq = |w: &WeightVector| w.as_slice().iter().fold(0.0f64, |m, v| m.max(v * v));
    let scale = 2.0 * max_sq(before).max(max_sq(after));
    after.layer_imbalance() > before.layer_imbalance() + rounding_slack(scale)
}

/// The interval the residual factor `k` provably lies in, by sign of
/// `(W - 1) W`.
pub fn loss_contraction_bounds(big_w: f64) -> (f64, f64) {
    if (big_w - 1.0) * big_w < 0.0 {
        (LOSS_FACTOR_FLOOR, 7.0 / 8.0)
    } else {
        (-1.0 / 8.0, LOSS_FACTOR_CEILING)
    }
}

/// Residual factor of one two-layer GD step at learning rate `lr`:
/// `1 - 2 lr (w_1² + w_2²) + 4 lr² (W - 1) W`.
pub fn two_layer_residual_factor(w1: f64, w2: f64, lr: f64) -> f64 {
    let big_w = w1 * w2;
    1.0 - 2.0 * lr * (w1 * w1 + w2 * w2) + 4.0 * lr * lr * (big_w - 1.0) * big_w
}

/// `1 - 4 lr² (W - 1)² W² / (w_i w_j)²`, the exact factor of `D_ij` under a
/// plain GD step.
pub fn imbalance_factor_closed_form(w: &WeightVector, i: usize, j: usize, lr: f64) -> f64 {
    let big_w = w.product();
    let m = 2.0 * lr * (big_w - 1.0) * big_w / (w[i] * w[j]);
    1.0 - m * m
}

fn check_gd_hypothesis(w: &WeightVector) -> Result<()> {
    let residual = (w.product() - 1.0).abs();
    if residual < 0.5 {
        Ok(())
    } else {
        Err(DlnError::OutsideHypothesis(format!("|W - 1| = {residual} is not below 0.5")))
    }
}

/// Runs one adaptive GD step and returns `k = (W(t+1) - 1)/(W(t) - 1)`,
/// failing if `k` leaves its case-specific interval.
pub fn verify_loss_contraction(w: &WeightVector) -> Result<f64> {
    let big_w = w.product();
    if big_w == 1.0 {
        return Err(DlnError::OnManifold);
    }
    check_gd_hypothesis(w)?;
    let out = gd_step_adaptive(w)?;
    let k = out.loss_factor.ok_or(DlnError::OnManifold)?;
    let (lo, hi) = loss_contraction_bounds(big_w);
    if lo < k && k < hi {
        Ok(k)
    } else {
        Err(DlnError::BoundViolated {
            what: "loss factor",
            value: k,
            bound: format!("({lo}, {hi})"),
        })
    }
}

/// Runs one adaptive GD step and returns `D_ij(t+1)/D_ij(t)`, failing unless
/// it lies in `(247/256, 1]`.
pub fn verify_imbalance_contraction(w: &WeightVector, i: usize, j: usize) -> Result<f64> {
    check_gd_hypothesis(w)?;
    let before = w.pairwise_imbalance(i, j)?;
    if before == 0.0 {
        return Err(DlnError::ZeroImbalance { i, j });
    }
    let out = gd_step_adaptive(w)?;
    let pf = PairFactor {
        i,
        j,
        before,
        after: out.w_next.pairwise_imbalance(i, j)?,
    };
    let k = pf.factor();
    if k > IMBALANCE_FACTOR_FLOOR && !pair_grew(&pf, w, &out.w_next) {
        Ok(k)
    } else {
        Err(DlnError::BoundViolated {
            what: "imbalance factor",
            value: k,
            bound: "(247/256, 1]".into(),
        })
    }
}

/// A point near the minima manifold at which one GD step with rate `lr`
/// increases the loss.
///
/// Uses `w = (s, 1.1/s, 1, …, 1)` with `s² = 10/lr`, so the two-layer factor
/// is about `-19` and the loss grows roughly 361-fold.
pub fn divergence_witness(lr: f64, d: usize) -> Result<WeightVector> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(DlnError::BadLearningRate(lr));
    }
    let s = (10.0 / lr).sqrt();
    let mut w = vec![1.0; d.max(2)];
    w[0] = s;
    w[1] = 1.1 / s;
    if d < 2 {
        return Err(DlnError::TooFewLayers(d));
    }
    WeightVector::new(w)
}

/// `max_{t, i<j} |D_ij(t) - D_ij(0)|` over a trajectory.
pub fn hyperbola_conservation<'a, I>(states: I) -> f64
where
    I: IntoIterator<Item = &'a WeightVector>,
{
    let mut iter = states.into_iter();
    let Some(first) = iter.next() else {
        return 0.0;
    };
    let initial: Vec<((usize, usize), f64)> = first
        .pairs()
        .map(|(i, j)| ((i, j), first.pairwise_imbalance(i, j).expect("pair in range")))
        .collect();
    iter.fold(0.0f64, |worst, w| {
        initial.iter().fold(worst, |worst, &((i, j), d0)| {
            let dt = w.pairwise_imbalance(i, j).expect("uniform dimension");
            worst.max((dt - d0).abs())
        })
    })
}

/// Learning-rate controller that keeps `|W - 1|` between 1/4 and 1/2.
///
/// Doubles `lr` when the residual is below 1/4 and halves it above 1/2, then
/// clamps to `[1e-8, 6 · adaptive_lr_gd(w)]`. A sustained residual keeps the
/// imbalance factor below one, so the imbalance keeps shrinking instead of
/// freezing once the loss vanishes.
pub fn band_keeping_policy(w: &WeightVector, lr_current: f64) -> Result<f64> {
    let cap = BAND_KEEPING_CAP * adaptive_lr_gd(w)?;
    let residual = (w.product() - 1.0).abs();
    let lr = if residual < 0.25 {
        2.0 * lr_current
    } else if residual > 0.5 {
        0.5 * lr_current
    } else {
        lr_current
    };
    Ok(lr.clamp(BAND_KEEPING_MIN_LR, cap.max(BAND_KEEPING_MIN_LR)))
}

/// One GD step driven by [`band_keeping_policy`]; returns the step and the
/// rate it used.
pub fn band_keeping_step(w: &WeightVector, lr_current: f64) -> Result<StepOutcome> {
    let lr = band_keeping_policy(w, lr_current)?;
    gd_step(w, lr)
}
