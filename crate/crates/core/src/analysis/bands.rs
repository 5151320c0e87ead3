//! Regularization bands: intervals of the end-to-end weight `W` where the
//! regularizer and the data term pull against each other and the loss may
//! oscillate instead of decreasing.

use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};
use crate::network::WeightVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandKind {
    WeightDecay,
    Noise,
    SgdNoise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
    pub kind: BandKind,
}

impl Band {
    /// The weight-decay band is closed; the noise bands are open.
    pub fn contains(&self, w: f64) -> bool {
        match self.kind {
            BandKind::WeightDecay => self.lo <= w && w <= self.hi,
            BandKind::Noise | BandKind::SgdNoise => self.lo < w && w < self.hi,
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// `[1 - μ d / (W Σ 1/w_i²), 1]`, evaluated at the current weights.
pub fn wd_band(w: &WeightVector, mu: f64) -> Result<Band> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(DlnError::BadWeightDecay(mu));
    }
    let big_w = w.product();
    if !(big_w > 0.0) {
        return Err(DlnError::NonpositiveW(big_w));
    }
    let d = w.dim() as f64;
    Ok(Band {
        lo: 1.0 - mu * d / (big_w * w.inv_sq_sum()?),
        hi: 1.0,
        kind: BandKind::WeightDecay,
    })
}

/// `(1 - δ/(1+δ), 1 + δ/(1-δ))` for noise bounded by `δ ∈ (0, 1/2)`.
pub fn noise_band(delta: f64) -> Result<Band> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(DlnError::BadDelta(delta));
    }
    Ok(Band {
        lo: 1.0 - delta / (1.0 + delta),
        hi: 1.0 + delta / (1.0 - delta),
        kind: BandKind::Noise,
    })
}

/// `(W - 1)(W - 1 + η) < 0`: the realized SGD step points away from the
/// minimum.
pub fn sgd_band_condition(w: f64, eta: f64) -> bool {
    (w - 1.0) * (w - 1.0 + eta) < 0.0
}

/// The open interval between `1 - η` and `1` on which
/// [`sgd_band_condition`] holds.
pub fn sgd_band(eta: f64) -> Band {
    let other = 1.0 - eta;
    Band {
        lo: other.min(1.0),
        hi: other.max(1.0),
        kind: BandKind::SgdNoise,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wv(v: &[f64]) -> WeightVector {
        WeightVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn wd_band_examples() {
        let w = wv(&[1.0, 1.0]);
        let zero = wd_band(&w, 0.0).unwrap();
        assert_eq!((zero.lo, zero.hi), (1.0, 1.0));
        let b = wd_band(&w, 0.1).unwrap();
        assert!((b.lo - 0.9).abs() < 1e-15 && b.hi == 1.0);
        assert!(wd_band(&w, 0.2).unwrap().width() > b.width());
        assert_eq!(wd_band(&wv(&[-1.0, 1.0]), 0.1), Err(DlnError::NonpositiveW(-1.0)));
    }

    #[test]
    fn noise_band_examples() {
        let b = noise_band(0.2).unwrap();
        assert!((b.lo - (1.0 - 1.0 / 6.0)).abs() < 1e-15);
        assert!((b.hi - 1.25).abs() < 1e-15);
        let tiny = noise_band(1e-12).unwrap();
        assert!((tiny.lo - 1.0).abs() < 1e-11 && (tiny.hi - 1.0).abs() < 1e-11);
        for delta in [0.01, 0.1, 0.3, 0.49] {
            let b = noise_band(delta).unwrap();
            assert!(b.hi - 1.0 > 1.0 - b.lo);
        }
        assert!(noise_band(0.5).is_err());
        assert!(noise_band(0.0).is_err());
    }

    #[test]
    fn sgd_condition_examples() {
        assert!(!sgd_band_condition(1.0, 0.3));
        assert!(sgd_band_condition(1.05, -0.1));
        for w in [0.5, 0.99, 1.0, 1.3] {
            assert!(!sgd_band_condition(w, 0.0));
        }
    }

    #[test]
    fn sgd_band_matches_condition() {
        for eta in [-0.3, -0.05, 0.05, 0.3] {
            let b = sgd_band(eta);
            for k in 0..200 {
                let w = 0.5 + k as f64 * 0.005;
                assert_eq!(b.contains(w), sgd_band_condition(w, eta), "w = {w}, eta = {eta}");
            }
        }
    }
}
