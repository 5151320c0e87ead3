use serde::{Deserialize, Serialize};

use super::bands::Band;
use crate::error::{DlnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Heading toward the minima manifold; loss decreases.
    Optimization,
    /// Inside the band, drifting along the manifold toward flat minima.
    Regularization,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Optimization => "optimization",
            Phase::Regularization => "regularization",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "optimization" => Some(Phase::Optimization),
            "regularization" => Some(Phase::Regularization),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDecomposition {
    /// First step whose `W` lies in that step's band; the trajectory length
    /// if the band is never entered.
    pub entry_step: usize,
    pub phases: Vec<Phase>,
}

impl PhaseDecomposition {
    pub fn entered(&self) -> bool {
        self.entry_step < self.phases.len()
    }
}

/// Splits a trajectory at its first band entry.
///
/// `products[k]` is `W` at step `k` and `bands[k]` the band evaluated at that
/// step. Later exits do not reopen the optimization phase.
pub fn detect_phases(products: &[f64], bands: &[Band]) -> Result<PhaseDecomposition> {
    if products.is_empty() {
        return Err(DlnError::EmptyTrajectory);
    }
    if products.len() != bands.len() {
        return Err(DlnError::LengthMismatch(format!(
            "{} states but {} bands",
            products.len(),
            bands.len()
        )));
    }
    let entry_step = products
        .iter()
        .zip(bands)
        .position(|(&w, band)| band.contains(w))
        .unwrap_or(products.len());
    let phases = (0..products.len())
        .map(|k| {
            if k < entry_step {
                Phase::Optimization
            } else {
                Phase::Regularization
            }
        })
        .collect();
    Ok(PhaseDecomposition { entry_step, phases })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::bands::{noise_band, BandKind};

    #[test]
    fn starting_inside_enters_at_zero() {
        let band = noise_band(0.2).unwrap();
        let p = detect_phases(&[1.0, 1.1, 0.9], &[band; 3]).unwrap();
        assert_eq!(p.entry_step, 0);
        assert!(p.phases.iter().all(|&ph| ph == Phase::Regularization));
    }

    #[test]
    fn single_crossing_ignores_exits() {
        let band = noise_band(0.1).unwrap();
        let p = detect_phases(&[0.5, 0.8, 0.95, 1.5, 1.0], &[band; 5]).unwrap();
        assert_eq!(p.entry_step, 2);
        assert_eq!(
            p.phases,
            vec![
                Phase::Optimization,
                Phase::Optimization,
                Phase::Regularization,
                Phase::Regularization,
                Phase::Regularization
            ]
        );
    }

    #[test]
    fn degenerate_band_is_only_entered_at_zero_loss() {
        let band = Band {
            lo: 1.0,
            hi: 1.0,
            kind: BandKind::WeightDecay,
        };
        let p = detect_phases(&[0.5, 0.9, 0.999], &[band; 3]).unwrap();
        assert!(!p.entered());
        assert_eq!(p.entry_step, 3);
        let hit = detect_phases(&[0.5, 1.0], &[band; 2]).unwrap();
        assert_eq!(hit.entry_step, 1);
    }

    #[test]
    fn errors() {
        assert_eq!(detect_phases(&[], &[]), Err(DlnError::EmptyTrajectory));
        let band = noise_band(0.1).unwrap();
        assert!(matches!(detect_phases(&[1.0], &[band; 2]), Err(DlnError::LengthMismatch(_))));
    }
}
