//! Closed-form quantities of a scalar deep linear network `y = w_1 ⋯ w_d · x`.
//!
//! On a centered and normalized dataset the training loss reduces to
//! `L(w) = (W - 1)^2` with `W = w_1 ⋯ w_d`, so everything here is a pure
//! function of the weight vector.

use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};
use crate::hessian::HessianMatrix;

/// Below this magnitude `W / w_i` is recomputed as the product of the other
/// layers instead of by division.
pub const DIVISION_GUARD: f64 = 1e-12;

/// Default tolerance on `|W - 1|` for a point to count as a minimum.
pub const MANIFOLD_TOLERANCE: f64 = 1e-9;

/// Weights of a scalar deep linear network, one real per layer.
///
/// Always holds at least two finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(DlnError::TooFewLayers(weights.len()));
        }
        if let Some((index, &value)) = weights.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(DlnError::NonFiniteWeight { index, value });
        }
        Ok(Self(weights))
    }

    /// `d` copies of `c`.
    pub fn balanced(d: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Rejects any layer that is exactly zero.
    pub fn ensure_nonzero(&self) -> Result<()> {
        match self.0.iter().position(|&v| v == 0.0) {
            Some(index) => Err(DlnError::ZeroWeight { index }),
            None => Ok(()),
        }
    }

    /// End-to-end weight `W`, multiplied left to right.
    pub fn product(&self) -> f64 {
        self.0.iter().fold(1.0, |acc, &v| acc * v)
    }

    /// `(W - 1)^2`.
    pub fn loss(&self) -> f64 {
        let r = self.product() - 1.0;
        r * r
    }

    /// `W / w_i`, the product of every layer except `i`.
    pub fn product_without(&self, i: usize) -> Result<f64> {
        let wi = *self.0.get(i).ok_or(DlnError::IndexOutOfRange {
            index: i,
            dim: self.dim(),
        })?;
        if wi == 0.0 {
            return Err(DlnError::ZeroWeight { index: i });
        }
        if wi.abs() > DIVISION_GUARD {
            Ok(self.product() / wi)
        } else {
            Ok(self
                .0
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != i)
                .fold(1.0, |acc, (_, &v)| acc * v))
        }
    }

    /// All `W / w_i` at once.
    pub fn products_without(&self) -> Result<Vec<f64>> {
        self.ensure_nonzero()?;
        (0..self.dim()).map(|i| self.product_without(i)).collect()
    }

    /// `Σ 1 / w_i^2`; this sum sets both the Hessian scale and every
    /// adaptive learning rate.
    pub fn inv_sq_sum(&self) -> Result<f64> {
        self.ensure_nonzero()?;
        Ok(self.0.iter().map(|&v| 1.0 / (v * v)).sum())
    }

    /// `∂L/∂w_i = 2 (W - 1) (W / w_i)`.
    pub fn gradient(&self) -> Result<Vec<f64>> {
        let residual = self.product() - 1.0;
        Ok(self
            .products_without()?
            .into_iter()
            .map(|q| 2.0 * residual * q)
            .collect())
    }

    /// Exact Hessian of the loss.
    ///
    /// Diagonal `2 W^2 / w_i^2`, off-diagonal `2 (2W - 1) W / (w_i w_j)`.
    pub fn hessian(&self) -> Result<HessianMatrix> {
        self.ensure_nonzero()?;
        let d = self.dim();
        let w = self.product();
        let q = self.products_without()?;
        let mut entries = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                entries[i * d + j] = if i == j {
                    2.0 * q[i] * q[i]
                } else {
                    2.0 * (2.0 * w - 1.0) * w / (self.0[i] * self.0[j])
                };
            }
        }
        Ok(HessianMatrix::from_row_major(d, entries))
    }

    /// Largest Hessian eigenvalue at a minimum, which equals `2 Σ 1/w_i^2`.
    pub fn hessian_top_eigenvalue(&self) -> Result<f64> {
        self.hessian_top_eigenvalue_with(MANIFOLD_TOLERANCE)
    }

    pub fn hessian_top_eigenvalue_with(&self, tolerance: f64) -> Result<f64> {
        let residual = (self.product() - 1.0).abs();
        if residual > tolerance {
            return Err(DlnError::NotOnManifold {
                residual,
                tolerance,
            });
        }
        Ok(self.hessian()?.top_eigenvalue())
    }

    /// Signed `D_ij = w_i^2 - w_j^2`, evaluated as `(w_i - w_j)(w_i + w_j)`.
    pub fn pairwise_imbalance(&self, i: usize, j: usize) -> Result<f64> {
        let d = self.dim();
        for index in [i, j] {
            if index >= d {
                return Err(DlnError::IndexOutOfRange { index, dim: d });
            }
        }
        Ok(signed_imbalance(self.0[i], self.0[j]))
    }

    /// Layer imbalance `D(w) = max_{i,j} |w_i^2 - w_j^2|`.
    pub fn layer_imbalance(&self) -> f64 {
        let (mut lo, mut hi) = (0, 0);
        for (k, &v) in self.0.iter().enumerate() {
            if v * v < self.0[lo] * self.0[lo] {
                lo = k;
            }
            if v * v > self.0[hi] * self.0[hi] {
                hi = k;
            }
        }
        signed_imbalance(self.0[hi], self.0[lo]).abs()
    }

    /// Every unordered pair `(i, j)` with `i < j`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> {
        let d = self.dim();
        (0..d).flat_map(move |i| (i + 1..d).map(move |j| (i, j)))
    }
}

pub(crate) fn signed_imbalance(a: f64, b: f64) -> f64 {
    (a - b) * (a + b)
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = DlnError;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(value: WeightVector) -> Self {
        value.0
    }
}

impl std::ops::Index<usize> for WeightVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn wv(v: &[f64]) -> WeightVector {
        WeightVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_invalid_vectors() {
        assert_eq!(WeightVector::new(vec![1.0]), Err(DlnError::TooFewLayers(1)));
        assert!(matches!(
            WeightVector::new(vec![1.0, f64::NAN]),
            Err(DlnError::NonFiniteWeight { index: 1, .. })
        ));
        assert!(WeightVector::new(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn product_examples() {
        assert_eq!(wv(&[1.0, 1.0, 1.0]).product(), 1.0);
        assert_eq!(wv(&[2.0, 0.5]).product(), 1.0);
        assert_eq!(wv(&[-1.0, -1.0, 2.0]).product(), 2.0);
    }

    #[test]
    fn loss_examples() {
        assert_eq!(wv(&[1.0, 1.0]).loss(), 0.0);
        assert_eq!(wv(&[2.0, 1.0]).loss(), 1.0);
        assert_eq!(wv(&[3.0, 0.5, 2.0]).loss(), 4.0);
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(wv(&[2.0, 0.5]).gradient().unwrap(), vec![0.0, 0.0]);
        assert_eq!(wv(&[1.0, 2.0]).gradient().unwrap(), vec![4.0, 2.0]);
    }

    #[test]
    fn gradient_rejects_zero_weight() {
        assert_eq!(
            wv(&[1.0, 0.0, 2.0]).gradient(),
            Err(DlnError::ZeroWeight { index: 1 })
        );
        assert!(wv(&[0.0, 1.0]).hessian().is_err());
    }

    #[test]
    fn tiny_weights_use_the_product_of_others() {
        let w = wv(&[1e-300, 3.0, 2.0]);
        // W underflows relative to w_0, but the other layers still multiply to 6.
        assert_eq!(w.product_without(0).unwrap(), 6.0);
        assert_relative_eq!(w.product_without(1).unwrap(), 2e-300, max_relative = 1e-15);
    }

    #[test]
    fn hessian_at_unit_point() {
        let h = wv(&[1.0, 1.0]).hessian().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(h.get(i, j), 2.0);
            }
        }
    }

    #[test]
    fn hessian_on_sharp_minimum() {
        let h = wv(&[2.0, 0.5]).hessian().unwrap();
        assert_relative_eq!(h.get(0, 0), 0.5);
        assert_relative_eq!(h.get(1, 1), 8.0);
        assert_relative_eq!(h.get(0, 1), 2.0);
        assert!(h.is_symmetric(0.0));
    }

    #[test]
    fn top_eigenvalue_requires_a_minimum() {
        assert!(matches!(
            wv(&[1.2, 1.0]).hessian_top_eigenvalue(),
            Err(DlnError::NotOnManifold { .. })
        ));
        assert!(wv(&[1.2, 1.0]).hessian_top_eigenvalue_with(0.5).is_ok());
    }

    #[test]
    fn top_eigenvalue_examples() {
        assert_relative_eq!(wv(&[1.0, 1.0]).hessian_top_eigenvalue().unwrap(), 4.0, max_relative = 1e-12);
        assert_relative_eq!(wv(&[2.0, 0.5]).hessian_top_eigenvalue().unwrap(), 8.5, max_relative = 1e-12);
        assert_relative_eq!(wv(&[1.0, 1.0, 1.0]).hessian_top_eigenvalue().unwrap(), 6.0, max_relative = 1e-12);
    }

    #[test]
    fn imbalance_examples() {
        assert_eq!(wv(&[1.0, 1.0, 1.0]).layer_imbalance(), 0.0);
        assert_eq!(wv(&[2.0, 0.5]).layer_imbalance(), 3.75);
        assert_eq!(wv(&[3.0, 1.0, 0.5]).layer_imbalance(), 8.75);
    }

    #[test]
    fn pairwise_imbalance_examples() {
        let w = wv(&[2.0, 0.5]);
        assert_eq!(w.pairwise_imbalance(0, 1).unwrap(), 3.75);
        assert_eq!(w.pairwise_imbalance(1, 0).unwrap(), -3.75);
        assert_eq!(wv(&[1.0, 1.0]).pairwise_imbalance(0, 1).unwrap(), 0.0);
        assert_eq!(
            w.pairwise_imbalance(0, 2),
            Err(DlnError::IndexOutOfRange { index: 2, dim: 2 })
        );
    }

    #[test]
    fn serde_validates() {
        let w: WeightVector = serde_json::from_str("[1.5, 0.7]").unwrap();
        assert_eq!(w.dim(), 2);
        assert!(serde_json::from_str::<WeightVector>("[1.5]").is_err());
    }
}
