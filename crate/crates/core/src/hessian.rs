//! Dense symmetric Hessian and its dominant eigenvalue.

/// Relative change in the Rayleigh quotient at which power iteration stops.
pub const POWER_ITERATION_TOLERANCE: f64 = 1e-10;

/// A `d × d` symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl HessianMatrix {
    pub(crate) fn from_row_major(dim: usize, entries: Vec<f64>) -> Self {
        debug_assert_eq!(entries.len(), dim * dim);
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn row_major(&self) -> &[f64] {
        &self.entries
    }

    pub fn is_symmetric(&self, tolerance: f64) -> bool {
        (0..self.dim).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tolerance))
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.entries[i * self.dim..(i + 1) * self.dim];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// Dominant eigenvalue by power iteration, capped at `10 d` iterations.
    pub fn top_eigenvalue(&self) -> f64 {
        self.power_iteration(POWER_ITERATION_TOLERANCE, 10 * self.dim)
    }

    /// Power iteration with a Rayleigh-quotient estimate.
    ///
    /// Starts from the column with the largest diagonal entry, which is already
    /// the dominant eigenvector when the matrix has rank one (every minimum).
    pub fn power_iteration(&self, tolerance: f64, max_iter: usize) -> f64 {
        let d = self.dim;
        let start = (0..d)
            .max_by(|&a, &b| self.get(a, a).abs().total_cmp(&self.get(b, b).abs()))
            .unwrap_or(0);
        let mut x: Vec<f64> = (0..d).map(|i| self.get(i, start)).collect();
        if normalize(&mut x) == 0.0 {
            x = vec![1.0 / (d as f64).sqrt(); d];
        }
        let mut y = vec![0.0; d];
        let mut estimate = f64::NAN;
        for _ in 0..max_iter.max(1) {
            self.apply(&x, &mut y);
            let rayleigh: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            let converged = (rayleigh - estimate).abs() <= tolerance * rayleigh.abs();
            estimate = rayleigh;
            if normalize(&mut y) == 0.0 || converged {
                break;
            }
            std::mem::swap(&mut x, &mut y);
        }
        estimate
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|a| *a /= norm);
    }
    norm
}
