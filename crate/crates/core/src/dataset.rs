//! Normalized scalar datasets, mini-batches and SGD noise statistics.
//!
//! A dataset is normalized when
//! `Σ x = 0`, `mean(x²) = 1`, `Σ y = 0` and `mean(x y) = 1`. Under these
//! constraints the regression loss of a scalar network collapses to
//! `(W - 1)²` and a mini-batch gradient differs from the full one only through
//! the two batch statistics held in [`NoiseDecomposition`].

use std::io::{self, BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{DlnError, Result};
use crate::rng::{self, Purpose};

/// Absolute tolerance on each normalization constraint.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-10;

/// Regeneration attempts before a degenerate draw is reported.
pub const MAX_GENERATION_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub x: f64,
    pub y: f64,
}

/// An immutable normalized dataset with at least two samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
}

/// The four normalization sums of a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub sum_x: f64,
    pub mean_xx: f64,
    pub sum_y: f64,
    pub mean_xy: f64,
}

impl Moments {
    fn check(&self) -> Result<()> {
        let t = NORMALIZATION_TOLERANCE;
        let failures: Vec<String> = [
            ("sum x", self.sum_x, 0.0),
            ("mean x^2", self.mean_xx, 1.0),
            ("sum y", self.sum_y, 0.0),
            ("mean xy", self.mean_xy, 1.0),
        ]
        .into_iter()
        .filter(|&(_, v, target)| (v - target).abs() > t)
        .map(|(name, v, target)| format!("{name} = {v} (want {target})"))
        .collect();
        if failures.is_empty() {
            Ok(())
        } else {
            Err(DlnError::NotNormalized(failures.join(", ")))
        }
    }
}

impl Dataset {
    /// Wraps samples that already satisfy the normalization constraints.
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(DlnError::TooFewSamples(samples.len()));
        }
        let ds = Self { samples };
        ds.moments().check()?;
        Ok(ds)
    }

    /// Draws `n` raw samples and corrects them onto the normalization
    /// constraints.
    ///
    /// Raw `x` is standard normal and `y = x + noise_level · ε` with standard
    /// normal `ε`. The correction centers `x`, rescales it to unit second
    /// moment, centers `y` and rescales it so that `mean(x y) = 1`. With
    /// `noise_level = 0` the labels are set equal to the corrected inputs.
    pub fn generate(n: usize, noise_level: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(DlnError::TooFewSamples(n));
        }
        if !(noise_level >= 0.0 && noise_level.is_finite()) {
            return Err(DlnError::NotNormalized(format!(
                "noise level must be finite and non-negative, got {noise_level}"
            )));
        }
        let mut reason = String::new();
        for attempt in 0..MAX_GENERATION_ATTEMPTS {
            let id = Purpose::Dataset as u64 + ((attempt as u64) << 32);
            let mut rng = rng::stream_with_id(seed, 0, id);
            match Self::draw_normalized(n, noise_level, &mut rng) {
                Ok(ds) => return Ok(ds),
                Err(why) => reason = why,
            }
        }
        Err(DlnError::DegenerateSample {
            attempts: MAX_GENERATION_ATTEMPTS,
            reason,
        })
    }

    fn draw_normalized<R: Rng>(
        n: usize,
        noise_level: f64,
        rng: &mut R,
    ) -> std::result::Result<Self, String> {
        let nf = n as f64;
        let mut xs: Vec<f64> = Vec::with_capacity(n);
        let mut ys: Vec<f64> = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            xs.push(x);
            ys.push(x + noise_level * e);
        }

        let mean_x = xs.iter().sum::<f64>() / nf;
        xs.iter_mut().for_each(|x| *x -= mean_x);
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        if sxx == 0.0 {
            return Err("inputs have zero spread".into());
        }
        let scale_x = (nf / sxx).sqrt();
        xs.iter_mut().for_each(|x| *x *= scale_x);

        if noise_level == 0.0 {
            ys.clone_from(&xs);
        } else {
            let mean_y = ys.iter().sum::<f64>() / nf;
            ys.iter_mut().for_each(|y| *y -= mean_y);
            let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
            if sxy == 0.0 {
                return Err("inputs and labels are uncorrelated".into());
            }
            let scale_y = nf / sxy;
            ys.iter_mut().for_each(|y| *y *= scale_y);
        }

        let samples = xs.into_iter().zip(ys).map(|(x, y)| Sample { x, y }).collect();
        let ds = Self { samples };
        ds.moments().check().map_err(|e| e.to_string())?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn moments(&self) -> Moments {
        let n = self.samples.len() as f64;
        let mut m = Moments {
            sum_x: 0.0,
            mean_xx: 0.0,
            sum_y: 0.0,
            mean_xy: 0.0,
        };
        for s in &self.samples {
            m.sum_x += s.x;
            m.mean_xx += s.x * s.x;
            m.sum_y += s.y;
            m.mean_xy += s.x * s.y;
        }
        m.mean_xx /= n;
        m.mean_xy /= n;
        m
    }

    /// Uniformly random subset of `size` distinct indices, sorted ascending.
    pub fn sample_batch<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Batch> {
        let n = self.len();
        if size == 0 || size > n {
            return Err(DlnError::BadBatchSize { batch: size, n });
        }
        let mut indices = rand::seq::index::sample(rng, n, size).into_vec();
        indices.sort_unstable();
        Ok(Batch { indices })
    }

    /// Batch statistics `η₁ = mean_B(x²) - 1` and `η₂ = mean_B(x y) - 1`.
    pub fn noise_decomposition(&self, batch: &Batch) -> NoiseDecomposition {
        let b = batch.len() as f64;
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for &i in &batch.indices {
            let s = self.samples[i];
            sxx += s.x * s.x;
            sxy += s.x * s.y;
        }
        NoiseDecomposition {
            eta1: sxx / b - 1.0,
            eta2: sxy / b - 1.0,
        }
    }

    /// Monte Carlo variance of the combined SGD noise `η = W η₁ - η₂` over
    /// `trials` independent batches of size `batch`.
    pub fn sgd_noise_variance<R: Rng + ?Sized>(
        &self,
        batch: usize,
        trials: usize,
        w_ref: f64,
        rng: &mut R,
    ) -> Result<f64> {
        if trials < 100 {
            return Err(DlnError::TooFewTrials {
                min: 100,
                got: trials,
            });
        }
        let mut acc = Welford::default();
        for _ in 0..trials {
            let b = self.sample_batch(batch, rng)?;
            acc.push(self.noise_decomposition(&b).combined(w_ref));
        }
        Ok(acc.sample_variance())
    }

    /// Writes `x,y` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x,y")?;
        for s in &self.samples {
            writeln!(out, "{:.16e},{:.16e}", s.x, s.y)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ASCII")
    }

    /// Reads the format produced by [`Dataset::write_csv`] and re-validates
    /// the normalization constraints.
    pub fn read_csv<R: BufRead>(input: R) -> std::result::Result<Self, String> {
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "x,y" => {}
            Some(Ok(h)) => return Err(format!("line 1: expected header `x,y`, got `{h}`")),
            Some(Err(e)) => return Err(e.to_string()),
            None => return Err("missing header".into()),
        }
        let mut samples = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            let lineno = k + 2;
            let mut cols = line.split(',');
            let parse = |c: Option<&str>| -> std::result::Result<f64, String> {
                c.ok_or_else(|| format!("line {lineno}: expected 2 columns"))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| format!("line {lineno}: {e}"))
            };
            let x = parse(cols.next())?;
            let y = parse(cols.next())?;
            if cols.next().is_some() {
                return Err(format!("line {lineno}: expected 2 columns"));
            }
            samples.push(Sample { x, y });
        }
        Self::from_samples(samples).map_err(|e| e.to_string())
    }
}

/// Sorted distinct sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    indices: Vec<usize>,
}

impl Batch {
    pub fn new(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        let distinct = indices.windows(2).all(|w| w[0] != w[1]);
        if indices.is_empty() || !distinct || indices.last().is_some_and(|&i| i >= n) {
            return Err(DlnError::BadBatchSize {
                batch: indices.len(),
                n,
            });
        }
        Ok(Self { indices })
    }

    pub fn full(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Mini-batch deviations of the two data moments that enter the gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDecomposition {
    /// Data noise: `mean_B(x²) - 1`, acts like input augmentation.
    pub eta1: f64,
    /// Label noise: `mean_B(x y) - 1`.
    pub eta2: f64,
}

impl NoiseDecomposition {
    /// `η = W η₁ - η₂`.
    pub fn combined(&self, w: f64) -> f64 {
        w * self.eta1 - self.eta2
    }
}

/// Running mean and variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sample_variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}
