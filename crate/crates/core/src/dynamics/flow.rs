//! Continuous-time gradient flows, integrated with fixed-step RK4.
//!
//! Plain flow: `dw_i/dt = -2λ (W - 1)(W/w_i)`.
//! Weight-decay flow: `dw_i/dt = -2λ ((W - 1)(W/w_i) + μ w_i)`.

use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};
use crate::network::WeightVector;

/// Integration stops once any `|w_i|` falls below this.
pub const SINGULARITY_THRESHOLD: f64 = 1e-9;

pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FlowVariant {
    Plain,
    WeightDecay { mu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub variant: FlowVariant,
    /// Flow speed λ.
    pub lambda: f64,
    pub t_end: f64,
    pub dt: f64,
}

impl FlowSpec {
    pub fn plain(lambda: f64, t_end: f64, dt: f64) -> Self {
        Self {
            variant: FlowVariant::Plain,
            lambda,
            t_end,
            dt,
        }
    }

    pub fn weight_decay(lambda: f64, mu: f64, t_end: f64, dt: f64) -> Self {
        Self {
            variant: FlowVariant::WeightDecay { mu },
            lambda,
            t_end,
            dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.lambda) {
            return Err(DlnError::BadFlowSpec(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !positive(self.t_end) || !positive(self.dt) || self.dt > self.t_end {
            return Err(DlnError::BadFlowSpec(format!(
                "need 0 < dt <= t_end, got dt = {}, t_end = {}",
                self.dt, self.t_end
            )));
        }
        if let FlowVariant::WeightDecay { mu } = self.variant {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(DlnError::BadWeightDecay(mu));
            }
        }
        Ok(())
    }

    /// Number of RK4 steps; the last one is shortened to land on `t_end`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(1.0) as usize
    }

    fn time_at(&self, k: usize) -> f64 {
        if k >= self.steps() {
            self.t_end
        } else {
            k as f64 * self.dt
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowPoint {
    pub t: f64,
    pub w: WeightVector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowStatus {
    Completed,
    /// Some `|w_i|` dropped below [`SINGULARITY_THRESHOLD`] at time `t`.
    SingularityReached { t: f64 },
}

/// Emitted states, starting with `t = 0`, plus how integration ended.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    pub points: Vec<FlowPoint>,
    pub status: FlowStatus,
}

impl FlowTrajectory {
    pub fn last(&self) -> &FlowPoint {
        self.points.last().expect("a trajectory always holds its start")
    }

    pub fn is_complete(&self) -> bool {
        self.status == FlowStatus::Completed
    }
}

/// Right-hand side of the flow, written into `out`.
fn velocity(w: &[f64], spec: &FlowSpec, out: &mut [f64]) {
    let big_w = w.iter().fold(1.0, |acc, &v| acc * v);
    let residual = big_w - 1.0;
    let mu = match spec.variant {
        FlowVariant::Plain => 0.0,
        FlowVariant::WeightDecay { mu } => mu,
    };
    for (i, o) in out.iter_mut().enumerate() {
        let others = if w[i].abs() > crate::network::DIVISION_GUARD {
            big_w / w[i]
        } else {
            w.iter()
                .enumerate()
                .filter(|&(k, _)| k != i)
                .fold(1.0, |acc, (_, &v)| acc * v)
        };
        *o = -2.0 * spec.lambda * (residual * others + mu * w[i]);
    }
}

/// One classical Runge-Kutta step of size `h` for `dy/dt = f(y)`.
pub fn rk4_step<F>(y: &[f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    f(y, &mut k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f(&tmp, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(&tmp, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    f(&tmp, &mut k4);
    (0..n)
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Integrates the flow from `w0` and emits the state after every step.
///
/// Halts early with [`FlowStatus::SingularityReached`] when a layer gets
/// within [`SINGULARITY_THRESHOLD`] of zero or steps across it; the partial
/// trajectory is kept.
pub fn integrate_flow(w0: &WeightVector, spec: &FlowSpec) -> Result<FlowTrajectory> {
    spec.validate()?;
    w0.ensure_nonzero()?;
    let n = spec.steps();
    let mut points = Vec::with_capacity(n + 1);
    points.push(FlowPoint { t: 0.0, w: w0.clone() });
    let mut state = w0.as_slice().to_vec();
    for k in 1..=n {
        let (t0, t1) = (spec.time_at(k - 1), spec.time_at(k));
        state = rk4_step(&state, t1 - t0, |y, out| velocity(y, spec, out));
        let prev = points.last().expect("start pushed").w.as_slice();
        let crossed = state.iter().zip(prev).any(|(a, b)| a.signum() != b.signum());
        if crossed || state.iter().any(|v| !v.is_finite() || v.abs() < SINGULARITY_THRESHOLD) {
            return Ok(FlowTrajectory {
                points,
                status: FlowStatus::SingularityReached { t: t1 },
            });
        }
        points.push(FlowPoint {
            t: t1,
            w: WeightVector::new(state.clone())?,
        });
    }
    Ok(FlowTrajectory {
        points,
        status: FlowStatus::Completed,
    })
}
