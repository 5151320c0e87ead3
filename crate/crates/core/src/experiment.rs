//! Config-driven runs: one trajectory per [`RunConfig`], annotated with
//! bands and phases, and parameter sweeps over a single field.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{band_keeping_policy, detect_phases, noise_band, sgd_band, wd_band, Band, BandKind, PhaseDecomposition};
use crate::dataset::Dataset;
use crate::dynamics::flow::{DEFAULT_DT, SINGULARITY_THRESHOLD};
use crate::dynamics::{
    adaptive_lr_gd, adaptive_lr_noise, adaptive_lr_sgd, integrate_flow, step, FlowSpec, FlowStatus, Rule,
};
use crate::error::DlnError;
use crate::network::WeightVector;
use crate::rng::{stream, Purpose};
use crate::trajectory::{
    export_phase_plot_data, write_manifest, write_trajectory_csv, ManifestEntry, TrajectoryError,
    TrajectoryRecord,
};

pub const DEFAULT_INIT_SCALE: f64 = 1.5;
pub const DEFAULT_NOISE_LEVEL: f64 = 0.5;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    Flow,
    FlowWd,
    Gd,
    GdAdaptive,
    Wd,
    Noise,
    Sgd,
}

impl RuleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RuleKind::Flow => "flow",
            RuleKind::FlowWd => "flow-wd",
            RuleKind::Gd => "gd",
            RuleKind::GdAdaptive => "gd-adaptive",
            RuleKind::Wd => "wd",
            RuleKind::Noise => "noise",
            RuleKind::Sgd => "sgd",
        }
    }

    pub fn is_flow(&self) -> bool {
        matches!(self, RuleKind::Flow | RuleKind::FlowWd)
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, RuleKind::Noise | RuleKind::Sgd)
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RuleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| format!("unknown rule {s:?} (expected flow, flow-wd, gd, gd-adaptive, wd, noise or sgd)"))
    }
}

/// How the initial weights are chosen.
///
/// Text forms: `1.2,1.0`, `balanced(c)`, `random`, `random(scale)` and
/// `random(scale,seed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InitRepr", into = "InitRepr")]
pub enum InitSpec {
    Explicit(Vec<f64>),
    Balanced(f64),
    /// Magnitudes uniform in `[scale/3, scale]`; signs flipped in pairs so
    /// `W > 0`. Falls back to the run seed when `seed` is absent.
    Random { scale: f64, seed: Option<u64> },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum InitRepr {
    List(Vec<f64>),
    Text(String),
}

impl TryFrom<InitRepr> for InitSpec {
    type Error = String;

    fn try_from(r: InitRepr) -> Result<Self, String> {
        match r {
            InitRepr::List(v) => Ok(InitSpec::Explicit(v)),
            InitRepr::Text(s) => s.parse(),
        }
    }
}

impl From<InitSpec> for InitRepr {
    fn from(s: InitSpec) -> Self {
        match s {
            InitSpec::Explicit(v) => InitRepr::List(v),
            other => InitRepr::Text(other.to_string()),
        }
    }
}

fn call_args<'a>(s: &'a str, name: &str) -> Option<Vec<&'a str>> {
    let rest = s.strip_prefix(name)?.trim();
    if rest.is_empty() {
        return Some(Vec::new());
    }
    let inner = rest.strip_prefix('(')?.strip_suffix(')')?;
    Some(inner.split(',').map(str::trim).filter(|a| !a.is_empty()).collect())
}

impl FromStr for InitSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let num = |a: &str| a.parse::<f64>().map_err(|e| format!("bad number {a:?}: {e}"));
        if let Some(args) = call_args(s, "balanced") {
            return match args.as_slice() {
                [c] => Ok(InitSpec::Balanced(num(c)?)),
                _ => Err("balanced takes one value, e.g. balanced(1.1)".into()),
            };
        }
        if let Some(args) = call_args(s, "random") {
            return match args.as_slice() {
                [] => Ok(InitSpec::Random { scale: DEFAULT_INIT_SCALE, seed: None }),
                [scale] => Ok(InitSpec::Random { scale: num(scale)?, seed: None }),
                [scale, seed] => Ok(InitSpec::Random {
                    scale: num(scale)?,
                    seed: Some(seed.parse().map_err(|e| format!("bad seed {seed:?}: {e}"))?),
                }),
                _ => Err("random takes at most two values, e.g. random(1.5,7)".into()),
            };
        }
        s.split(',').map(|a| num(a.trim())).collect::<Result<Vec<_>, _>>().map(InitSpec::Explicit)
    }
}

impl fmt::Display for InitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitSpec::Explicit(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                f.write_str(&parts.join(","))
            }
            InitSpec::Balanced(c) => write!(f, "balanced({c})"),
            InitSpec::Random { scale, seed: None } => write!(f, "random({scale})"),
            InitSpec::Random { scale, seed: Some(s) } => write!(f, "random({scale},{s})"),
        }
    }
}

/// Learning-rate policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LrRepr", into = "LrRepr")]
pub enum LrSpec {
    Fixed(f64),
    /// The rule's own formula: GD rate for gd, gd-adaptive and wd, the noise
    /// rate for noise, the SGD rate (with `delta`) for sgd.
    Adaptive,
    /// GD rate adjusted to keep `|W - 1|` in `[1/4, 1/2]`; gd only.
    BandKeeping,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LrRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<LrRepr> for LrSpec {
    type Error = String;

    fn try_from(r: LrRepr) -> Result<Self, String> {
        match r {
            LrRepr::Number(v) => Ok(LrSpec::Fixed(v)),
            LrRepr::Text(s) => s.parse(),
        }
    }
}

impl From<LrSpec> for LrRepr {
    fn from(s: LrSpec) -> Self {
        match s {
            LrSpec::Fixed(v) => LrRepr::Number(v),
            other => LrRepr::Text(other.policy_name().to_owned()),
        }
    }
}

impl FromStr for LrSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "adaptive" => Ok(LrSpec::Adaptive),
            "band-keeping" => Ok(LrSpec::BandKeeping),
            other => other
                .parse::<f64>()
                .map(LrSpec::Fixed)
                .map_err(|_| format!("expected a number, `adaptive` or `band-keeping`, got {other:?}")),
        }
    }
}

impl LrSpec {
    pub fn policy_name(&self) -> &'static str {
        match self {
            LrSpec::Fixed(_) => "fixed",
            LrSpec::Adaptive => "adaptive",
            LrSpec::BandKeeping => "band-keeping",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid {field}: {message}")]
pub struct ConfigError {
    pub field: &'static str,
    pub message: String,
}

fn config_err(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field,
        message: message.into(),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] DlnError),
    #[error(transparent)]
    Output(#[from] TrajectoryError),
}

/// Everything needed to run one trajectory. Field names match the CLI flags
/// and the JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub rule: RuleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w0: Option<InitSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<LrSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(rule: RuleKind) -> Self {
        Self {
            rule,
            d: None,
            w0: None,
            steps: None,
            t_end: None,
            dt: None,
            lr: None,
            mu: None,
            delta: None,
            batch: None,
            n: None,
            noise_level: None,
            seed: None,
            out: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| config_err("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.plan().map(|_| ())
    }

    fn plan(&self) -> Result<Plan, ConfigError> {
        let rule = self.rule;
        if rule.is_stochastic() && self.seed.is_none() {
            return Err(config_err("seed", format!("rule {rule} is stochastic and needs a seed")));
        }
        let w0 = self.initial_weights()?;

        let mu = match rule {
            RuleKind::FlowWd | RuleKind::Wd => {
                let mu = self.mu.ok_or_else(|| config_err("mu", format!("rule {rule} needs mu")))?;
                if !(mu >= 0.0 && mu.is_finite()) {
                    return Err(config_err("mu", format!("must be finite and non-negative, got {mu}")));
                }
                mu
            }
            _ => 0.0,
        };

        let lr = match (rule, self.lr) {
            (_, Some(LrSpec::Fixed(v))) if !(v > 0.0 && v.is_finite()) => {
                return Err(config_err("lr", format!("must be positive, got {v}")));
            }
            (RuleKind::Flow | RuleKind::FlowWd, None) => LrSpec::Fixed(1.0),
            (RuleKind::Flow | RuleKind::FlowWd, Some(LrSpec::Fixed(v))) => LrSpec::Fixed(v),
            (RuleKind::Flow | RuleKind::FlowWd, Some(_)) => {
                return Err(config_err("lr", "flows take a fixed speed lambda"));
            }
            (RuleKind::Gd, None) => {
                return Err(config_err("lr", "gd needs a number, `adaptive` or `band-keeping`"));
            }
            (RuleKind::Gd, Some(lr)) => lr,
            (RuleKind::GdAdaptive, None | Some(LrSpec::Adaptive)) => LrSpec::Adaptive,
            (RuleKind::GdAdaptive, Some(_)) => {
                return Err(config_err("lr", "gd-adaptive always uses the adaptive rate"));
            }
            (_, Some(LrSpec::BandKeeping)) => {
                return Err(config_err("lr", "band-keeping applies to gd only"));
            }
            (_, None) => LrSpec::Adaptive,
            (_, Some(lr)) => lr,
        };

        let delta = match rule {
            RuleKind::Noise => {
                let delta = self.delta.ok_or_else(|| config_err("delta", "rule noise needs delta"))?;
                if !(delta > 0.0 && delta < 0.5) {
                    return Err(config_err("delta", format!("must lie in (0, 1/2), got {delta}")));
                }
                Some(delta)
            }
            RuleKind::Sgd if lr == LrSpec::Adaptive => {
                let delta = self
                    .delta
                    .ok_or_else(|| config_err("delta", "adaptive sgd needs delta"))?;
                if !(delta > 0.0 && delta < 1.0) {
                    return Err(config_err("delta", format!("must lie in (0, 1), got {delta}")));
                }
                Some(delta)
            }
            _ => self.delta,
        };

        let data = if rule == RuleKind::Sgd {
            let n = self.n.ok_or_else(|| config_err("N", "rule sgd needs N"))?;
            let batch = self.batch.ok_or_else(|| config_err("B", "rule sgd needs B"))?;
            if n < 2 {
                return Err(config_err("N", format!("need at least 2 samples, got {n}")));
            }
            if batch == 0 || batch > n {
                return Err(config_err("B", format!("need 1 <= B <= N = {n}, got {batch}")));
            }
            let noise_level = self.noise_level.unwrap_or(DEFAULT_NOISE_LEVEL);
            if !(noise_level >= 0.0 && noise_level.is_finite()) {
                return Err(config_err("noise_level", format!("must be non-negative, got {noise_level}")));
            }
            Some((n, batch, noise_level))
        } else {
            None
        };

        let horizon = if rule.is_flow() {
            let t_end = self
                .t_end
                .ok_or_else(|| config_err("t_end", format!("rule {rule} needs t_end")))?;
            let dt = self.dt.unwrap_or(DEFAULT_DT);
            let LrSpec::Fixed(lambda) = lr else { unreachable!("flows resolve to a fixed speed") };
            let spec = if rule == RuleKind::FlowWd {
                FlowSpec::weight_decay(lambda, mu, t_end, dt)
            } else {
                FlowSpec::plain(lambda, t_end, dt)
            };
            spec.validate().map_err(|e| config_err("t_end", e.to_string()))?;
            Horizon::Flow(spec)
        } else {
            Horizon::Steps(self.steps.ok_or_else(|| config_err("steps", format!("rule {rule} needs steps")))?)
        };

        Ok(Plan {
            rule,
            w0,
            horizon,
            lr,
            mu,
            delta,
            data,
            seed: self.seed.unwrap_or(0),
        })
    }

    fn initial_weights(&self) -> Result<WeightVector, ConfigError> {
        let spec = self.w0.clone().unwrap_or(InitSpec::Random {
            scale: DEFAULT_INIT_SCALE,
            seed: None,
        });
        let dim = |explicit: Option<usize>| -> Result<usize, ConfigError> {
            match (self.d, explicit) {
                (Some(d), Some(e)) if d != e => Err(config_err("d", format!("d = {d} but w0 has {e} entries"))),
                (_, Some(e)) => Ok(e),
                (Some(d), None) => Ok(d),
                (None, None) => Err(config_err("d", "needed unless w0 lists the weights")),
            }
        };
        let to_err = |e: DlnError| config_err("w0", e.to_string());
        match spec {
            InitSpec::Explicit(v) => {
                dim(Some(v.len()))?;
                let w = WeightVector::new(v).map_err(to_err)?;
                w.ensure_nonzero().map_err(to_err)?;
                Ok(w)
            }
            InitSpec::Balanced(c) => {
                if c == 0.0 {
                    return Err(config_err("w0", "balanced value must be nonzero"));
                }
                WeightVector::balanced(dim(None)?, c).map_err(to_err)
            }
            InitSpec::Random { scale, seed } => {
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(config_err("w0", format!("random scale must be positive, got {scale}")));
                }
                let seed = seed
                    .or(self.seed)
                    .ok_or_else(|| config_err("seed", "random initialization needs a seed"))?;
                random_init(dim(None)?, scale, seed).map_err(to_err)
            }
        }
    }
}

/// Magnitudes uniform in `[scale/3, scale]`, with signs flipped in pairs.
///
/// Drawn from the initialization stream of `(seed, run 0)`, so every run of
/// a sweep starts from the same point unless the seed itself is swept.
pub fn random_init(d: usize, scale: f64, seed: u64) -> crate::error::Result<WeightVector> {
    let mut rng = stream(seed, 0, Purpose::Init);
    let mut w: Vec<f64> = (0..d).map(|_| rng.random_range(scale / 3.0..=scale)).collect();
    for pair in w.chunks_mut(2) {
        if pair.len() == 2 && rng.random_bool(0.5) {
            pair[0] = -pair[0];
            pair[1] = -pair[1];
        }
    }
    WeightVector::new(w)
}

enum Horizon {
    Steps(u64),
    Flow(FlowSpec),
}

struct Plan {
    rule: RuleKind,
    w0: WeightVector,
    horizon: Horizon,
    lr: LrSpec,
    mu: f64,
    delta: Option<f64>,
    data: Option<(usize, usize, f64)>,
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunStatus {
    Completed,
    /// A layer reached zero (or the iterate stopped being finite) after
    /// `step` steps; the records up to there are kept.
    Singular { step: u64, t: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<TrajectoryRecord>,
    pub status: RunStatus,
    pub phases: Option<PhaseDecomposition>,
    /// Training data of sgd runs.
    pub dataset: Option<Dataset>,
}

impl RunOutput {
    pub fn steps_taken(&self) -> u64 {
        self.records.len() as u64 - 1
    }
}

/// Band that contains nothing; stands in where no band is defined.
const NO_BAND: Band = Band {
    lo: 1.0,
    hi: 1.0,
    kind: BandKind::Noise,
};

/// Runs `config` as run number `run` of its seed. The noise and batch
/// streams are keyed by `(seed, run)`.
pub fn run(config: &RunConfig, run: u64) -> Result<RunOutput, ExperimentError> {
    let plan = config.plan()?;
    let mut out = match &plan.horizon {
        Horizon::Flow(spec) => run_flow(&plan, spec)?,
        Horizon::Steps(n) => run_discrete(&plan, *n, run)?,
    };
    annotate(&plan, &mut out)?;
    Ok(out)
}

fn run_flow(plan: &Plan, spec: &FlowSpec) -> Result<RunOutput, ExperimentError> {
    let traj = integrate_flow(&plan.w0, spec)?;
    let records: Vec<TrajectoryRecord> = traj
        .points
        .into_iter()
        .enumerate()
        .map(|(k, p)| TrajectoryRecord::from_state(k as u64, Some(p.t), p.w, spec.lambda))
        .collect();
    let status = match traj.status {
        FlowStatus::Completed => RunStatus::Completed,
        FlowStatus::SingularityReached { t } => RunStatus::Singular {
            step: records.len() as u64,
            t: Some(t),
        },
    };
    Ok(RunOutput {
        records,
        status,
        phases: None,
        dataset: None,
    })
}

fn run_discrete(plan: &Plan, steps: u64, run: u64) -> Result<RunOutput, ExperimentError> {
    let dataset = match plan.data {
        Some((n, _, noise_level)) => Some(Dataset::generate(n, noise_level, plan.seed)?),
        None => None,
    };
    let mut noise_rng = stream(plan.seed, run, Purpose::Noise);
    let mut batch_rng = stream(plan.seed, run, Purpose::Batches);

    let mut lr_state = match plan.lr {
        LrSpec::BandKeeping => adaptive_lr_gd(&plan.w0)?,
        LrSpec::Fixed(v) => v,
        LrSpec::Adaptive => f64::NAN,
    };
    let lr_at = |w: &WeightVector, prev: f64| -> crate::error::Result<f64> {
        match plan.lr {
            LrSpec::Fixed(v) => Ok(v),
            LrSpec::BandKeeping => band_keeping_policy(w, prev),
            LrSpec::Adaptive => match plan.rule {
                RuleKind::Noise => adaptive_lr_noise(w),
                RuleKind::Sgd => adaptive_lr_sgd(w, plan.delta.expect("validated")),
                _ => adaptive_lr_gd(w),
            },
        }
    };

    let mut records = Vec::with_capacity(steps as usize + 1);
    let mut w = plan.w0.clone();
    let mut status = RunStatus::Completed;
    for k in 0..steps {
        let lr = match lr_at(&w, lr_state) {
            Ok(lr) => lr,
            Err(_) => {
                status = RunStatus::Singular { step: k, t: None };
                break;
            }
        };
        lr_state = lr;
        let (rule, eta) = match plan.rule {
            RuleKind::Noise => {
                let delta = plan.delta.expect("validated");
                let eta = noise_rng.random_range(-delta..=delta);
                (Rule::Noise { eta }, Some(eta))
            }
            RuleKind::Sgd => {
                let ds = dataset.as_ref().expect("sgd has data");
                let (_, batch, _) = plan.data.expect("validated");
                let b = ds.sample_batch(batch, &mut batch_rng)?;
                let eta = ds.noise_decomposition(&b).combined(w.product());
                (Rule::Sgd { eta }, Some(eta))
            }
            RuleKind::Wd => (Rule::WeightDecay { mu: plan.mu }, None),
            _ => (Rule::Gd, None),
        };
        let mut rec = TrajectoryRecord::from_state(k, None, w.clone(), lr);
        rec.eta = eta;
        records.push(rec);
        match step(&w, lr, rule) {
            // Weights can stay finite while their product overflows.
            Ok(o) if o.w_next.loss().is_finite() => w = o.w_next,
            Ok(_) | Err(DlnError::NonFiniteStep) => {
                status = RunStatus::Singular { step: k + 1, t: None };
                break;
            }
            Err(e) => return Err(e.into()),
        }
        if w.as_slice().iter().any(|v| v.abs() < SINGULARITY_THRESHOLD) {
            status = RunStatus::Singular { step: k + 1, t: None };
            let lr = lr_at(&w, lr_state).unwrap_or(lr_state);
            records.push(TrajectoryRecord::from_state(k + 1, None, w.clone(), lr));
            break;
        }
    }
    if status == RunStatus::Completed {
        let lr = lr_at(&w, lr_state).unwrap_or(lr_state);
        records.push(TrajectoryRecord::from_state(steps, None, w, lr));
    }
    if records.is_empty() {
        records.push(TrajectoryRecord::from_state(0, None, plan.w0.clone(), lr_state));
    }
    Ok(RunOutput {
        records,
        status,
        phases: None,
        dataset,
    })
}

/// Fills the band and phase columns for rules that have a band.
fn annotate(plan: &Plan, out: &mut RunOutput) -> Result<(), ExperimentError> {
    let band_of = |r: &TrajectoryRecord| -> crate::error::Result<Option<Band>> {
        Ok(match plan.rule {
            RuleKind::Wd | RuleKind::FlowWd if r.product > 0.0 => Some(wd_band(&r.w, plan.mu)?),
            RuleKind::Noise => Some(noise_band(plan.delta.expect("validated"))?),
            RuleKind::Sgd => r.eta.map(sgd_band),
            _ => None,
        })
    };
    if !matches!(plan.rule, RuleKind::Wd | RuleKind::FlowWd | RuleKind::Noise | RuleKind::Sgd) {
        return Ok(());
    }
    let mut bands = Vec::with_capacity(out.records.len());
    for r in &mut out.records {
        let band = band_of(r)?;
        if let Some(b) = band {
            r.band_lo = Some(b.lo);
            r.band_hi = Some(b.hi);
        }
        bands.push(band.unwrap_or(NO_BAND));
    }
    let products: Vec<f64> = out.records.iter().map(|r| r.product).collect();
    let phases = detect_phases(&products, &bands)?;
    for (r, p) in out.records.iter_mut().zip(&phases.phases) {
        r.phase = Some(*p);
    }
    out.phases = Some(phases);
    Ok(())
}

/// The numeric [`RunConfig`] field a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Mu,
    Delta,
    Batch,
    N,
    NoiseLevel,
    Seed,
    Lr,
    Steps,
    TEnd,
    Dt,
    D,
}

impl FromStr for SweepAxis {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Ok(match s {
            "mu" => SweepAxis::Mu,
            "delta" => SweepAxis::Delta,
            "B" => SweepAxis::Batch,
            "N" => SweepAxis::N,
            "noise_level" | "noise-level" => SweepAxis::NoiseLevel,
            "seed" => SweepAxis::Seed,
            "lr" => SweepAxis::Lr,
            "steps" => SweepAxis::Steps,
            "t_end" | "t-end" => SweepAxis::TEnd,
            "dt" => SweepAxis::Dt,
            "d" => SweepAxis::D,
            other => return Err(config_err("axis", format!("{other:?} is not a numeric config field"))),
        })
    }
}

impl SweepAxis {
    pub fn apply(&self, config: &mut RunConfig, value: f64) -> Result<(), ConfigError> {
        let count = |field: &'static str| -> Result<u64, ConfigError> {
            if value >= 0.0 && value.fract() == 0.0 && value < 9.0e15 {
                Ok(value as u64)
            } else {
                Err(config_err(field, format!("{value} is not a non-negative integer")))
            }
        };
        match self {
            SweepAxis::Mu => config.mu = Some(value),
            SweepAxis::Delta => config.delta = Some(value),
            SweepAxis::Batch => config.batch = Some(count("B")? as usize),
            SweepAxis::N => config.n = Some(count("N")? as usize),
            SweepAxis::NoiseLevel => config.noise_level = Some(value),
            SweepAxis::Seed => config.seed = Some(count("seed")?),
            SweepAxis::Lr => config.lr = Some(LrSpec::Fixed(value)),
            SweepAxis::Steps => config.steps = Some(count("steps")?),
            SweepAxis::TEnd => config.t_end = Some(value),
            SweepAxis::Dt => config.dt = Some(value),
            SweepAxis::D => config.d = Some(count("d")? as usize),
        }
        Ok(())
    }
}

/// Configs of a sweep, validated before anything runs.
pub fn sweep_configs(base: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<RunConfig>, ConfigError> {
    if values.is_empty() {
        return Err(config_err("values", "a sweep needs at least one value"));
    }
    values
        .iter()
        .map(|&v| {
            let mut c = base.clone();
            axis.apply(&mut c, v)?;
            c.validate()?;
            Ok(c)
        })
        .collect()
}

/// Runs every value of the sweep in parallel; run `k` uses run index `k`.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<RunOutput>, ExperimentError> {
    let configs = sweep_configs(base, axis, values)?;
    configs
        .par_iter()
        .enumerate()
        .map(|(k, c)| run(c, k as u64))
        .collect()
}

/// Written files and status of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub entry: ManifestEntry,
    pub status: RunStatus,
    pub final_loss: f64,
    pub final_imbalance: f64,
}

impl RunReport {
    /// The one-line summary printed per run.
    pub fn summary_line(&self) -> String {
        let status = match self.status {
            RunStatus::Completed => "completed".to_owned(),
            RunStatus::Singular { step, .. } => format!("singular at step {step}"),
        };
        format!(
            "{}: rule={} d={} steps={} status={} final_loss={:e} final_imbalance={:e} path={}",
            self.entry.run_id,
            self.entry.rule,
            self.entry.d,
            self.entry.steps,
            status,
            self.final_loss,
            self.final_imbalance,
            self.entry.path
        )
    }
}

/// Writes `<run_id>.csv`, the phase-plot pair `<run_id>_phase.csv` and
/// `<run_id>_phase_hyperbola.csv`, and for sgd `<run_id>_dataset.csv`.
pub fn write_run(dir: &Path, run_id: &str, config: &RunConfig, output: &RunOutput) -> Result<RunReport, ExperimentError> {
    let csv = format!("{run_id}.csv");
    write_trajectory_csv(&output.records, &dir.join(&csv))?;
    export_phase_plot_data(&output.records, (0, 1), &dir.join(format!("{run_id}_phase.csv")))?;
    if let Some(ds) = &output.dataset {
        let file = fs::File::create(dir.join(format!("{run_id}_dataset.csv"))).map_err(TrajectoryError::from)?;
        ds.write_csv(std::io::BufWriter::new(file)).map_err(TrajectoryError::from)?;
    }
    let last = output.records.last().expect("runs keep their start");
    let plan_lr = config.plan()?.lr;
    Ok(RunReport {
        entry: ManifestEntry {
            run_id: run_id.to_owned(),
            rule: config.rule.to_string(),
            d: last.w.dim(),
            seed: config.seed,
            lr_policy: plan_lr.policy_name().to_owned(),
            mu: config.mu,
            delta: config.delta,
            batch: config.batch,
            n: config.n,
            steps: output.steps_taken(),
            path: csv,
        },
        status: output.status,
        final_loss: last.loss,
        final_imbalance: last.imbalance,
    })
}

fn prepare_dir(dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| ExperimentError::Output(e.into()))
}

/// Runs one config and writes its files plus a one-entry manifest to `dir`.
pub fn simulate_to_dir(config: &RunConfig, dir: &Path) -> Result<RunReport, ExperimentError> {
    config.validate()?;
    prepare_dir(dir)?;
    let output = run(config, 0)?;
    let report = write_run(dir, "trajectory", config, &output)?;
    write_manifest(std::slice::from_ref(&report.entry), &dir.join(MANIFEST_FILE))?;
    Ok(report)
}

/// Runs a sweep and writes `run_000.csv`, `run_001.csv`, … plus the manifest.
pub fn sweep_to_dir(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    dir: &Path,
) -> Result<Vec<RunReport>, ExperimentError> {
    let configs = sweep_configs(base, axis, values)?;
    prepare_dir(dir)?;
    let width = configs.len().saturating_sub(1).to_string().len().max(3);
    let reports = configs
        .par_iter()
        .enumerate()
        .map(|(k, c)| {
            let output = run(c, k as u64)?;
            write_run(dir, &format!("run_{k:0width$}"), c, &output)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let entries: Vec<ManifestEntry> = reports.iter().map(|r| r.entry.clone()).collect();
    write_manifest(&entries, &dir.join(MANIFEST_FILE))?;
    Ok(reports)
}
