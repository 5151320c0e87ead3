//! `dln`: simulate, sweep and verify scalar deep linear network dynamics.
//!
//! Exit codes: 0 success, 1 configuration error, 2 a run reached a
//! singularity (partial output is still written), 3 a verification suite
//! found violations.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dln_core::experiment::{
    self, ExperimentError, InitSpec, LrSpec, RuleKind, RunConfig, RunStatus, SweepAxis,
};
use dln_core::verify::{run_suite, Suite, VerifyOptions};

const EXIT_CONFIG: u8 = 1;
const EXIT_SINGULAR: u8 = 2;
const EXIT_SUITE_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "dln", version, about = "Training dynamics of scalar deep linear networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory and write its CSV files and manifest.
    Simulate(RunArgs),
    /// Run one trajectory per value of a numeric config field.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Field to vary (mu, delta, B, N, noise_level, seed, lr, steps, t_end, dt, d).
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Run a randomized property suite.
    Verify {
        /// thm1, thm2, thm3, thm4, bands, conservation, divergence, sgd-variance, phases or band-keeping.
        suite: String,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dataset size for sgd-variance.
        #[arg(long = "N", default_value_t = 64)]
        n: usize,
    },
}

/// Run configuration flags; each overrides the matching field of `--config`.
#[derive(Args)]
struct RunArgs {
    /// JSON file with the same field names as the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rule: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    /// `1.2,1.0`, `balanced(c)` or `random(scale[,seed])`.
    #[arg(long)]
    w0: Option<String>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// A number, `adaptive` or `band-keeping`.
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long = "B")]
    batch: Option<usize>,
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long = "noise-level")]
    noise_level: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: e.to_string(),
        }
    }
}

fn config_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

impl RunArgs {
    /// Merges the flags over `--config`; sweeps validate per value instead.
    fn resolve(&self, validate: bool) -> Result<(RunConfig, PathBuf), Failure> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| config_failure(format!("cannot read config {}: {e}", path.display())))?;
                RunConfig::from_json(&text).map_err(|e| config_failure(e.to_string()))?
            }
            None => {
                let rule = self
                    .rule
                    .as_deref()
                    .ok_or_else(|| config_failure("invalid rule: missing (pass --rule or --config)"))?;
                RunConfig::new(rule.parse().map_err(|e| config_failure(format!("invalid rule: {e}")))?)
            }
        };
        if let Some(rule) = &self.rule {
            config.rule = rule
                .parse::<RuleKind>()
                .map_err(|e| config_failure(format!("invalid rule: {e}")))?;
        }
        if let Some(w0) = &self.w0 {
            config.w0 = Some(
                w0.parse::<InitSpec>()
                    .map_err(|e| config_failure(format!("invalid w0: {e}")))?,
            );
        }
        if let Some(lr) = &self.lr {
            config.lr = Some(lr.parse::<LrSpec>().map_err(|e| config_failure(format!("invalid lr: {e}")))?);
        }
        macro_rules! set {
            ($($field:ident),*) => { $( if self.$field.is_some() { config.$field = self.$field.clone(); } )* };
        }
        set!(d, steps, t_end, dt, mu, delta, batch, n, noise_level, seed, out);
        let out = config
            .out
            .clone()
            .ok_or_else(|| config_failure("invalid out: missing output directory"))?;
        if validate {
            config.validate().map_err(|e| config_failure(e.to_string()))?;
        }
        Ok((config, out))
    }
}

fn simulate(args: &RunArgs) -> Result<u8, Failure> {
    let (config, out) = args.resolve(true)?;
    let report = experiment::simulate_to_dir(&config, &out)?;
    println!("{}", report.summary_line());
    Ok(match report.status {
        RunStatus::Completed => 0,
        RunStatus::Singular { step, .. } => {
            eprintln!("singularity reached after {step} steps; partial trajectory written");
            EXIT_SINGULAR
        }
    })
}

fn sweep(args: &RunArgs, axis: &str, values: &[f64]) -> Result<u8, Failure> {
    let (config, out) = args.resolve(false)?;
    let axis: SweepAxis = axis.parse().map_err(|e: experiment::ConfigError| config_failure(e.to_string()))?;
    let reports = experiment::sweep_to_dir(&config, axis, values, &out)?;
    let mut code = 0;
    for r in &reports {
        println!("{}", r.summary_line());
        if let RunStatus::Singular { step, .. } = r.status {
            eprintln!("{}: singularity reached after {step} steps", r.entry.run_id);
            code = EXIT_SINGULAR;
        }
    }
    Ok(code)
}

fn verify(suite: &str, trials: Option<u64>, seed: u64, n: usize) -> Result<u8, Failure> {
    let suite: Suite = suite.parse().map_err(|e: String| config_failure(format!("invalid suite: {e}")))?;
    if trials == Some(0) {
        return Err(config_failure("invalid trials: must be at least 1"));
    }
    let opts = VerifyOptions {
        trials: trials.unwrap_or(suite.default_trials()),
        seed,
        n,
    };
    let report = run_suite(suite, &opts).map_err(|e| config_failure(e.to_string()))?;
    for f in &report.failures {
        eprintln!("violation: {f}");
    }
    println!("{}", report.summary_line());
    Ok(if report.passed() { 0 } else { EXIT_SUITE_FAILED })
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("DLN_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| config_failure(format!("invalid DLN_THREADS: {value:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| config_failure(format!("cannot start {threads} worker threads: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            // Help and version go to stdout, usage errors to stderr.
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Sweep { run, axis, values } => sweep(run, axis, values),
        Command::Verify { suite, trials, seed, n } => verify(suite, *trials, *seed, *n),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
