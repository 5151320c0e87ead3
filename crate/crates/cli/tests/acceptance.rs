//! Acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness: prints `PASS` or `FAIL` for each
//! criterion and exits non-zero if any failed.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use dln_core::dynamics::{integrate_flow, FlowSpec};
use dln_core::rng::{stream, Purpose};
use dln_core::verify::{run_suite, Suite, SuiteReport, VerifyOptions};
use dln_core::WeightVector;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

const SEED: u64 = 20_240_601;

struct Outcome {
    passed: bool,
    detail: String,
}

fn suite(s: Suite, trials: u64, budget: Option<Duration>) -> Outcome {
    let start = Instant::now();
    let report = run_suite(s, &VerifyOptions { trials, seed: SEED, n: 64 });
    let elapsed = start.elapsed();
    match report {
        Ok(r) => suite_outcome(&r, elapsed, budget),
        Err(e) => Outcome {
            passed: false,
            detail: format!("suite error: {e}"),
        },
    }
}

fn suite_outcome(r: &SuiteReport, elapsed: Duration, budget: Option<Duration>) -> Outcome {
    let in_time = budget.is_none_or(|b| elapsed <= b);
    let mut detail = format!("{} ({:.2} s", r.summary_line(), elapsed.as_secs_f64());
    if let Some(b) = budget {
        detail.push_str(&format!(", budget {} s", b.as_secs()));
    }
    detail.push(')');
    for f in &r.failures {
        detail.push_str(&format!("\n    {f}"));
    }
    Outcome {
        passed: r.passed() && in_time,
        detail,
    }
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

/// Weight-decay flow imbalance against `D(0) e^{-4λμt}` at `t = 1`.
fn wd_decay() -> Outcome {
    let mut rng = stream(SEED, 6, Purpose::Trials);
    let mut starts = vec![WeightVector::new(vec![1.5, 0.7]).unwrap()];
    for _ in 0..9 {
        let d = rng.random_range(2..=4);
        starts.push(WeightVector::new((0..d).map(|_| rng.random_range(0.3..2.0)).collect()).unwrap());
    }
    let mut worst = 0.0f64;
    for w0 in &starts {
        for (lambda, mu) in [(0.05, 0.05), (0.05, 0.1), (0.1, 0.05), (0.1, 0.1)] {
            let traj = integrate_flow(w0, &FlowSpec::weight_decay(lambda, mu, 1.0, 1e-3)).unwrap();
            let end = traj.last();
            for (i, j) in w0.pairs() {
                let d0 = w0.pairwise_imbalance(i, j).unwrap();
                if d0.abs() < 1e-3 {
                    continue;
                }
                let expect = d0 * (-4.0 * lambda * mu * end.t).exp();
                let rel = ((end.w.pairwise_imbalance(i, j).unwrap() - expect) / expect).abs();
                worst = worst.max(rel);
            }
        }
    }
    Outcome {
        passed: worst <= 1e-6,
        detail: format!("worst relative error {worst:.3e} over {} starts (tolerance 1e-6)", starts.len()),
    }
}

fn loss_at(w: &[f64]) -> f64 {
    let p: f64 = w.iter().product();
    (p - 1.0) * (p - 1.0)
}

fn moved(w: &[f64], moves: &[(usize, f64)]) -> f64 {
    let mut v = w.to_vec();
    for &(i, h) in moves {
        v[i] += h;
    }
    loss_at(&v)
}

/// Central second difference of the loss in coordinates `i`, `j` with steps
/// relative to the coordinates.
fn second_difference(v: &[f64], i: usize, j: usize, rel: f64) -> f64 {
    let hi = rel * v[i].abs();
    if i == j {
        return (moved(v, &[(i, hi)]) - 2.0 * loss_at(v) + moved(v, &[(i, -hi)])) / (hi * hi);
    }
    let hj = rel * v[j].abs();
    (moved(v, &[(i, hi), (j, hj)]) - moved(v, &[(i, hi), (j, -hj)]) - moved(v, &[(i, -hi), (j, hj)])
        + moved(v, &[(i, -hi), (j, -hj)]))
        / (4.0 * hi * hj)
}

/// Cancels the `h²` error term of a second-order difference quotient.
fn richardson(f: impl Fn(f64) -> f64) -> f64 {
    let (coarse, fine) = (f(2e-3), f(1e-3));
    (4.0 * fine - coarse) / 3.0
}

/// Finite-difference gradient and Hessian, and the spectrum on the manifold.
fn oracles() -> Outcome {
    let mut rng = stream(SEED, 7, Purpose::Trials);
    let (mut grad_worst, mut hess_worst, mut spec_worst) = (0.0f64, 0.0f64, 0.0f64);
    let mut rank_ok = true;
    for _ in 0..1000 {
        let d = rng.random_range(2..=8);
        let v: Vec<f64> = (0..d)
            .map(|_| {
                let x: f64 = rng.random_range(0.1..=3.0);
                if rng.random_bool(0.5) {
                    -x
                } else {
                    x
                }
            })
            .collect();
        let w = WeightVector::new(v.clone()).unwrap();

        let g = w.gradient().unwrap();
        for i in 0..d {
            let h = 1e-6 * v[i].abs();
            let fd = (moved(&v, &[(i, h)]) - moved(&v, &[(i, -h)])) / (2.0 * h);
            grad_worst = grad_worst.max((fd - g[i]).abs() / g[i].abs());
        }

        let hess = w.hessian().unwrap();
        let floor = 1e-2 * (loss_at(&v) + 1.0);
        for i in 0..d {
            for j in 0..=i {
                let fd = richardson(|s| second_difference(&v, i, j, s));
                let exact = hess.get(i, j);
                hess_worst = hess_worst.max((fd - exact).abs() / exact.abs().max(floor));
            }
        }

        let mut m = v.clone();
        m[d - 1] = 1.0 / v[..d - 1].iter().product::<f64>();
        let on = WeightVector::new(m).unwrap();
        let h = on.hessian().unwrap();
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, h.row_major()));
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
        let expected = 2.0 * on.inv_sq_sum().unwrap();
        spec_worst = spec_worst.max(((vals[0] - expected) / expected).abs());
        rank_ok &= vals[1..].iter().all(|x| x.abs() < 1e-10 * vals[0]);
    }
    Outcome {
        passed: grad_worst <= 1e-5 && hess_worst <= 1e-4 && spec_worst <= 1e-8 && rank_ok,
        detail: format!(
            "gradient {grad_worst:.2e} (tol 1e-5), hessian {hess_worst:.2e} (tol 1e-4), \
             top eigenvalue {spec_worst:.2e} (tol 1e-8), rank one: {rank_ok}"
        ),
    }
}

fn simulate(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dln"))
        .arg("simulate")
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let configs: [&[&str]; 3] = [
        &["--rule", "sgd", "--d", "2", "--N", "64", "--B", "8", "--seed", "3", "--steps", "500", "--delta", "0.5"],
        &["--rule", "noise", "--d", "3", "--delta", "0.3", "--seed", "5", "--steps", "500"],
        &["--rule", "flow-wd", "--w0", "random(1.5,9)", "--d", "2", "--mu", "0.1", "--t-end", "2"],
    ];
    let tmp = tempfile::tempdir().unwrap();
    let mut notes = Vec::new();
    let mut passed = true;
    for (k, args) in configs.iter().enumerate() {
        let (a, b) = (tmp.path().join(format!("a{k}")), tmp.path().join(format!("b{k}")));
        let (ra, rb) = (simulate(&a, args), simulate(&b, args));
        let same = ra.status.success() && rb.status.success() && dir_bytes(&a) == dir_bytes(&b);
        passed &= same;
        notes.push(format!("{}: {}", args[1], if same { "identical" } else { "DIFFERENT" }));
    }
    Outcome {
        passed,
        detail: notes.join(", "),
    }
}

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check); 11] = [
        ("loss contraction under adaptive GD", || suite(Suite::Thm1, 10_000, secs(10))),
        ("imbalance contraction under adaptive GD", || suite(Suite::Thm2, 10_000, secs(10))),
        ("imbalance under noise-augmented GD", || suite(Suite::Thm3, 1000, secs(30))),
        ("imbalance under SGD", || suite(Suite::Thm4, 1000, secs(30))),
        ("hyperbola conservation of RK4 flow", || suite(Suite::Conservation, 100, None)),
        ("weight-decay flow imbalance decay", wd_decay),
        ("gradient, Hessian and spectrum oracles", oracles),
        ("fixed-rate divergence witness", || suite(Suite::Divergence, 20, None)),
        ("SGD noise variance scaling", || suite(Suite::SgdVariance, 100_000, None)),
        ("two-phase structure", || suite(Suite::Phases, 50, None)),
        ("byte-identical reruns", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let out = check();
        if !out.passed {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {name}: {}",
            k + 1,
            if out.passed { "PASS" } else { "FAIL" },
            out.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
