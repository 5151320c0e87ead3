//! Trajectory records and their CSV form.
//!
//! Reals are written as the shortest decimal that parses back to the same
//! `f64`, so reading a written file reproduces every record bit for bit.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::Phase;
use crate::network::WeightVector;

/// Points sampled along the minima hyperbola in the phase-plot companion file.
pub const HYPERBOLA_POINTS: usize = 512;

/// Columns besides the `d` weights.
const FIXED_COLUMNS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("no records to write")]
    Empty,
    #[error("record {index} has {got} layers, expected {expected}")]
    NonUniform { index: usize, got: usize, expected: usize },
    #[error("pair ({i}, {j}) is out of range for {d} layers")]
    BadPair { i: usize, j: usize, d: usize },
}

/// One emitted state of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub step: u64,
    /// Continuous time; flows only.
    pub t: Option<f64>,
    pub w: WeightVector,
    /// End-to-end weight `W`.
    pub product: f64,
    pub loss: f64,
    /// Max-pair layer imbalance.
    pub imbalance: f64,
    /// Rate used for the step leaving this state (`λ` for flows).
    pub lr: f64,
    pub band_lo: Option<f64>,
    pub band_hi: Option<f64>,
    /// Realized noise for the step leaving this state.
    pub eta: Option<f64>,
    pub phase: Option<Phase>,
}

impl TrajectoryRecord {
    /// Record with the derived columns filled in and the optional ones empty.
    pub fn from_state(step: u64, t: Option<f64>, w: WeightVector, lr: f64) -> Self {
        Self {
            step,
            t,
            product: w.product(),
            loss: w.loss(),
            imbalance: w.layer_imbalance(),
            w,
            lr,
            band_lo: None,
            band_hi: None,
            eta: None,
            phase: None,
        }
    }
}

/// Shortest round-trip decimal. Plain notation for moderate magnitudes,
/// scientific otherwise, so no value needs more than 17 significant digits.
pub fn format_real(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn push_opt(line: &mut String, v: Option<f64>) {
    line.push(',');
    if let Some(v) = v {
        line.push_str(&format_real(v));
    }
}

pub fn header(d: usize) -> String {
    let mut h = String::from("step,t");
    for i in 1..=d {
        let _ = write!(h, ",w_{i}");
    }
    h.push_str(",W,loss,imbalance,lr,band_lo,band_hi,eta,phase");
    h
}

fn format_row(r: &TrajectoryRecord) -> String {
    let mut line = r.step.to_string();
    push_opt(&mut line, r.t);
    for &v in r.w.as_slice() {
        line.push(',');
        line.push_str(&format_real(v));
    }
    for v in [r.product, r.loss, r.imbalance, r.lr] {
        line.push(',');
        line.push_str(&format_real(v));
    }
    push_opt(&mut line, r.band_lo);
    push_opt(&mut line, r.band_hi);
    push_opt(&mut line, r.eta);
    line.push(',');
    if let Some(p) = r.phase {
        line.push_str(p.as_str());
    }
    line
}

fn uniform_dim(records: &[TrajectoryRecord]) -> Result<usize, TrajectoryError> {
    let d = records.first().ok_or(TrajectoryError::Empty)?.w.dim();
    match records.iter().position(|r| r.w.dim() != d) {
        Some(index) => Err(TrajectoryError::NonUniform {
            index,
            got: records[index].w.dim(),
            expected: d,
        }),
        None => Ok(d),
    }
}

pub fn write_trajectory<W: Write>(records: &[TrajectoryRecord], mut out: W) -> Result<(), TrajectoryError> {
    let d = uniform_dim(records)?;
    writeln!(out, "{}", header(d))?;
    for r in records {
        writeln!(out, "{}", format_row(r))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trajectory_csv(records: &[TrajectoryRecord], path: &Path) -> Result<(), TrajectoryError> {
    uniform_dim(records)?;
    write_trajectory(records, BufWriter::new(File::create(path)?))
}

pub fn read_trajectory<R: BufRead>(input: R) -> Result<Vec<TrajectoryRecord>, TrajectoryError> {
    let mut lines = input.lines();
    let head = match lines.next() {
        Some(line) => line?,
        None => {
            return Err(TrajectoryError::Format {
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    let columns = head.split(',').count();
    let d = columns.saturating_sub(FIXED_COLUMNS);
    if d < 2 || head != header(d) {
        return Err(TrajectoryError::Format {
            line: 1,
            message: format!("unrecognized header {head:?}"),
        });
    }
    let mut records = Vec::new();
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        let line = line?;
        records.push(parse_row(&line, d).map_err(|message| TrajectoryError::Format {
            line: line_no,
            message,
        })?);
    }
    Ok(records)
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRecord>, TrajectoryError> {
    read_trajectory(BufReader::new(File::open(path)?))
}

fn parse_row(line: &str, d: usize) -> Result<TrajectoryRecord, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != d + FIXED_COLUMNS {
        return Err(format!("expected {} columns, found {}", d + FIXED_COLUMNS, fields.len()));
    }
    let real = |idx: usize| -> Result<f64, String> {
        fields[idx]
            .parse::<f64>()
            .map_err(|e| format!("column {}: {e} ({:?})", idx + 1, fields[idx]))
    };
    let opt = |idx: usize| -> Result<Option<f64>, String> {
        if fields[idx].is_empty() {
            Ok(None)
        } else {
            real(idx).map(Some)
        }
    };
    let step = fields[0]
        .parse::<u64>()
        .map_err(|e| format!("column 1: {e} ({:?})", fields[0]))?;
    let w = (2..2 + d).map(real).collect::<Result<Vec<_>, _>>()?;
    let w = WeightVector::new(w).map_err(|e| e.to_string())?;
    let base = 2 + d;
    let phase = match fields[base + 7] {
        "" => None,
        s => Some(Phase::parse(s).ok_or_else(|| format!("unknown phase {s:?}"))?),
    };
    Ok(TrajectoryRecord {
        step,
        t: opt(1)?,
        w,
        product: real(base)?,
        loss: real(base + 1)?,
        imbalance: real(base + 2)?,
        lr: real(base + 3)?,
        band_lo: opt(base + 4)?,
        band_hi: opt(base + 5)?,
        eta: opt(base + 6)?,
        phase,
    })
}

/// Path of the hyperbola companion written next to `path`.
pub fn hyperbola_companion(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_hyperbola.csv"))
}

/// Writes `(w_i, w_j)` per record to `path`, and the branch of
/// `w_i · w_j = 1` through the trajectory's final quadrant to the
/// [`hyperbola_companion`] file. Returns the companion path.
pub fn export_phase_plot_data(
    records: &[TrajectoryRecord],
    pair: (usize, usize),
    path: &Path,
) -> Result<PathBuf, TrajectoryError> {
    let d = uniform_dim(records)?;
    let (i, j) = pair;
    if i >= d || j >= d || i == j {
        return Err(TrajectoryError::BadPair { i, j, d });
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "w_{},w_{}", i + 1, j + 1)?;
    for r in records {
        writeln!(out, "{},{}", format_real(r.w[i]), format_real(r.w[j]))?;
    }
    out.flush()?;

    let companion = hyperbola_companion(path);
    let mut out = BufWriter::new(File::create(&companion)?);
    writeln!(out, "w_{},w_{}", i + 1, j + 1)?;
    for (x, y) in hyperbola_samples(records, i, j) {
        writeln!(out, "{},{}", format_real(x), format_real(y))?;
    }
    out.flush()?;
    Ok(companion)
}

/// Log-spaced points on `x y = 1` covering the part of the bounding box in
/// the quadrant of the final state.
fn hyperbola_samples(records: &[TrajectoryRecord], i: usize, j: usize) -> Vec<(f64, f64)> {
    let last = &records[records.len() - 1].w;
    let sign = if last[i] * last[j] < 0.0 || last[i] == 0.0 {
        // Off the manifold's quadrants; fall back to the positive branch.
        1.0
    } else {
        last[i].signum()
    };
    let span = |k: usize| {
        records
            .iter()
            .map(|r| r.w[k].abs())
            .filter(|v| *v > 0.0)
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (xlo, xhi) = span(i);
    let (ylo, yhi) = span(j);
    let (mut lo, mut hi) = (xlo.max(1.0 / yhi), xhi.min(1.0 / ylo));
    if !(lo < hi) {
        (lo, hi) = (xlo, xhi);
    }
    if !(lo < hi) || !lo.is_finite() {
        let c = if lo.is_finite() && lo > 0.0 { lo } else { 1.0 };
        (lo, hi) = (c / 2.0, c * 2.0);
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..HYPERBOLA_POINTS)
        .map(|k| {
            let x = (a + (b - a) * k as f64 / (HYPERBOLA_POINTS - 1) as f64).exp();
            (sign * x, sign / x)
        })
        .collect()
}

/// One line of a run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub run_id: String,
    pub rule: String,
    pub d: usize,
    pub seed: Option<u64>,
    pub lr_policy: String,
    pub mu: Option<f64>,
    pub delta: Option<f64>,
    #[serde(rename = "B")]
    pub batch: Option<usize>,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub steps: u64,
    pub path: String,
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<(), TrajectoryError> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, entries).map_err(io::Error::from)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, TrajectoryError> {
    let file = BufReader::new(File::open(path)?);
    serde_json::from_reader(file).map_err(|e| TrajectoryError::Format {
        line: e.line(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: u64, w: &[f64]) -> TrajectoryRecord {
        TrajectoryRecord::from_state(step, None, WeightVector::new(w.to_vec()).unwrap(), 0.125)
    }

    #[test]
    fn formatting_is_shortest_round_trip() {
        for x in [0.0, -0.0, 0.1, 1.0 / 3.0, 1e-300, 5e-324, 1.7976931348623157e308, 123456.789, -2.5e-7] {
            let s = format_real(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
            let digits = s.chars().filter(|c| c.is_ascii_digit()).count();
            assert!(digits <= 17 + 3, "{s}");
        }
        assert_eq!(format_real(0.1), "0.1");
        assert_eq!(format_real(1e-7), "1e-7");
    }

    #[test]
    fn single_record_file() {
        let mut buf = Vec::new();
        write_trajectory(&[record(0, &[1.2, 1.0])], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.ends_with('\n'));
        assert_eq!(
            text.lines().next().unwrap(),
            "step,t,w_1,w_2,W,loss,imbalance,lr,band_lo,band_hi,eta,phase"
        );
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mut a = record(0, &[1.0 / 3.0, -2.0f64.sqrt(), 1e-9]);
        a.t = Some(0.001);
        a.band_lo = Some(0.9);
        a.band_hi = Some(1.0);
        a.eta = Some(-0.0123);
        a.phase = Some(Phase::Regularization);
        let b = record(1, &[0.5, 7.0, 3.0]);
        let mut buf = Vec::new();
        write_trajectory(&[a.clone(), b.clone()], &mut buf).unwrap();
        let back = read_trajectory(buf.as_slice()).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn format_errors() {
        let empty = read_trajectory(&b""[..]).unwrap_err();
        assert!(matches!(&empty, TrajectoryError::Format { line: 1, message } if message == "missing header"));
        let text = format!("{}\n0,,1,1,1,0,0,0.1,,,,\n1,,1,1,1\n", header(2));
        let err = read_trajectory(text.as_bytes()).unwrap_err();
        assert!(matches!(err, TrajectoryError::Format { line: 3, .. }), "{err}");
        assert!(err.to_string().starts_with("line 3"));
    }

    #[test]
    fn rejects_mixed_dimensions() {
        let err = write_trajectory(&[record(0, &[1.0, 2.0]), record(1, &[1.0, 2.0, 3.0])], Vec::new());
        assert!(matches!(err, Err(TrajectoryError::NonUniform { index: 1, .. })));
        assert!(matches!(write_trajectory(&[], Vec::new()), Err(TrajectoryError::Empty)));
    }

    #[test]
    fn phase_plot_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phase.csv");
        let records = vec![record(0, &[2.0, 0.3]), record(1, &[1.8, 0.5]), record(2, &[1.5, 0.66])];
        let companion = export_phase_plot_data(&records, (0, 1), &path).unwrap();
        assert_eq!(companion, dir.path().join("phase_hyperbola.csv"));
        let main = std::fs::read_to_string(&path).unwrap();
        assert_eq!(main.lines().count(), 4);
        let curve = std::fs::read_to_string(&companion).unwrap();
        let points: Vec<(f64, f64)> = curve
            .lines()
            .skip(1)
            .map(|l| {
                let (a, b) = l.split_once(',').unwrap();
                (a.parse().unwrap(), b.parse().unwrap())
            })
            .collect();
        assert_eq!(points.len(), HYPERBOLA_POINTS);
        for (x, y) in points {
            assert!((x * y - 1.0).abs() < 1e-12);
            assert!((1.5..=2.0 + 1e-12).contains(&x) || (1.0 / 0.66 - 1e-12..=2.0).contains(&x));
        }
        assert!(export_phase_plot_data(&records, (0, 2), &path).is_err());
    }

    #[test]
    fn manifest_uses_upper_case_batch_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let entry = ManifestEntry {
            run_id: "run_000".into(),
            rule: "sgd".into(),
            d: 2,
            seed: Some(3),
            lr_policy: "adaptive".into(),
            mu: None,
            delta: Some(0.5),
            batch: Some(8),
            n: Some(64),
            steps: 100,
            path: "run_000.csv".into(),
        };
        write_manifest(std::slice::from_ref(&entry), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"B\": 8") && text.contains("\"N\": 64"));
        assert_eq!(read_manifest(&path).unwrap(), vec![entry]);
    }
}
