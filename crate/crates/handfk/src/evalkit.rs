//! Evaluation metrics over predicted joint sets: mean 3D joint error,
//! per-joint means, and the fraction-of-frames threshold curve, plus a
//! plain-text plot-data format for external tooling.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::skeleton::{JointSet, JOINT_COUNT};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction/truth length mismatch: {predictions} vs {truths}")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("metrics need at least one frame")]
    EmptyInput,
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("plot data: {0}")]
    Parse(String),
}

/// Error statistics in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Average of the 16 per-joint means.
    pub mean_joint_error_mm: f64,
    /// Mean Euclidean error at each joint over all frames.
    pub per_joint_mean_mm: [f64; JOINT_COUNT],
    /// `(threshold_mm, fraction)` pairs, thresholds ascending. The
    /// fraction counts frames whose worst joint error is at most the
    /// threshold (inclusive), so identical predictions score 1.0 even at
    /// a zero threshold.
    pub threshold_curve: Vec<(f64, f64)>,
}

/// Computes the report for equal-length prediction/truth lists.
pub fn evaluate(
    predictions: &[JointSet],
    truths: &[JointSet],
    thresholds_mm: &[f64],
) -> Result<MetricsReport, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = predictions.len() as f64;

    let mut per_joint_mean_mm = [0.0f64; JOINT_COUNT];
    for (joint, mean) in per_joint_mean_mm.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (pred, truth) in predictions.iter().zip(truths) {
            acc += (pred[joint] - truth[joint]).norm();
        }
        *mean = acc / n;
    }
    let mean_joint_error_mm = per_joint_mean_mm.iter().sum::<f64>() / JOINT_COUNT as f64;

    let max_errors: Vec<f64> = predictions
        .iter()
        .zip(truths)
        .map(|(pred, truth)| {
            (0..JOINT_COUNT)
                .map(|j| (pred[j] - truth[j]).norm())
                .fold(0.0, f64::max)
        })
        .collect();
    let mut thresholds: Vec<f64> = thresholds_mm.to_vec();
    thresholds.sort_by(f64::total_cmp);
    let threshold_curve = thresholds
        .into_iter()
        .map(|t| {
            let within = max_errors.iter().filter(|&&e| e <= t).count();
            (t, within as f64 / n)
        })
        .collect();

    Ok(MetricsReport {
        mean_joint_error_mm,
        per_joint_mean_mm,
        threshold_curve,
    })
}

/// Renders the report as columnar text: one block per curve with a `#`
/// title, a header row, then fixed six-decimal rows. The threshold block
/// is omitted when the curve is empty.
pub fn format_curves(report: &MetricsReport) -> String {
    let mut out = String::new();
    writeln!(out, "# mean_joint_error_mm").unwrap();
    writeln!(out, "mean_mm").unwrap();
    writeln!(out, "{:.6}", report.mean_joint_error_mm).unwrap();
    writeln!(out).unwrap();
    writeln!(out, "# per_joint_mean_mm").unwrap();
    writeln!(out, "joint mean_mm").unwrap();
    for (joint, mean) in report.per_joint_mean_mm.iter().enumerate() {
        writeln!(out, "{joint} {mean:.6}").unwrap();
    }
    if !report.threshold_curve.is_empty() {
        writeln!(out).unwrap();
        writeln!(out, "# threshold_curve").unwrap();
        writeln!(out, "threshold_mm fraction").unwrap();
        for (threshold, fraction) in &report.threshold_curve {
            writeln!(out, "{threshold:.6} {fraction:.6}").unwrap();
        }
    }
    out
}

/// Writes [`format_curves`] output to a file.
pub fn emit_curves(report: &MetricsReport, out_path: &Path) -> Result<(), EvalError> {
    std::fs::write(out_path, format_curves(report))?;
    Ok(())
}

/// Reads the [`format_curves`] format back; values carry the six-decimal
/// formatting precision.
pub fn parse_curves(text: &str) -> Result<MetricsReport, EvalError> {
    let mut mean: Option<f64> = None;
    let mut per_joint: Vec<f64> = Vec::new();
    let mut curve: Vec<(f64, f64)> = Vec::new();
    let mut block = "";
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(title) = line.strip_prefix('#') {
            block = match title.trim() {
                "mean_joint_error_mm" => "mean",
                "per_joint_mean_mm" => "per_joint",
                "threshold_curve" => "curve",
                other => return Err(EvalError::Parse(format!("unknown block {other:?}"))),
            };
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let is_header = fields.iter().any(|f| f.parse::<f64>().is_err());
        if is_header {
            continue;
        }
        let parse = |s: &str| -> Result<f64, EvalError> {
            s.parse()
                .map_err(|_| EvalError::Parse(format!("bad number {s:?}")))
        };
        match (block, fields.as_slice()) {
            ("mean", [v]) => mean = Some(parse(v)?),
            ("per_joint", [joint, v]) => {
                if parse(joint)? as usize != per_joint.len() {
                    return Err(EvalError::Parse(format!("joint rows out of order at {line:?}")));
                }
                per_joint.push(parse(v)?);
            }
            ("curve", [t, f]) => curve.push((parse(t)?, parse(f)?)),
            _ => return Err(EvalError::Parse(format!("unexpected row {line:?}"))),
        }
    }
    let mean_joint_error_mm =
        mean.ok_or_else(|| EvalError::Parse("missing mean block".into()))?;
    if per_joint.len() != JOINT_COUNT {
        return Err(EvalError::Parse(format!(
            "expected {JOINT_COUNT} per-joint rows, found {}",
            per_joint.len()
        )));
    }
    let mut per_joint_mean_mm = [0.0; JOINT_COUNT];
    per_joint_mean_mm.copy_from_slice(&per_joint);
    Ok(MetricsReport {
        mean_joint_error_mm,
        per_joint_mean_mm,
        threshold_curve: curve,
    })
}
