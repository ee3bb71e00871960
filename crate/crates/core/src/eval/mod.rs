//! One-pass evaluation: precision and success curves, their summaries, and
//! the driver that runs the tracker over a set of sequences.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::synth::Sequence;
use crate::tracker::{run_sequence, Models, Variant};

/// Center-error thresholds `0..=50` px.
pub const PRECISION_THRESHOLDS: usize = 51;
/// Overlap thresholds `i / 20` for `i in 0..=20`.
pub const SUCCESS_THRESHOLDS: usize = 21;
pub const DP_THRESHOLD: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: Vec<f64>,
    pub success: Vec<f64>,
    pub dp20: f64,
    pub auc: f64,
    /// Tracker initialization failed; curves are all zero.
    pub failed: bool,
}

pub fn success_threshold(i: usize) -> f64 {
    i as f64 / (SUCCESS_THRESHOLDS - 1) as f64
}

fn check_lengths(pred: &[BBox], gt: &[BBox]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(Error::Config("cannot evaluate an empty sequence".into()));
    }
    Ok(())
}

/// Fraction of frames with center distance `<= θ` for every θ, and DP@20.
pub fn precision_curve(pred: &[BBox], gt: &[BBox]) -> Result<(Vec<f64>, f64)> {
    check_lengths(pred, gt)?;
    let d: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| p.center_distance(g)).collect();
    let n = d.len() as f64;
    let curve: Vec<f64> = (0..PRECISION_THRESHOLDS)
        .map(|th| d.iter().filter(|&&x| x <= th as f64).count() as f64 / n)
        .collect();
    let dp = curve[DP_THRESHOLD];
    Ok((curve, dp))
}

/// Fraction of frames with IoU `> θ` on the 21-point grid, and its mean.
pub fn success_curve(pred: &[BBox], gt: &[BBox]) -> Result<(Vec<f64>, f64)> {
    check_lengths(pred, gt)?;
    let o: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| iou(p, g)).collect();
    let n = o.len() as f64;
    let curve: Vec<f64> = (0..SUCCESS_THRESHOLDS)
        .map(|i| o.iter().filter(|&&x| x > success_threshold(i)).count() as f64 / n)
        .collect();
    let auc = curve.iter().sum::<f64>() / SUCCESS_THRESHOLDS as f64;
    Ok((curve, auc))
}

pub fn evaluate(pred: &[BBox], gt: &[BBox]) -> Result<EvalResult> {
    let (precision, dp20) = precision_curve(pred, gt)?;
    let (success, auc) = success_curve(pred, gt)?;
    Ok(EvalResult { precision, success, dp20, auc, failed: false })
}

impl EvalResult {
    pub fn failure() -> Self {
        Self {
            precision: vec![0.0; PRECISION_THRESHOLDS],
            success: vec![0.0; SUCCESS_THRESHOLDS],
            dp20: 0.0,
            auc: 0.0,
            failed: true,
        }
    }

    /// `DP20=<v>,AUC=<v>`
    pub fn summary_line(&self) -> String {
        format!("DP20={},AUC={}", self.dp20, self.auc)
    }
}

/// Order-independent mean: values are sorted before summation.
fn mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unweighted mean over sequences, pointwise on the curves. Bit-identical
/// under any permutation of `results`.
pub fn aggregate(results: &[EvalResult]) -> Result<EvalResult> {
    if results.is_empty() {
        return Err(Error::Config("nothing to aggregate".into()));
    }
    let pointwise = |f: fn(&EvalResult) -> &Vec<f64>, len: usize| -> Vec<f64> {
        (0..len).map(|i| mean(results.iter().map(|r| f(r)[i]).collect())).collect()
    };
    Ok(EvalResult {
        precision: pointwise(|r| &r.precision, PRECISION_THRESHOLDS),
        success: pointwise(|r| &r.success, SUCCESS_THRESHOLDS),
        dp20: mean(results.iter().map(|r| r.dp20).collect()),
        auc: mean(results.iter().map(|r| r.auc).collect()),
        failed: results.iter().any(|r| r.failed),
    })
}

pub fn write_precision_csv<W: Write>(mut out: W, r: &EvalResult) -> Result<()> {
    writeln!(out, "threshold,precision")?;
    for (th, v) in r.precision.iter().enumerate() {
        writeln!(out, "{th},{v}")?;
    }
    Ok(())
}

pub fn write_success_csv<W: Write>(mut out: W, r: &EvalResult) -> Result<()> {
    writeln!(out, "threshold,success")?;
    for (i, v) in r.success.iter().enumerate() {
        writeln!(out, "{},{v}", success_threshold(i))?;
    }
    Ok(())
}

/// Tracker seed for a sequence, derived from its name so results do not
/// depend on the order sequences are listed in.
pub fn sequence_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpeReport {
    pub per_sequence: Vec<(String, EvalResult)>,
    pub aggregate: EvalResult,
}

/// One pass per sequence from its first ground-truth box. Frame 1 counts as
/// the ground truth itself. An initialization failure is recorded as a
/// failed, all-zero result; any other error aborts.
pub fn run_ope(models: &Models, cfg: &Config, variant: Variant, sequences: &[Sequence], seed: u64) -> Result<OpeReport> {
    let mut per_sequence = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let s = sequence_seed(seed, &seq.name);
        let r = match run_sequence(models, cfg, variant, seq, s, false) {
            Ok(frames) => {
                let mut pred = vec![seq.gt[0]];
                pred.extend(frames.iter().map(|f| f.bbox));
                evaluate(&pred, &seq.gt)?
            }
            Err(e @ (Error::DegenerateBox(_) | Error::NoOverlap(_))) => {
                log::warn!("{}: initialization failed: {e}", seq.name);
                EvalResult::failure()
            }
            Err(e) => return Err(e),
        };
        log::info!("{} [{variant}] {}", seq.name, r.summary_line());
        per_sequence.push((seq.name.clone(), r));
    }
    let aggregate = aggregate(&per_sequence.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>())?;
    Ok(OpeReport { per_sequence, aggregate })
}
