//! Pose error metrics under different alignment protocols, per-joint
//! statistics and relative-label error.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mean_joint_distance, optimal_scale_align, procrustes_align};
use crate::pose::{JointSet3D, PoseExample, Relation, RelativeAnnotationSet};

/// Alignment applied to a prediction before measuring its error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Root-centre both poses.
    None,
    /// Root-centre both, then the best single scale.
    Scale,
    /// Best similarity transform.
    Procrustes,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::None, Protocol::Scale, Protocol::Procrustes];
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::None => "none",
            Protocol::Scale => "scale",
            Protocol::Procrustes => "procrustes",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Protocol::None),
            "scale" => Ok(Protocol::Scale),
            "procrustes" => Ok(Protocol::Procrustes),
            other => Err(Error::InvalidInput(format!("unknown protocol {other:?}"))),
        }
    }
}

/// `pred` aligned under `protocol`, together with the target it should be
/// compared against.
pub fn align(pred: &JointSet3D, truth: &JointSet3D, protocol: Protocol) -> Result<(JointSet3D, JointSet3D)> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!("{} predicted joints vs {} true", pred.len(), truth.len())));
    }
    match protocol {
        Protocol::None => Ok((pred.root_centered(), truth.root_centered())),
        Protocol::Scale => {
            let t = truth.root_centered();
            Ok((optimal_scale_align(&pred.root_centered(), &t)?.scaled, t))
        }
        Protocol::Procrustes => Ok((procrustes_align(pred, truth)?.aligned, truth.clone())),
    }
}

/// Mean per-joint position error of one example.
pub fn example_mpjpe(pred: &JointSet3D, truth: &JointSet3D, protocol: Protocol) -> Result<f64> {
    let (p, t) = align(pred, truth, protocol)?;
    mean_joint_distance(&p, &t)
}

/// Per-example errors averaged over all frames.
pub fn mpjpe(preds: &[JointSet3D], truths: &[JointSet3D], protocol: Protocol) -> Result<f64> {
    let errors = example_errors(preds, truths, protocol)?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

fn example_errors(preds: &[JointSet3D], truths: &[JointSet3D], protocol: Protocol) -> Result<Vec<f64>> {
    if preds.len() != truths.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} targets", preds.len(), truths.len())));
    }
    if preds.is_empty() {
        return Err(Error::UndefinedMetric("no examples".into()));
    }
    preds.iter().zip(truths).map(|(p, t)| example_mpjpe(p, t, protocol)).collect()
}

/// Counts of `(wrong, usable)` pairs of one example; `r = 0` pairs are
/// skipped and predicted gaps within `tie_threshold` count as wrong.
pub fn label_errors(pred: &JointSet3D, ann: &RelativeAnnotationSet, tie_threshold: f64) -> (usize, usize) {
    let z = pred.depths();
    ann.pairs()
        .iter()
        .filter(|p| p.r != Relation::Same)
        .fold((0, 0), |(wrong, total), p| {
            let d = z[p.j] - z[p.k];
            let ok = d.abs() > tie_threshold && (d < 0.0) == (p.r == Relation::Closer);
            (wrong + !ok as usize, total + 1)
        })
}

/// Fraction of `r = ±1` pairs, pooled over the dataset, whose predicted
/// ordering disagrees with the label.
pub fn relative_label_error(preds: &[JointSet3D], annotations: &[RelativeAnnotationSet], tie_threshold: f64) -> Result<f64> {
    if preds.len() != annotations.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} annotation sets", preds.len(), annotations.len())));
    }
    let (wrong, total) = preds
        .iter()
        .zip(annotations)
        .map(|(p, a)| label_errors(p, a, tie_threshold))
        .fold((0, 0), |acc, e| (acc.0 + e.0, acc.1 + e.1));
    if total == 0 {
        return Err(Error::UndefinedMetric("no r = ±1 pairs to score".into()));
    }
    Ok(wrong as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// `counts[i]` covers `[i·w, (i+1)·w)`.
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerJointStats {
    pub protocol: Protocol,
    pub mean: Vec<f64>,
    /// Population standard deviation over examples.
    pub std: Vec<f64>,
    /// Per-example MPJPE histogram.
    pub histogram: Histogram,
    /// `(percentile, per-example MPJPE)` for the 50th, 75th, 90th and 95th.
    pub percentiles: Vec<(f64, f64)>,
}

pub const PERCENTILES: [f64; 4] = [50.0, 75.0, 90.0, 95.0];

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn per_joint_stats(preds: &[JointSet3D], truths: &[JointSet3D], protocol: Protocol, bin_width: f64) -> Result<PerJointStats> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvalidInput(format!("bin width {bin_width} must be positive")));
    }
    example_errors(preds, truths, protocol)?;
    let j = truths[0].len();
    let mut sum = vec![0.0; j];
    let mut sum_sq = vec![0.0; j];
    let mut per_example = Vec::with_capacity(preds.len());
    for (p, t) in preds.iter().zip(truths) {
        let (a, t) = align(p, t, protocol)?;
        if a.len() != j {
            return Err(Error::ShapeMismatch("examples disagree on joint count".into()));
        }
        let mut total = 0.0;
        for (i, (x, y)) in a.coords().iter().zip(t.coords()).enumerate() {
            let e = (Vector3::from(*x) - Vector3::from(*y)).norm();
            sum[i] += e;
            sum_sq[i] += e * e;
            total += e;
        }
        per_example.push(total / j as f64);
    }
    let n = preds.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sum_sq.iter().zip(&mean).map(|(s, m)| (s / n - m * m).max(0.0).sqrt()).collect();

    let max = per_example.iter().copied().fold(0.0, f64::max);
    let mut counts = vec![0usize; (max / bin_width).floor() as usize + 1];
    for e in &per_example {
        counts[(e / bin_width).floor() as usize] += 1;
    }
    per_example.sort_by(f64::total_cmp);
    let percentiles = PERCENTILES.iter().map(|&p| (p, percentile(&per_example, p))).collect();
    Ok(PerJointStats { protocol, mean, std, histogram: Histogram { bin_width, counts }, percentiles })
}

/// Dataset-level summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_examples: usize,
    /// Examples with 3D ground truth.
    pub num_with_3d: usize,
    /// `(protocol, MPJPE)` for every requested protocol, when 3D exists.
    pub mpjpe: Vec<(Protocol, f64)>,
    pub relative_label_error: Option<f64>,
}

impl EvalReport {
    pub fn mpjpe(&self, protocol: Protocol) -> Option<f64> {
        self.mpjpe.iter().find(|(p, _)| *p == protocol).map(|(_, v)| *v)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "examples={} with_3d={}", self.num_examples, self.num_with_3d)?;
        for (p, v) in &self.mpjpe {
            write!(f, " mpjpe_{p}={v:.3}")?;
        }
        if let Some(e) = self.relative_label_error {
            write!(f, " rel_err={e:.4}")?;
        }
        Ok(())
    }
}

/// MPJPE under each protocol (over examples with 3D) and relative-label error
/// against each example's annotations.
pub fn evaluate(preds: &[JointSet3D], examples: &[PoseExample], protocols: &[Protocol], tie_threshold: f64) -> Result<EvalReport> {
    if preds.len() != examples.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} examples", preds.len(), examples.len())));
    }
    let (p3, t3): (Vec<JointSet3D>, Vec<JointSet3D>) = preds
        .iter()
        .zip(examples)
        .filter_map(|(p, e)| e.joints3d.as_ref().map(|t| (p.clone(), t.clone())))
        .unzip();
    let mpjpe = if t3.is_empty() {
        Vec::new()
    } else {
        protocols.iter().map(|&pr| Ok((pr, mpjpe(&p3, &t3, pr)?))).collect::<Result<_>>()?
    };
    let annotations: Vec<RelativeAnnotationSet> = examples.iter().map(|e| e.annotations.clone()).collect();
    let relative_label_error = match relative_label_error(preds, &annotations, tie_threshold) {
        Ok(e) => Some(e),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport { num_examples: examples.len(), num_with_3d: t3.len(), mpjpe, relative_label_error })
}
