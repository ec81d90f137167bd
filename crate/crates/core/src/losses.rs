//! Training objectives with exact gradients with respect to the predicted
//! poses (`N × J × 3`) and the scale-head outputs (`N`).
//!
//! Every term is summed within an example and averaged over the batch.
//! Euclidean-norm terms use a zero subgradient at exactly-zero residuals.

use ndarray::{Array1, Array3, ArrayView1, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, PERSPECTIVE_DEPTH_GUARD};
use crate::pose::{JointSet2D, Relation, RelativeAnnotationSet, Skeleton};

/// Floor on the minibatch depth normalizer.
pub const DEPTH_NORM_FLOOR: f64 = 1e-8;

/// Minimum predicted unit-bone length for the skeleton loss.
pub const UNIT_BONE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.1, gamma: 1.0, lambda: 2.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.lambda];
        if all.iter().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("loss weights must be non-negative: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub root: f64,
    pub rel: f64,
    pub proj: f64,
    pub skel: f64,
    pub sup: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    /// Unweighted, batch-averaged terms.
    pub terms: LossTerms,
    pub grad_poses: Array3<f64>,
    pub grad_scales: Array1<f64>,
}

impl LossValue {
    fn zeros(n: usize, j: usize) -> Self {
        Self { total: 0.0, terms: LossTerms::default(), grad_poses: Array3::zeros((n, j, 3)), grad_scales: Array1::zeros(n) }
    }

    fn add_scaled(&mut self, other: &LossValue, weight: f64) {
        self.total += weight * other.total;
        self.grad_poses.scaled_add(weight, &other.grad_poses);
        self.grad_scales.scaled_add(weight, &other.grad_scales);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMode {
    #[default]
    Orthographic,
    Perspective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SupervisionMode {
    #[default]
    Relative,
    Full3d,
}

fn check_batch(poses: &ArrayView3<f64>, n: usize, what: &str) -> Result<()> {
    if poses.dim().0 != n || poses.dim().2 != 3 {
        return Err(Error::ShapeMismatch(format!("poses {:?} vs {n} {what}", poses.dim())));
    }
    Ok(())
}

/// `‖P̂ − P‖` (Frobenius over each example), averaged over the batch.
pub fn loss_sup(poses: &ArrayView3<f64>, targets: &ArrayView3<f64>) -> Result<LossValue> {
    if poses.dim() != targets.dim() {
        return Err(Error::ShapeMismatch(format!("poses {:?} vs targets {:?}", poses.dim(), targets.dim())));
    }
    let (n, j, _) = poses.dim();
    let mut out = LossValue::zeros(n, j);
    for i in 0..n {
        let diff = &poses.slice(ndarray::s![i, .., ..]) - &targets.slice(ndarray::s![i, .., ..]);
        let norm = diff.mapv(|v| v * v).sum().sqrt();
        out.terms.sup += norm / n as f64;
        if norm > 0.0 {
            out.grad_poses.slice_mut(ndarray::s![i, .., ..]).assign(&(diff / (norm * n as f64)));
        }
    }
    out.total = out.terms.sup;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDiffs {
    pub values: Vec<f64>,
    /// Mean absolute difference before clamping to [`DEPTH_NORM_FLOOR`].
    pub mean_abs: f64,
}

/// Divides every depth difference by the mean absolute difference of the
/// minibatch (floored at [`DEPTH_NORM_FLOOR`]).
pub fn normalize_depth_diffs(raw: &[f64]) -> Result<NormalizedDiffs> {
    if raw.is_empty() {
        return Err(Error::EmptyPairSet);
    }
    let mean_abs = raw.iter().map(|d| d.abs()).sum::<f64>() / raw.len() as f64;
    let m = mean_abs.max(DEPTH_NORM_FLOOR);
    Ok(NormalizedDiffs { values: raw.iter().map(|d| d / m).collect(), mean_abs })
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pairwise ranking loss over depth differences normalized across the whole
/// minibatch: `log(1 + exp(−r·d̂))` for `r = ±1` and `|d̂|` for `r = 0`, with
/// `d̂ = λ·(ẑ_j − ẑ_k)/m`. Gradients include the dependence of `m` on every
/// pair.
pub fn loss_rel(poses: &ArrayView3<f64>, annotations: &[RelativeAnnotationSet], lambda: f64) -> Result<LossValue> {
    let (n, j, _) = poses.dim();
    check_batch(poses, annotations.len(), "annotation sets")?;
    let mut pairs = Vec::new();
    for (i, set) in annotations.iter().enumerate() {
        for p in set.pairs() {
            if p.j >= j || p.k >= j {
                return Err(Error::ShapeMismatch(format!("pair ({}, {}) outside {j} joints", p.j, p.k)));
            }
            pairs.push((i, p.j, p.k, p.r));
        }
    }
    let raw: Vec<f64> = pairs.iter().map(|&(i, a, b, _)| poses[[i, a, 2]] - poses[[i, b, 2]]).collect();
    let norm = normalize_depth_diffs(&raw)?;
    let m = norm.mean_abs.max(DEPTH_NORM_FLOOR);
    let clamped = norm.mean_abs < DEPTH_NORM_FLOOR;

    let mut out = LossValue::zeros(n, j);
    // dL/dd̂ for every pair
    let mut g_hat = Vec::with_capacity(pairs.len());
    for (&(_, _, _, r), &x) in pairs.iter().zip(&norm.values) {
        let d_hat = lambda * x;
        let (term, grad) = match r {
            Relation::Same => (d_hat.abs(), if d_hat > 0.0 { 1.0 } else if d_hat < 0.0 { -1.0 } else { 0.0 }),
            r => {
                let rs = r.sign() as f64;
                (softplus(-rs * d_hat), -rs * sigmoid(-rs * d_hat))
            }
        };
        out.terms.rel += term / n as f64;
        g_hat.push(grad / n as f64);
    }
    out.total = out.terms.rel;

    // d̂_p = λ·raw_p/m,  ∂m/∂raw_p = sign(raw_p)/P unless clamped
    let coupling: f64 = if clamped {
        0.0
    } else {
        g_hat.iter().zip(&raw).map(|(g, r)| g * lambda * r).sum::<f64>() / (m * m * raw.len() as f64)
    };
    for ((&(i, a, b, _), g), r) in pairs.iter().zip(&g_hat).zip(&raw) {
        let sign = if *r > 0.0 { 1.0 } else if *r < 0.0 { -1.0 } else { 0.0 };
        let d_raw = g * lambda / m - coupling * sign;
        out.grad_poses[[i, a, 2]] += d_raw;
        out.grad_poses[[i, b, 2]] -= d_raw;
    }
    Ok(out)
}

/// `‖P̂_root‖`, averaged over the batch.
pub fn loss_root(poses: &ArrayView3<f64>, root: usize) -> Result<LossValue> {
    let (n, j, _) = poses.dim();
    if root >= j {
        return Err(Error::InvalidInput(format!("root {root} outside {j} joints")));
    }
    let mut out = LossValue::zeros(n, j);
    for i in 0..n {
        let p = [poses[[i, root, 0]], poses[[i, root, 1]], poses[[i, root, 2]]];
        let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        out.terms.root += norm / n as f64;
        if norm > 0.0 {
            for c in 0..3 {
                out.grad_poses[[i, root, c]] = p[c] / (norm * n as f64);
            }
        }
    }
    out.total = out.terms.root;
    Ok(out)
}

fn check_keypoints(poses: &ArrayView3<f64>, scales: &ArrayView1<f64>, keypoints: &[JointSet2D]) -> Result<()> {
    let (n, j, _) = poses.dim();
    check_batch(poses, keypoints.len(), "keypoint sets")?;
    if scales.len() != n {
        return Err(Error::ShapeMismatch(format!("{} scales for {n} poses", scales.len())));
    }
    if let Some(bad) = keypoints.iter().find(|k| k.len() != j) {
        return Err(Error::ShapeMismatch(format!("keypoints with {} joints vs {j}", bad.len())));
    }
    Ok(())
}

/// Scaled-orthographic reprojection `Σ_j ‖v_j (s·[x_j, y_j] − p_j)‖`.
pub fn loss_proj_ortho(poses: &ArrayView3<f64>, scales: &ArrayView1<f64>, keypoints: &[JointSet2D]) -> Result<LossValue> {
    check_keypoints(poses, scales, keypoints)?;
    let (n, j, _) = poses.dim();
    let mut out = LossValue::zeros(n, j);
    let inv_n = 1.0 / n as f64;
    for (i, kp) in keypoints.iter().enumerate() {
        let s = scales[i];
        for (jj, (p, &visible)) in kp.coords().iter().zip(kp.visibility()).enumerate() {
            if !visible {
                continue;
            }
            let (x, y) = (poses[[i, jj, 0]], poses[[i, jj, 1]]);
            let e = [s * x - p[0], s * y - p[1]];
            let norm = e[0].hypot(e[1]);
            out.terms.proj += norm * inv_n;
            if norm > 0.0 {
                let g = [e[0] / norm * inv_n, e[1] / norm * inv_n];
                out.grad_poses[[i, jj, 0]] += g[0] * s;
                out.grad_poses[[i, jj, 1]] += g[1] * s;
                out.grad_scales[i] += g[0] * x + g[1] * y;
            }
        }
    }
    out.total = out.terms.proj;
    Ok(out)
}

/// Indices of examples with a visible joint at or behind the depth guard.
pub fn perspective_degenerate_examples(
    poses: &ArrayView3<f64>,
    scales: &ArrayView1<f64>,
    keypoints: &[JointSet2D],
) -> Vec<usize> {
    keypoints
        .iter()
        .enumerate()
        .filter(|(i, kp)| {
            kp.visibility()
                .iter()
                .enumerate()
                .any(|(jj, &v)| v && !(poses[[*i, jj, 2]] + scales[*i] > PERSPECTIVE_DEPTH_GUARD))
        })
        .map(|(i, _)| i)
        .collect()
}

/// Perspective reprojection with `P̃_j = [x/(z+s), y/(z+s), 1]` and known
/// focal lengths; `s` is the distance from the camera to the pose center.
pub fn loss_proj_persp(
    poses: &ArrayView3<f64>,
    scales: &ArrayView1<f64>,
    keypoints: &[JointSet2D],
    intrinsics: &[Intrinsics],
) -> Result<LossValue> {
    check_keypoints(poses, scales, keypoints)?;
    let (n, j, _) = poses.dim();
    if intrinsics.len() != n {
        return Err(Error::ShapeMismatch(format!("{} intrinsics for {n} poses", intrinsics.len())));
    }
    let mut out = LossValue::zeros(n, j);
    let inv_n = 1.0 / n as f64;
    for (i, (kp, k)) in keypoints.iter().zip(intrinsics).enumerate() {
        let s = scales[i];
        for (jj, (p, &visible)) in kp.coords().iter().zip(kp.visibility()).enumerate() {
            if !visible {
                continue;
            }
            let (x, y, z) = (poses[[i, jj, 0]], poses[[i, jj, 1]], poses[[i, jj, 2]]);
            let depth = z + s;
            if !(depth > PERSPECTIVE_DEPTH_GUARD) {
                return Err(Error::DegenerateDepth { example: i, joint: jj, depth });
            }
            let (fx, fy) = (k.fx(), k.fy());
            let e = [fx * x / depth - p[0], fy * y / depth - p[1]];
            let norm = e[0].hypot(e[1]);
            out.terms.proj += norm * inv_n;
            if norm > 0.0 {
                let g = [e[0] / norm * inv_n, e[1] / norm * inv_n];
                let d_depth = -(g[0] * fx * x + g[1] * fy * y) / (depth * depth);
                out.grad_poses[[i, jj, 0]] += g[0] * fx / depth;
                out.grad_poses[[i, jj, 1]] += g[1] * fy / depth;
                out.grad_poses[[i, jj, 2]] += d_depth;
                out.grad_scales[i] += d_depth;
            }
        }
    }
    out.total = out.terms.proj;
    Ok(out)
}

/// Limb-ratio loss: predicted bone lengths divided by the predicted unit-bone
/// length, compared to the normalized reference lengths with `|·|`.
pub fn loss_skel(poses: &ArrayView3<f64>, skeleton: &Skeleton) -> Result<LossValue> {
    let (n, j, _) = poses.dim();
    if j != skeleton.num_joints() {
        return Err(Error::ShapeMismatch(format!("{j} predicted joints vs skeleton {}", skeleton.num_joints())));
    }
    let bones = skeleton.bones();
    let unit = skeleton.unit_bone();
    let mut out = LossValue::zeros(n, j);
    let inv_n = 1.0 / n as f64;
    let mut vecs = vec![[0.0; 3]; bones.len()];
    let mut lens = vec![0.0; bones.len()];
    for i in 0..n {
        for (b, bone) in bones.iter().enumerate() {
            let v = [
                poses[[i, bone.a, 0]] - poses[[i, bone.b, 0]],
                poses[[i, bone.a, 1]] - poses[[i, bone.b, 1]],
                poses[[i, bone.a, 2]] - poses[[i, bone.b, 2]],
            ];
            lens[b] = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            vecs[b] = v;
        }
        let u = lens[unit];
        if !(u > UNIT_BONE_FLOOR) {
            return Err(Error::DegenerateUnitBone { example: i, length: u });
        }
        // dℓ/dL_b for every bone, the unit bone collecting the ratio terms
        let mut d_len = vec![0.0; bones.len()];
        for (b, bone) in bones.iter().enumerate() {
            let resid = lens[b] / u - bone.length;
            out.terms.skel += resid.abs() * inv_n;
            let g = if resid > 0.0 { inv_n } else if resid < 0.0 { -inv_n } else { 0.0 };
            d_len[b] += g / u;
            d_len[unit] -= g * lens[b] / (u * u);
        }
        for (b, bone) in bones.iter().enumerate() {
            if lens[b] > 0.0 && d_len[b] != 0.0 {
                for c in 0..3 {
                    let g = d_len[b] * vecs[b][c] / lens[b];
                    out.grad_poses[[i, bone.a, c]] += g;
                    out.grad_poses[[i, bone.b, c]] -= g;
                }
            }
        }
    }
    out.total = out.terms.skel;
    Ok(out)
}

/// Inputs that accompany a minibatch of predictions.
#[derive(Debug, Clone, Copy)]
pub struct LossBatch<'a> {
    pub keypoints: &'a [JointSet2D],
    pub annotations: Option<&'a [RelativeAnnotationSet]>,
    pub targets: Option<ArrayView3<'a, f64>>,
    pub intrinsics: Option<&'a [Intrinsics]>,
    pub skeleton: &'a Skeleton,
}

/// Relative mode: `L_root + α·L_rel + β·L_proj + γ·L_skel`. Full-3D mode:
/// `L_sup` alone.
pub fn loss_total(
    poses: &ArrayView3<f64>,
    scales: &ArrayView1<f64>,
    batch: &LossBatch<'_>,
    weights: &LossWeights,
    projection: ProjectionMode,
    supervision: SupervisionMode,
) -> Result<LossValue> {
    weights.validate()?;
    let (n, j, _) = poses.dim();
    if supervision == SupervisionMode::Full3d {
        let targets = batch.targets.ok_or_else(|| Error::MissingInput("full3d mode needs 3D targets".into()))?;
        return loss_sup(poses, &targets);
    }
    let annotations = batch
        .annotations
        .ok_or_else(|| Error::MissingInput("relative mode needs relative annotations".into()))?;

    let mut out = LossValue::zeros(n, j);
    let root = loss_root(poses, batch.skeleton.root())?;
    out.add_scaled(&root, 1.0);
    out.terms.root = root.terms.root;

    if weights.alpha > 0.0 {
        let rel = loss_rel(poses, annotations, weights.lambda)?;
        out.add_scaled(&rel, weights.alpha);
        out.terms.rel = rel.terms.rel;
    }
    if weights.beta > 0.0 {
        let proj = match projection {
            ProjectionMode::Orthographic => loss_proj_ortho(poses, scales, batch.keypoints)?,
            ProjectionMode::Perspective => {
                let k = batch
                    .intrinsics
                    .ok_or_else(|| Error::MissingInput("perspective mode needs intrinsics".into()))?;
                loss_proj_persp(poses, scales, batch.keypoints, k)?
            }
        };
        out.add_scaled(&proj, weights.beta);
        out.terms.proj = proj.terms.proj;
    }
    if weights.gamma > 0.0 {
        let skel = loss_skel(poses, batch.skeleton)?;
        out.add_scaled(&skel, weights.gamma);
        out.terms.skel = skel.terms.skel;
    }
    Ok(out)
}
