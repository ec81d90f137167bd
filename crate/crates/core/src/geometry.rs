//! Camera models, projections, pose alignment and the upright-camera depth
//! correction.
//!
//! Camera frames follow the usual computer-vision convention: `x` right,
//! `y` down, `z` forward. The world frame is `z`-up. All 2D coordinates are
//! relative to the principal point, so neither projection carries an offset.

use nalgebra::{Matrix3, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{JointSet2D, JointSet3D};

/// World up direction.
pub const WORLD_UP: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

/// Tolerance on `RᵀR − I` and `det R − 1` for a valid rotation.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Minimum admissible `z + s` in perspective projection.
pub const PERSPECTIVE_DEPTH_GUARD: f64 = 1e-6;

/// Minimum angle (radians) between camera forward and world up for the upright
/// correction to have a defined heading.
pub const MIN_HEADING_ANGLE: f64 = 1e-6;

/// Rigid world-to-camera transform, `X_cam = R X_world + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct CameraExtrinsics {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    #[serde(rename = "R")]
    rotation: [f64; 9],
    t: [f64; 3],
}

impl TryFrom<CameraRecord> for CameraExtrinsics {
    type Error = Error;
    fn try_from(rec: CameraRecord) -> Result<Self> {
        CameraExtrinsics::from_row_major(rec.rotation, rec.t)
    }
}

impl From<CameraExtrinsics> for CameraRecord {
    fn from(ext: CameraExtrinsics) -> Self {
        CameraRecord { rotation: ext.rotation_row_major(), t: ext.translation.into() }
    }
}

impl CameraExtrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("camera has non-finite entries".into()));
        }
        let gram_err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det_err = (rotation.determinant() - 1.0).abs();
        if gram_err > ORTHONORMAL_TOL || det_err > ORTHONORMAL_TOL {
            return Err(Error::InvalidInput(format!(
                "camera rotation is not a proper rotation (|RᵀR−I| = {gram_err:.3e}, |det−1| = {det_err:.3e})"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_row_major(rotation: [f64; 9], translation: [f64; 3]) -> Result<Self> {
        Self::new(Matrix3::from_row_slice(&rotation), Vector3::from(translation))
    }

    /// Camera placed at `center` looking at `target`, with image "up" as close
    /// to world up as possible.
    pub fn look_at(center: Vector3<f64>, target: Vector3<f64>) -> Result<Self> {
        let forward = (target - center)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidInput("look-at target coincides with camera".into()))?;
        let right = forward
            .cross(&WORLD_UP)
            .try_normalize(1e-12)
            .ok_or(Error::UndefinedHeading)?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self::new(rotation, -(rotation * center))
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]]
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Optical axis expressed in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    /// Maps a world-frame joint set into this camera's frame.
    pub fn transform(&self, world: &JointSet3D) -> JointSet3D {
        let coords = world
            .coords()
            .iter()
            .map(|p| self.to_camera(&Vector3::from(*p)).into())
            .collect();
        JointSet3D::new(coords, world.root_index()).expect("rigid transform preserves validity")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsRecord", into = "IntrinsicsRecord")]
pub struct Intrinsics {
    fx: f64,
    fy: f64,
}

#[derive(Serialize, Deserialize)]
struct IntrinsicsRecord {
    fx: f64,
    fy: f64,
}

impl TryFrom<IntrinsicsRecord> for Intrinsics {
    type Error = Error;
    fn try_from(rec: IntrinsicsRecord) -> Result<Self> {
        Intrinsics::new(rec.fx, rec.fy)
    }
}

impl From<Intrinsics> for IntrinsicsRecord {
    fn from(k: Intrinsics) -> Self {
        IntrinsicsRecord { fx: k.fx, fy: k.fy }
    }
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidInput(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        Ok(Self { fx, fy })
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }

    pub fn fy(&self) -> f64 {
        self.fy
    }

    /// Focal lengths divided by `factor`, matching 2D coordinates that were
    /// divided by the same factor.
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.fx / factor, self.fy / factor)
    }
}

/// Scale of a scaled-orthographic camera, in pixels per scene unit.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct OrthoScale(f64);

impl OrthoScale {
    pub fn new(s: f64) -> Result<Self> {
        if s > 0.0 && s.is_finite() {
            Ok(Self(s))
        } else {
            Err(Error::InvalidInput(format!("orthographic scale must be positive, got {s}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// `(s·x, s·y)` for every joint; the result is marked fully visible.
pub fn project_orthographic(pose: &JointSet3D, scale: OrthoScale) -> Result<JointSet2D> {
    let s = scale.get();
    let coords = pose.coords().iter().map(|&[x, y, _]| [s * x, s * y]).collect();
    JointSet2D::all_visible(coords)
}

/// `(fx·x/(z+s), fy·y/(z+s))` for every joint, where `s` offsets the depth of
/// the whole pose.
pub fn project_perspective(pose: &JointSet3D, depth_offset: f64, k: &Intrinsics) -> Result<JointSet2D> {
    let mut coords = Vec::with_capacity(pose.len());
    for (j, &[x, y, z]) in pose.coords().iter().enumerate() {
        let depth = z + depth_offset;
        if !(depth > PERSPECTIVE_DEPTH_GUARD) {
            return Err(Error::DegenerateDepth { example: 0, joint: j, depth });
        }
        coords.push([k.fx * x / depth, k.fy * y / depth]);
    }
    JointSet2D::all_visible(coords)
}

/// Mean Euclidean distance between corresponding joints.
pub fn mean_joint_distance(a: &JointSet3D, b: &JointSet3D) -> Result<f64> {
    check_same_len(a, b)?;
    let total: f64 = a
        .coords()
        .iter()
        .zip(b.coords())
        .map(|(p, q)| (Vector3::from(*p) - Vector3::from(*q)).norm())
        .sum();
    Ok(total / a.len() as f64)
}

fn check_same_len(a: &JointSet3D, b: &JointSet3D) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} joints vs {} joints", a.len(), b.len())));
    }
    Ok(())
}

/// Result of a similarity alignment of a prediction onto a target.
#[derive(Debug, Clone)]
pub struct SimilarityAlignment {
    pub aligned: JointSet3D,
    /// Mean per-joint distance after alignment.
    pub error: f64,
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector3<f64>,
}

/// Least-squares similarity transform (rotation, translation, uniform scale,
/// no reflection) taking `pred` onto `target`.
pub fn procrustes_align(pred: &JointSet3D, target: &JointSet3D) -> Result<SimilarityAlignment> {
    check_same_len(pred, target)?;
    let n = pred.len();
    if n < 3 {
        return Err(Error::AlignmentFailure(format!("need at least 3 joints, got {n}")));
    }
    let xs: Vec<Vector3<f64>> = pred.coords().iter().map(|p| Vector3::from(*p)).collect();
    let ys: Vec<Vector3<f64>> = target.coords().iter().map(|p| Vector3::from(*p)).collect();
    let mu_x = xs.iter().sum::<Vector3<f64>>() / n as f64;
    let mu_y = ys.iter().sum::<Vector3<f64>>() / n as f64;

    let mut cov = Matrix3::zeros();
    let mut var_x = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let dx = x - mu_x;
        cov += (y - mu_y) * dx.transpose();
        var_x += dx.norm_squared();
    }
    cov /= n as f64;
    var_x /= n as f64;

    // singular values come back in decreasing order
    let svd = SVD::new(cov, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::AlignmentFailure("SVD did not converge".into())),
    };
    let sv = svd.singular_values;
    if var_x <= f64::MIN_POSITIVE || sv[0] <= f64::MIN_POSITIVE || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::AlignmentFailure("covariance has rank < 2".into()));
    }

    let reflect = if (u.determinant() * v_t.determinant()) < 0.0 { -1.0 } else { 1.0 };
    let rotation = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, reflect)) * v_t;
    let scale = (sv[0] + sv[1] + reflect * sv[2]) / var_x;
    let translation = mu_y - scale * rotation * mu_x;

    let coords: Vec<[f64; 3]> = xs.iter().map(|x| (scale * rotation * x + translation).into()).collect();
    let aligned = JointSet3D::new(coords, pred.root_index())?;
    let error = mean_joint_distance(&aligned, target)?;
    Ok(SimilarityAlignment { aligned, error, rotation, scale, translation })
}

#[derive(Debug, Clone)]
pub struct ScaleAlignment {
    pub scaled: JointSet3D,
    pub error: f64,
    pub scale: f64,
}

/// Single scalar `c` minimising `Σ‖c·pred_j − target_j‖²`.
pub fn optimal_scale_align(pred: &JointSet3D, target: &JointSet3D) -> Result<ScaleAlignment> {
    check_same_len(pred, target)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (p, q) in pred.coords().iter().zip(target.coords()) {
        let (p, q) = (Vector3::from(*p), Vector3::from(*q));
        num += p.dot(&q);
        den += p.norm_squared();
    }
    if den <= 0.0 {
        return Err(Error::Degenerate("prediction is all zeros, scale undefined".into()));
    }
    let scale = num / den;
    let scaled = pred.map_coords(|p| [scale * p[0], scale * p[1], scale * p[2]]);
    let error = mean_joint_distance(&scaled, target)?;
    Ok(ScaleAlignment { scaled, error, scale })
}

/// Joint depths as seen by an upright camera at the same center: the optical
/// axis is flattened onto the horizontal plane, removing pitch and roll.
pub fn upright_depths(world: &JointSet3D, ext: &CameraExtrinsics) -> Result<Vec<f64>> {
    let forward = ext.forward();
    let horizontal = forward - forward.dot(&WORLD_UP) * WORLD_UP;
    if horizontal.norm() <= MIN_HEADING_ANGLE.sin() {
        return Err(Error::UndefinedHeading);
    }
    let upright_forward = horizontal.normalize();
    let center = ext.center();
    Ok(world
        .coords()
        .iter()
        .map(|p| upright_forward.dot(&(Vector3::from(*p) - center)))
        .collect())
}

pub fn rotation_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rotation_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rotation_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}
