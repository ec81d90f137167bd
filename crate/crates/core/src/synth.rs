//! Synthetic articulated poses, cameras, 2D observations and simulated
//! relative-depth annotators.
//!
//! World frame: z up, the rest pose faces +y and its right side is +x.
//! Lengths are in millimetres.

use nalgebra::{Matrix3, Vector3};
use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_perspective, rotation_x, rotation_y, rotation_z, CameraExtrinsics, Intrinsics};
use crate::pose::{
    bone_lengths, CameraInfo, JointSet2D, JointSet3D, PairLabel, PoseExample, Relation, RelativeAnnotationSet,
    Skeleton,
};

/// Length of the unit bone (spine to thorax) of the synthetic body.
pub const DEFAULT_UNIT_BONE_MM: f64 = 257.0;

/// Closed angle ranges in radians for the x, y and z Euler offsets of one
/// joint. The rotation at a joint moves every bone below it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

impl JointLimits {
    pub const FIXED: JointLimits = JointLimits { x: [0.0, 0.0], y: [0.0, 0.0], z: [0.0, 0.0] };

    pub fn contains(&self, angles: [f64; 3]) -> bool {
        [self.x, self.y, self.z].iter().zip(angles).all(|(r, a)| r[0] <= a && a <= r[1])
    }

    fn clamp(&self, angles: [f64; 3]) -> [f64; 3] {
        let r = [self.x, self.y, self.z];
        [0, 1, 2].map(|i| angles[i].clamp(r[i][0], r[i][1]))
    }
}

/// `Rz · Ry · Rx` for offsets `(x, y, z)`.
fn euler(angles: [f64; 3]) -> Matrix3<f64> {
    rotation_z(angles[2]) * rotation_y(angles[1]) * rotation_x(angles[0])
}

/// Forward-kinematics pose generator: random joint-angle offsets from a rest
/// pose, clamped to per-joint limits.
#[derive(Debug, Clone)]
pub struct PoseSampler {
    skeleton: Skeleton,
    rest_pose: JointSet3D,
    perturbation: f64,
    limits: Vec<JointLimits>,
    parents: Vec<(usize, usize)>,
}

impl PoseSampler {
    pub fn new(skeleton: Skeleton, rest_pose: JointSet3D, perturbation: f64, limits: Vec<JointLimits>) -> Result<Self> {
        let j = skeleton.num_joints();
        if rest_pose.len() != j || limits.len() != j {
            return Err(Error::ShapeMismatch(format!(
                "skeleton has {j} joints, rest pose {} and limits {}",
                rest_pose.len(),
                limits.len()
            )));
        }
        if !(perturbation >= 0.0 && perturbation.is_finite()) {
            return Err(Error::InvalidInput(format!("perturbation scale {perturbation} must be >= 0")));
        }
        if let Some(bad) = limits.iter().find(|l| [l.x, l.y, l.z].iter().any(|r| !(r[0] <= r[1]))) {
            return Err(Error::InvalidInput(format!("empty joint range in {bad:?}")));
        }
        let parents = skeleton
            .spanning_order()
            .into_iter()
            .filter_map(|(joint, bone)| {
                bone.map(|b| {
                    let bone = &skeleton.bones()[b];
                    (joint, if bone.a == joint { bone.b } else { bone.a })
                })
            })
            .collect();
        Ok(Self { skeleton, rest_pose, perturbation, limits, parents })
    }

    /// The bundled 17-joint skeleton standing upright with arms down.
    pub fn human17(perturbation: f64) -> Result<Self> {
        let skeleton = Skeleton::human17();
        let rest = rest_pose(&skeleton, DEFAULT_UNIT_BONE_MM, |name| human17_direction(name))?;
        let limits = skeleton.joint_names().iter().map(|n| human17_limits(n)).collect();
        Self::new(skeleton, rest, perturbation, limits)
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn rest_pose(&self) -> &JointSet3D {
        &self.rest_pose
    }

    pub fn limits(&self) -> &[JointLimits] {
        &self.limits
    }

    /// Pose from explicit per-joint offsets (clamped to the limits).
    pub fn pose_from_angles(&self, angles: &[[f64; 3]]) -> Result<JointSet3D> {
        if angles.len() != self.limits.len() {
            return Err(Error::ShapeMismatch(format!("{} angle triples for {} joints", angles.len(), self.limits.len())));
        }
        let rest = self.rest_pose.coords();
        let root = self.skeleton.root();
        let mut global = vec![Matrix3::identity(); rest.len()];
        let mut pos = vec![Vector3::zeros(); rest.len()];
        global[root] = euler(self.limits[root].clamp(angles[root]));
        pos[root] = Vector3::from(rest[root]);
        for &(child, parent) in &self.parents {
            let offset = Vector3::from(rest[child]) - Vector3::from(rest[parent]);
            pos[child] = pos[parent] + global[parent] * offset;
            global[child] = global[parent] * euler(self.limits[child].clamp(angles[child]));
        }
        JointSet3D::new(pos.iter().map(|p| [p.x, p.y, p.z]).collect(), root)
    }

    /// Gaussian offsets with standard deviation `perturbation`, clamped.
    pub fn sample_angles(&self, rng: &mut dyn RngCore) -> Vec<[f64; 3]> {
        if self.perturbation == 0.0 {
            return vec![[0.0; 3]; self.limits.len()];
        }
        let normal = Normal::new(0.0, self.perturbation).expect("validated scale");
        self.limits.iter().map(|l| l.clamp([0, 1, 2].map(|_| normal.sample(rng)))).collect()
    }

    pub fn sample_pose(&self, rng: &mut dyn RngCore) -> JointSet3D {
        let angles = self.sample_angles(rng);
        self.pose_from_angles(&angles).expect("angle count matches joints")
    }
}

/// Rest pose assembled by walking the skeleton from the root and laying each
/// bone along `direction(child joint name)`.
pub fn rest_pose(skeleton: &Skeleton, unit_length: f64, direction: impl Fn(&str) -> [f64; 3]) -> Result<JointSet3D> {
    let names = skeleton.joint_names();
    let mut pos = vec![[0.0; 3]; names.len()];
    for (joint, bone) in skeleton.spanning_order() {
        let Some(b) = bone else { continue };
        let bone = &skeleton.bones()[b];
        let parent = if bone.a == joint { bone.b } else { bone.a };
        let d = Vector3::from(direction(&names[joint]));
        if d.norm() == 0.0 {
            return Err(Error::InvalidInput(format!("zero rest direction for joint {}", names[joint])));
        }
        let p = Vector3::from(pos[parent]) + d.normalize() * bone.length * unit_length;
        pos[joint] = [p.x, p.y, p.z];
    }
    JointSet3D::new(pos, skeleton.root())
}

fn human17_direction(name: &str) -> [f64; 3] {
    match name {
        "right_hip" | "right_shoulder" => [1.0, 0.0, 0.0],
        "left_hip" | "left_shoulder" => [-1.0, 0.0, 0.0],
        "spine" | "thorax" | "neck" | "head" => [0.0, 0.0, 1.0],
        _ => [0.0, 0.0, -1.0],
    }
}

fn human17_limits(name: &str) -> JointLimits {
    let l = |x, y, z| JointLimits { x, y, z };
    match name {
        "pelvis" => l([-0.2, 0.2], [-0.15, 0.15], [-0.3, 0.3]),
        "right_hip" => l([-0.5, 1.8], [-0.8, 0.3], [-0.5, 0.5]),
        "left_hip" => l([-0.5, 1.8], [-0.3, 0.8], [-0.5, 0.5]),
        "right_knee" | "left_knee" => l([-2.2, 0.05], [0.0, 0.0], [0.0, 0.0]),
        "spine" => l([-0.6, 0.3], [-0.3, 0.3], [-0.5, 0.5]),
        "thorax" => l([-0.3, 0.2], [-0.2, 0.2], [-0.3, 0.3]),
        "neck" => l([-0.5, 0.4], [-0.4, 0.4], [-0.6, 0.6]),
        "right_shoulder" => l([-0.8, 2.8], [-1.6, 0.3], [-0.8, 0.8]),
        "left_shoulder" => l([-0.8, 2.8], [-0.3, 1.6], [-0.8, 0.8]),
        "right_elbow" | "left_elbow" => l([0.0, 2.4], [0.0, 0.0], [0.0, 0.0]),
        _ => JointLimits::FIXED,
    }
}

/// Sampling ranges for synthetic cameras; angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRanges {
    pub yaw_deg: [f64; 2],
    /// Negative pitch looks down at the subject.
    pub pitch_deg: [f64; 2],
    pub distance: [f64; 2],
    pub focal: [f64; 2],
}

impl Default for CameraRanges {
    fn default() -> Self {
        Self { yaw_deg: [0.0, 360.0], pitch_deg: [-45.0, 10.0], distance: [3000.0, 6000.0], focal: [900.0, 1200.0] }
    }
}

impl CameraRanges {
    pub fn validate(&self) -> Result<()> {
        let ordered = [self.yaw_deg, self.pitch_deg, self.distance, self.focal]
            .iter()
            .all(|r| r[0] <= r[1] && r[0].is_finite() && r[1].is_finite());
        if !ordered {
            return Err(Error::InvalidInput(format!("camera ranges must be finite and ordered: {self:?}")));
        }
        if self.pitch_deg[0] <= -90.0 || self.pitch_deg[1] >= 90.0 {
            return Err(Error::InvalidInput("camera pitch must stay inside (-90, 90) degrees".into()));
        }
        if self.distance[0] <= 0.0 || self.focal[0] <= 0.0 {
            return Err(Error::InvalidInput("camera distance and focal length must be positive".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut dyn RngCore, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Camera placed on a sphere around `target` and looking at it.
pub fn sample_camera(ranges: &CameraRanges, target: Vector3<f64>, rng: &mut dyn RngCore) -> Result<CameraInfo> {
    ranges.validate()?;
    let yaw = uniform(rng, ranges.yaw_deg).to_radians();
    let pitch = uniform(rng, ranges.pitch_deg).to_radians();
    let distance = uniform(rng, ranges.distance);
    let focal = uniform(rng, ranges.focal);
    // yaw 0 looks along −y, i.e. at the front of the rest pose
    let forward = Vector3::new(pitch.cos() * yaw.sin(), -pitch.cos() * yaw.cos(), pitch.sin());
    let extrinsics = CameraExtrinsics::look_at(target - distance * forward, target)?;
    Ok(CameraInfo { extrinsics, intrinsics: Intrinsics::new(focal, focal)? })
}

pub fn centroid(pose: &JointSet3D) -> Vector3<f64> {
    pose.coords().iter().map(|p| Vector3::from(*p)).sum::<Vector3<f64>>() / pose.len() as f64
}

/// Adds i.i.d. Gaussian noise to both coordinates of every non-root joint.
pub fn perturb_keypoints(p: &JointSet2D, sigma: f64, root: usize, rng: &mut dyn RngCore) -> Result<JointSet2D> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("noise sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(p.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let coords = p
        .coords()
        .iter()
        .enumerate()
        .map(|(j, c)| if j == root { *c } else { [c[0] + normal.sample(rng), c[1] + normal.sample(rng)] })
        .collect();
    JointSet2D::new(coords, p.visibility().to_vec())
}

/// How many pairs to label per example and with what tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSampling {
    pub num_pairs: usize,
    pub eps: f64,
}

/// Camera-frame ground truth, root-centred perspective keypoints with noise
/// `noise_sigma` (pixels) and sampled relative labels.
pub fn make_example(
    id: impl Into<String>,
    world: &JointSet3D,
    camera: &CameraInfo,
    noise_sigma: f64,
    pairs: PairSampling,
    rng: &mut dyn RngCore,
) -> Result<PoseExample> {
    let cam = camera.extrinsics.transform(world);
    let projected = project_perspective(&cam, 0.0, &camera.intrinsics)?;
    let root = cam.root_index();
    let r = projected.coords()[root];
    let centred = projected.map_coords(|c| [c[0] - r[0], c[1] - r[1]])?;
    let joints2d = perturb_keypoints(&centred, noise_sigma, root, rng)?;
    let annotations = sample_relative_pairs(&cam, pairs.num_pairs, pairs.eps, rng)?;
    let example = PoseExample {
        id: id.into(),
        joints2d,
        annotations,
        joints3d: Some(cam),
        camera: Some(camera.clone()),
        image_url: None,
    };
    example.validate()?;
    Ok(example)
}

/// `count` distinct unordered pairs chosen uniformly, each in a random
/// orientation, labelled from the depths of `pose`.
pub fn sample_relative_pairs(pose: &JointSet3D, count: usize, eps: f64, rng: &mut dyn RngCore) -> Result<RelativeAnnotationSet> {
    let j = pose.len();
    let available = j * (j - 1) / 2;
    if count == 0 || count > available {
        return Err(Error::TooManyPairs { requested: count, available });
    }
    let all: Vec<(usize, usize)> = (0..j).flat_map(|a| (a + 1..j).map(move |b| (a, b))).collect();
    let depths = pose.depths();
    let pairs = index::sample(rng, available, count)
        .into_iter()
        .map(|i| {
            let (a, b) = all[i];
            let (a, b) = if rng.random_bool(0.5) { (b, a) } else { (a, b) };
            PairLabel { j: a, k: b, r: Relation::from_depths(depths[a], depths[b], eps) }
        })
        .collect();
    RelativeAnnotationSet::new(pairs, eps, j)
}

/// Noise model for simulated relative-depth labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnnotatorModel {
    /// Every ±1 label is negated with probability `rate`.
    UniformFlip { rate: f64 },
    /// Correct with probability `max(floor, 1 − ½·exp(−|Δz|/τ))`.
    DistanceDependent { tau: f64, floor: f64 },
}

/// Depth gap (mm) and accuracy the distance-dependent model is calibrated to.
pub const CALIBRATION_GAP_MM: f64 = 250.0;
pub const CALIBRATION_ACCURACY: f64 = 0.93;

/// `τ` such that the distance-dependent model is correct with probability
/// `accuracy` at depth gap `gap`.
pub fn calibrate_tau(gap: f64, accuracy: f64) -> Result<f64> {
    if !(gap > 0.0 && accuracy > 0.5 && accuracy < 1.0) {
        return Err(Error::InvalidInput(format!("cannot calibrate to accuracy {accuracy} at gap {gap}")));
    }
    Ok(-gap / (2.0 * (1.0 - accuracy)).ln())
}

impl AnnotatorModel {
    pub fn calibrated() -> Self {
        let tau = calibrate_tau(CALIBRATION_GAP_MM, CALIBRATION_ACCURACY).expect("constants are valid");
        AnnotatorModel::DistanceDependent { tau, floor: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AnnotatorModel::UniformFlip { rate } if (0.0..=1.0).contains(&rate) => Ok(()),
            AnnotatorModel::DistanceDependent { tau, floor } if tau > 0.0 && tau.is_finite() && (0.5..=1.0).contains(&floor) => {
                Ok(())
            }
            other => Err(Error::InvalidInput(format!("invalid annotator model {other:?}"))),
        }
    }

    /// Probability that a label on a pair with depth gap `gap` is correct.
    pub fn accuracy(&self, gap: f64) -> f64 {
        match *self {
            AnnotatorModel::UniformFlip { rate } => 1.0 - rate,
            AnnotatorModel::DistanceDependent { tau, floor } => (1.0 - 0.5 * (-gap.abs() / tau).exp()).max(floor),
        }
    }
}

/// Negates each `±1` label with probability `1 − model.accuracy(gap)`; `r = 0`
/// labels are kept. `truth_gaps[i]` is the true `|Δz|` of pair `i`.
pub fn corrupt_labels(
    ann: &RelativeAnnotationSet,
    model: &AnnotatorModel,
    truth_gaps: &[f64],
    rng: &mut dyn RngCore,
) -> Result<RelativeAnnotationSet> {
    model.validate()?;
    if truth_gaps.len() != ann.len() {
        return Err(Error::ShapeMismatch(format!("{} gaps for {} pairs", truth_gaps.len(), ann.len())));
    }
    let relations: Vec<Relation> = ann
        .pairs()
        .iter()
        .zip(truth_gaps)
        .map(|(p, &gap)| {
            if p.r != Relation::Same && rng.random::<f64>() >= model.accuracy(gap) {
                p.r.flipped()
            } else {
                p.r
            }
        })
        .collect();
    Ok(ann.with_relations(relations))
}

/// Depth gaps `|z_j − z_k|` of every labelled pair.
pub fn pair_gaps(pose: &JointSet3D, ann: &RelativeAnnotationSet) -> Vec<f64> {
    let z = pose.depths();
    ann.pairs().iter().map(|p| (z[p.j] - z[p.k]).abs()).collect()
}

/// One forced binary vote: returns the truth with probability `skill`.
pub fn simulate_vote(j_closer: bool, skill: f64, rng: &mut dyn RngCore) -> Result<bool> {
    if !(skill > 0.5 && skill <= 1.0) {
        return Err(Error::InvalidInput(format!("annotator skill {skill} must lie in (0.5, 1]")));
    }
    Ok(if rng.random::<f64>() < skill { j_closer } else { !j_closer })
}

/// Settings for a whole synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_examples: usize,
    pub num_pairs: usize,
    pub eps: f64,
    pub noise_sigma: f64,
    pub perturbation: f64,
    pub camera: CameraRanges,
    pub label_noise: Option<AnnotatorModel>,
    pub seed: u64,
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_examples: 1000,
            num_pairs: 1,
            eps: 0.0,
            noise_sigma: 0.0,
            perturbation: 0.6,
            camera: CameraRanges::default(),
            label_noise: None,
            seed: 0,
            id_prefix: "synth".into(),
        }
    }
}

const MAX_CAMERA_ATTEMPTS: usize = 100;

/// Independent stream for example `index`, so any example can be regenerated
/// on its own.
pub fn example_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generates `config.num_examples` examples from the bundled skeleton.
pub fn generate_dataset(config: &SynthConfig) -> Result<Vec<PoseExample>> {
    let sampler = PoseSampler::human17(config.perturbation)?;
    generate_with(&sampler, config)
}

pub fn generate_with(sampler: &PoseSampler, config: &SynthConfig) -> Result<Vec<PoseExample>> {
    config.camera.validate()?;
    if let Some(model) = &config.label_noise {
        model.validate()?;
    }
    let pairs = PairSampling { num_pairs: config.num_pairs, eps: config.eps };
    (0..config.num_examples)
        .map(|i| {
            let mut rng = example_rng(config.seed, i as u64);
            let world = sampler.sample_pose(&mut rng);
            let target = centroid(&world);
            let id = format!("{}-{i:06}", config.id_prefix);
            let mut attempt = 0;
            let mut example = loop {
                let camera = sample_camera(&config.camera, target, &mut rng)?;
                match make_example(id.clone(), &world, &camera, config.noise_sigma, pairs, &mut rng) {
                    Err(Error::DegenerateDepth { .. }) if attempt + 1 < MAX_CAMERA_ATTEMPTS => attempt += 1,
                    other => break other?,
                }
            };
            if let Some(model) = &config.label_noise {
                let truth = example.joints3d.as_ref().expect("synthetic examples carry 3D");
                let gaps = pair_gaps(truth, &example.annotations);
                example.annotations = corrupt_labels(&example.annotations, model, &gaps, &mut rng)?;
            }
            Ok(example)
        })
        .collect()
}

/// Distance from the root to the thorax of the rest pose, or the distance
/// from the root to its farthest joint when there is no thorax.
pub fn torso_length(sampler: &PoseSampler) -> f64 {
    let rest = sampler.rest_pose().coords();
    let root = Vector3::from(rest[sampler.skeleton().root()]);
    match sampler.skeleton().joint_names().iter().position(|n| n == "thorax") {
        Some(t) => (Vector3::from(rest[t]) - root).norm(),
        None => rest.iter().map(|p| (Vector3::from(*p) - root).norm()).fold(0.0, f64::max),
    }
}

/// Bone lengths of `pose` divided by its unit-bone length.
pub fn normalized_bone_lengths(pose: &JointSet3D, skeleton: &Skeleton) -> Result<Vec<f64>> {
    let lengths = bone_lengths(pose, skeleton)?;
    let unit = lengths[skeleton.unit_bone()];
    Ok(lengths.iter().map(|l| l / unit).collect())
}
