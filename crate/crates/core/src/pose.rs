//! Pose domain types, the line-delimited dataset format and input
//! normalization.

use std::collections::{HashSet, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraExtrinsics, Intrinsics};

/// 2D keypoints in pixels relative to the principal point, with visibility.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSet2D {
    coords: Vec<[f64; 2]>,
    visibility: Vec<bool>,
}

impl JointSet2D {
    pub fn new(coords: Vec<[f64; 2]>, visibility: Vec<bool>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::validation(format!("need at least 2 joints, got {}", coords.len())));
        }
        if visibility.len() != coords.len() {
            return Err(Error::validation(format!(
                "{} visibility flags for {} joints",
                visibility.len(),
                coords.len()
            )));
        }
        if !coords.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::validation("2D coordinates must be finite"));
        }
        Ok(Self { coords, visibility })
    }

    pub fn all_visible(coords: Vec<[f64; 2]>) -> Result<Self> {
        let n = coords.len();
        Self::new(coords, vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn visibility(&self) -> &[bool] {
        &self.visibility
    }

    pub fn map_coords(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Result<Self> {
        Self::new(self.coords.iter().map(|&c| f(c)).collect(), self.visibility.clone())
    }
}

/// 3D joint positions with a designated root joint.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSet3D {
    coords: Vec<[f64; 3]>,
    root_index: usize,
}

impl JointSet3D {
    pub fn new(coords: Vec<[f64; 3]>, root_index: usize) -> Result<Self> {
        if root_index >= coords.len() {
            return Err(Error::validation(format!(
                "root index {root_index} out of range for {} joints",
                coords.len()
            )));
        }
        if !coords.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::validation("3D coordinates must be finite"));
        }
        Ok(Self { coords, root_index })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn root_index(&self) -> usize {
        self.root_index
    }

    pub fn depths(&self) -> Vec<f64> {
        self.coords.iter().map(|c| c[2]).collect()
    }

    /// Applies `f` to every joint. Panics if `f` produces non-finite values.
    pub fn map_coords(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        Self::new(self.coords.iter().map(|&c| f(c)).collect(), self.root_index)
            .expect("map_coords produced an invalid joint set")
    }

    /// Translates the pose so the root joint sits at the origin.
    pub fn root_centered(&self) -> Self {
        let r = self.coords[self.root_index];
        self.map_coords(|c| [c[0] - r[0], c[1] - r[1], c[2] - r[2]])
    }
}

/// One bone `(b¹, b², l)` of a skeleton.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bone {
    pub a: usize,
    pub b: usize,
    pub length: f64,
}

/// Bones with reference lengths normalized so the unit bone has length 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonFile", into = "SkeletonFile")]
pub struct Skeleton {
    joint_names: Vec<String>,
    root: usize,
    bones: Vec<Bone>,
    unit_bone: usize,
}

#[derive(Serialize, Deserialize)]
struct SkeletonFile {
    joints: Vec<String>,
    root: usize,
    bones: Vec<(usize, usize, f64)>,
    unit_bone: usize,
}

impl TryFrom<SkeletonFile> for Skeleton {
    type Error = Error;
    fn try_from(f: SkeletonFile) -> Result<Self> {
        let bones = f.bones.into_iter().map(|(a, b, length)| Bone { a, b, length }).collect();
        Skeleton::new(f.joints, f.root, bones, f.unit_bone)
    }
}

impl From<Skeleton> for SkeletonFile {
    fn from(s: Skeleton) -> Self {
        SkeletonFile {
            joints: s.joint_names,
            root: s.root,
            bones: s.bones.iter().map(|b| (b.a, b.b, b.length)).collect(),
            unit_bone: s.unit_bone,
        }
    }
}

const BUNDLED_SKELETON: &str = include_str!("../assets/skeleton17.json");

impl Skeleton {
    /// Builds a skeleton from already-normalized lengths.
    pub fn new(joint_names: Vec<String>, root: usize, bones: Vec<Bone>, unit_bone: usize) -> Result<Self> {
        let j = joint_names.len();
        if j < 2 {
            return Err(Error::validation("skeleton needs at least 2 joints"));
        }
        if root >= j {
            return Err(Error::validation(format!("root {root} out of range")));
        }
        if unit_bone >= bones.len() {
            return Err(Error::validation(format!("unit bone {unit_bone} out of range")));
        }
        for (i, bone) in bones.iter().enumerate() {
            if bone.a == bone.b || bone.a >= j || bone.b >= j {
                return Err(Error::validation(format!("bone {i} has invalid endpoints ({}, {})", bone.a, bone.b)));
            }
            if !(bone.length > 0.0 && bone.length.is_finite()) {
                return Err(Error::validation(format!("bone {i} has non-positive length {}", bone.length)));
            }
        }
        if (bones[unit_bone].length - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "unit bone has length {}, expected 1 after normalization",
                bones[unit_bone].length
            )));
        }
        let skel = Self { joint_names, root, bones, unit_bone };
        if skel.spanning_order().len() != j {
            return Err(Error::validation("bone graph does not connect every joint"));
        }
        Ok(skel)
    }

    /// Builds a skeleton from raw lengths, dividing by the unit bone's length.
    pub fn from_raw_lengths(joint_names: Vec<String>, root: usize, bones: Vec<Bone>, unit_bone: usize) -> Result<Self> {
        let unit = bones
            .get(unit_bone)
            .map(|b| b.length)
            .ok_or_else(|| Error::validation(format!("unit bone {unit_bone} out of range")))?;
        if !(unit > 0.0) {
            return Err(Error::validation("unit bone must have positive length"));
        }
        let bones = bones.into_iter().map(|b| Bone { length: b.length / unit, ..b }).collect();
        Self::new(joint_names, root, bones, unit_bone)
    }

    /// The 17-joint human skeleton shipped with the crate (pelvis root).
    pub fn human17() -> Self {
        serde_json::from_str(BUNDLED_SKELETON).expect("bundled skeleton is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn unit_bone(&self) -> usize {
        self.unit_bone
    }

    /// Joints reachable from the root in breadth-first order, each paired with
    /// the bone index that reached it (`None` for the root).
    pub fn spanning_order(&self) -> Vec<(usize, Option<usize>)> {
        let mut seen = vec![false; self.num_joints()];
        let mut order = vec![(self.root, None)];
        let mut queue = VecDeque::from([self.root]);
        seen[self.root] = true;
        while let Some(joint) = queue.pop_front() {
            for (i, bone) in self.bones.iter().enumerate() {
                let other = if bone.a == joint {
                    bone.b
                } else if bone.b == joint {
                    bone.a
                } else {
                    continue;
                };
                if !seen[other] {
                    seen[other] = true;
                    order.push((other, Some(i)));
                    queue.push_back(other);
                }
            }
        }
        order
    }
}

/// Relative depth label for a pair `(j, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    /// `r = −1`: joint `j` is closer to the camera.
    Closer,
    /// `r = 0`: within the tolerance band.
    Same,
    /// `r = +1`: joint `k` is closer to the camera.
    Farther,
}

impl Relation {
    pub fn from_int(r: i64) -> Result<Self> {
        match r {
            -1 => Ok(Relation::Closer),
            0 => Ok(Relation::Same),
            1 => Ok(Relation::Farther),
            other => Err(Error::InvalidRelation(other)),
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Relation::Closer => -1,
            Relation::Same => 0,
            Relation::Farther => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Relation::Closer => Relation::Farther,
            Relation::Same => Relation::Same,
            Relation::Farther => Relation::Closer,
        }
    }

    /// Label for depths `z_j`, `z_k` with tolerance `eps`.
    pub fn from_depths(z_j: f64, z_k: f64, eps: f64) -> Self {
        if z_j < z_k - eps {
            Relation::Closer
        } else if z_k < z_j - eps {
            Relation::Farther
        } else {
            Relation::Same
        }
    }
}

/// Serialized as the integer `r`.
impl serde::Serialize for Relation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.sign())
    }
}

impl<'de> serde::Deserialize<'de> for Relation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Relation::from_int(<i64 as serde::Deserialize>::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairLabel {
    pub j: usize,
    pub k: usize,
    pub r: Relation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeAnnotationSet {
    pairs: Vec<PairLabel>,
    tolerance_eps: f64,
}

impl RelativeAnnotationSet {
    /// Validates indices against `num_joints`, self-pairs and duplicate
    /// unordered pairs.
    pub fn new(pairs: Vec<PairLabel>, tolerance_eps: f64, num_joints: usize) -> Result<Self> {
        let max_pairs = num_joints * num_joints.saturating_sub(1) / 2;
        if pairs.is_empty() || pairs.len() > max_pairs {
            return Err(Error::validation(format!(
                "annotation count {} outside 1..={max_pairs}",
                pairs.len()
            )));
        }
        if !(tolerance_eps >= 0.0 && tolerance_eps.is_finite()) {
            return Err(Error::validation(format!("tolerance {tolerance_eps} must be non-negative")));
        }
        let mut seen = HashSet::with_capacity(pairs.len());
        for p in &pairs {
            if p.j == p.k {
                return Err(Error::validation(format!("pair ({}, {}) compares a joint with itself", p.j, p.k)));
            }
            if p.j >= num_joints || p.k >= num_joints {
                return Err(Error::validation(format!("pair ({}, {}) out of range", p.j, p.k)));
            }
            if !seen.insert((p.j.min(p.k), p.j.max(p.k))) {
                return Err(Error::validation(format!("duplicate pair ({}, {})", p.j, p.k)));
            }
        }
        Ok(Self { pairs, tolerance_eps })
    }

    pub fn pairs(&self) -> &[PairLabel] {
        &self.pairs
    }

    pub fn tolerance_eps(&self) -> f64 {
        self.tolerance_eps
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn with_relations(&self, relations: impl IntoIterator<Item = Relation>) -> Self {
        let pairs = self.pairs.iter().zip(relations).map(|(p, r)| PairLabel { r, ..*p }).collect();
        Self { pairs, tolerance_eps: self.tolerance_eps }
    }
}

/// Camera pose and focal lengths of an example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraInfo {
    pub extrinsics: CameraExtrinsics,
    pub intrinsics: Intrinsics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseExample {
    pub id: String,
    pub joints2d: JointSet2D,
    pub annotations: RelativeAnnotationSet,
    pub joints3d: Option<JointSet3D>,
    pub camera: Option<CameraInfo>,
    pub image_url: Option<String>,
}

impl PoseExample {
    pub fn validate(&self) -> Result<()> {
        let j = self.joints2d.len();
        RelativeAnnotationSet::new(self.annotations.pairs.clone(), self.annotations.tolerance_eps, j)?;
        if let Some(p3) = &self.joints3d {
            if p3.len() != j {
                return Err(Error::validation(format!("{} 3D joints vs {j} 2D joints", p3.len())));
            }
        }
        Ok(())
    }

    pub fn num_joints(&self) -> usize {
        self.joints2d.len()
    }
}

/// Wire format of one dataset line.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Record {
    id: String,
    joints2d: Vec<[f64; 2]>,
    vis: Vec<u8>,
    pairs: Vec<(usize, usize, i64)>,
    #[serde(default)]
    eps: f64,
    #[serde(default)]
    root: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joints3d: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    camera: Option<CameraRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_url: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraRecord {
    #[serde(flatten)]
    extrinsics: CameraExtrinsics,
    #[serde(flatten)]
    intrinsics: Intrinsics,
}

impl Record {
    fn into_example(self) -> Result<PoseExample> {
        let visibility = self
            .vis
            .iter()
            .map(|&v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::validation(format!("visibility flag {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let joints2d = JointSet2D::new(self.joints2d, visibility)?;
        let pairs = self
            .pairs
            .into_iter()
            .map(|(j, k, r)| Ok(PairLabel { j, k, r: Relation::from_int(r)? }))
            .collect::<Result<Vec<_>>>()?;
        let annotations = RelativeAnnotationSet::new(pairs, self.eps, joints2d.len())?;
        let joints3d = self.joints3d.map(|c| JointSet3D::new(c, self.root)).transpose()?;
        let example = PoseExample {
            id: self.id,
            joints2d,
            annotations,
            joints3d,
            camera: self.camera.map(|c| CameraInfo { extrinsics: c.extrinsics, intrinsics: c.intrinsics }),
            image_url: self.image_url,
        };
        example.validate()?;
        Ok(example)
    }

    fn from_example(ex: &PoseExample) -> Self {
        Record {
            id: ex.id.clone(),
            joints2d: ex.joints2d.coords.clone(),
            vis: ex.joints2d.visibility.iter().map(|&v| v as u8).collect(),
            pairs: ex.annotations.pairs.iter().map(|p| (p.j, p.k, p.r.sign() as i64)).collect(),
            eps: ex.annotations.tolerance_eps,
            root: ex.joints3d.as_ref().map_or(0, |p| p.root_index),
            joints3d: ex.joints3d.as_ref().map(|p| p.coords.clone()),
            camera: ex.camera.map(|c| CameraRecord { extrinsics: c.extrinsics, intrinsics: c.intrinsics }),
            image_url: ex.image_url.clone(),
        }
    }
}

pub fn parse_example(line: &str) -> Result<PoseExample> {
    let record: Record = serde_json::from_str(line)?;
    record.into_example()
}

pub fn example_to_line(example: &PoseExample) -> String {
    serde_json::to_string(&Record::from_example(example)).expect("records always serialize")
}

/// Reads a line-delimited dataset. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn read_dataset(reader: impl BufRead) -> Result<Vec<PoseExample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(record.into_example().map_err(|e| e.at_line(i + 1))?);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<PoseExample>> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn write_dataset(mut writer: impl Write, examples: &[PoseExample]) -> Result<()> {
    for ex in examples {
        writeln!(writer, "{}", example_to_line(ex))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, examples: &[PoseExample]) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), examples)
}

/// Shifts every joint so the root lands on `(0, 0)`.
pub fn center_on_root(p: &JointSet2D, root_index: usize) -> Result<JointSet2D> {
    match p.visibility.get(root_index) {
        Some(true) => {}
        Some(false) => return Err(Error::InvisibleRoot(root_index)),
        None => return Err(Error::InvalidInput(format!("root index {root_index} out of range"))),
    }
    let [ru, rv] = p.coords[root_index];
    p.map_coords(|[u, v]| [u - ru, v - rv])
}

/// Euclidean length of every bone in `pose`.
pub fn bone_lengths(pose: &JointSet3D, skeleton: &Skeleton) -> Result<Vec<f64>> {
    if pose.len() != skeleton.num_joints() {
        return Err(Error::ShapeMismatch(format!(
            "pose has {} joints, skeleton {}",
            pose.len(),
            skeleton.num_joints()
        )));
    }
    Ok(skeleton
        .bones
        .iter()
        .map(|bone| {
            let (p, q) = (pose.coords[bone.a], pose.coords[bone.b]);
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
        })
        .collect())
}
