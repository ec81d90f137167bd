//! Minibatch training of the lifting network: Adam, global-norm gradient
//! clipping, per-epoch checkpoints and a line-delimited training log.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, Protocol};
use crate::geometry::Intrinsics;
use crate::losses::{
    loss_total, perspective_degenerate_examples, LossBatch, LossTerms, LossValue, LossWeights, ProjectionMode,
    SupervisionMode,
};
use crate::net::{backward, forward, init_params, Mode, NetConfig, NetGradients, NetParams};
use crate::pose::{center_on_root, JointSet2D, JointSet3D, PoseExample, RelativeAnnotationSet, Skeleton};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub projection_mode: ProjectionMode,
    pub supervision_mode: SupervisionMode,
    pub loss_weights: LossWeights,
    /// Epochs between held-out evaluations; 0 disables them.
    pub eval_every: usize,
    /// Directory receiving `state.json` after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
    /// Line-delimited epoch records.
    pub log_path: Option<PathBuf>,
    /// Reference skeleton; the bundled one when absent.
    pub skeleton_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 64,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            seed: 0,
            projection_mode: ProjectionMode::Orthographic,
            supervision_mode: SupervisionMode::Relative,
            loss_weights: LossWeights::default(),
            eval_every: 1,
            checkpoint_dir: None,
            log_path: None,
            skeleton_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.clip_norm > 0.0 && self.adam_eps > 0.0) {
            return Err(Error::InvalidInput("learning_rate, clip_norm and adam_eps must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return Err(Error::InvalidInput("Adam betas must lie in [0, 1)".into()));
        }
        self.loss_weights.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn skeleton(&self) -> Result<Skeleton> {
        match &self.skeleton_path {
            Some(p) => Skeleton::load(p),
            None => Ok(Skeleton::human17()),
        }
    }
}

/// Scales every gradient by `clip_norm / g` when the global norm `g` exceeds
/// `clip_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut NetGradients, clip_norm: f64) -> Result<f64> {
    if !(clip_norm > 0.0) {
        return Err(Error::InvalidInput(format!("clip norm {clip_norm} must be positive")));
    }
    let norm = grads.global_norm();
    if norm > clip_norm {
        grads.scale(clip_norm / norm);
    }
    Ok(norm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(c: &TrainConfig) -> Self {
        Self { learning_rate: c.learning_rate, beta1: c.adam_beta1, beta2: c.adam_beta2, eps: c.adam_eps }
    }
}

/// First and second moment estimates, flattened in parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self { step: 0, m: vec![0.0; num_params], v: vec![0.0; num_params] }
    }
}

/// One bias-corrected Adam update over a list of parameter tensors.
pub fn adam_update(params: Vec<&mut [f64]>, grads: Vec<&[f64]>, state: &mut AdamState, hp: &AdamHyper) -> Result<()> {
    let total: usize = params.iter().map(|p| p.len()).sum();
    if params.len() != grads.len() || total != state.m.len() || total != state.v.len() {
        return Err(Error::ShapeMismatch(format!("Adam state holds {} values, parameters {total}", state.m.len())));
    }
    for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::ShapeMismatch(format!("tensor {i}: {} parameters, {} gradients", p.len(), g.len())));
        }
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteGradient { tensor: i });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    let mut offset = 0;
    for (p, g) in params.into_iter().zip(grads) {
        let m = &mut state.m[offset..offset + p.len()];
        let v = &mut state.v[offset..offset + p.len()];
        for (((w, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = hp.beta1 * *mi + (1.0 - hp.beta1) * gi;
            *vi = hp.beta2 * *vi + (1.0 - hp.beta2) * gi * gi;
            *w -= hp.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + hp.eps);
        }
        offset += g.len();
    }
    Ok(())
}

pub fn adam_step(params: &mut NetParams, grads: &NetGradients, state: &mut AdamState, hp: &AdamHyper) -> Result<()> {
    adam_update(params.trainable_mut(), grads.tensors(), state, hp)
}

/// Network plus the fixed input/output normalisation it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftingModel {
    pub params: NetParams,
    /// Root-centred 2D inputs are divided by this.
    pub input_scale: f64,
    /// Network outputs are multiplied by this.
    pub output_scale: f64,
    pub root: usize,
}

pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    model: LiftingModel,
}

const PREDICT_CHUNK: usize = 1024;

impl LiftingModel {
    pub fn new(params: NetParams, input_scale: f64, output_scale: f64, root: usize) -> Result<Self> {
        if !(input_scale > 0.0 && output_scale > 0.0 && input_scale.is_finite() && output_scale.is_finite()) {
            return Err(Error::InvalidInput(format!("scales must be positive: {input_scale}, {output_scale}")));
        }
        if root >= params.config.input_joints {
            return Err(Error::InvalidInput(format!("root {root} outside {} joints", params.config.input_joints)));
        }
        Ok(Self { params, input_scale, output_scale, root })
    }

    pub fn num_joints(&self) -> usize {
        self.params.config.input_joints
    }

    /// `N × 2J` network input: root-centred and normalised.
    pub fn input_matrix<'a>(&self, keypoints: impl ExactSizeIterator<Item = &'a JointSet2D>) -> Result<Array2<f64>> {
        let j = self.num_joints();
        let mut x = Array2::zeros((keypoints.len(), 2 * j));
        for (i, kp) in keypoints.enumerate() {
            if kp.len() != j {
                return Err(Error::ShapeMismatch(format!("{} keypoints for a {j}-joint model", kp.len())));
            }
            let centred = center_on_root(kp, self.root)?;
            for (jj, c) in centred.coords().iter().enumerate() {
                x[[i, 2 * jj]] = c[0] / self.input_scale;
                x[[i, 2 * jj + 1]] = c[1] / self.input_scale;
            }
        }
        Ok(x)
    }

    pub fn predict(&self, keypoints: &[JointSet2D]) -> Result<Vec<JointSet3D>> {
        let mut out = Vec::with_capacity(keypoints.len());
        for chunk in keypoints.chunks(PREDICT_CHUNK) {
            let x = self.input_matrix(chunk.iter())?;
            let f = forward(&self.params, &x.view(), Mode::Eval)?;
            for pose in f.poses.outer_iter() {
                let coords = pose.outer_iter().map(|c| [0, 1, 2].map(|k| c[k] * self.output_scale)).collect();
                out.push(JointSet3D::new(coords, self.root)?);
            }
        }
        Ok(out)
    }

    pub fn predict_examples(&self, examples: &[PoseExample]) -> Result<Vec<JointSet3D>> {
        let kp: Vec<JointSet2D> = examples.iter().map(|e| e.joints2d.clone()).collect();
        self.predict(&kp)
    }

    pub fn evaluate(&self, examples: &[PoseExample]) -> Result<EvalReport> {
        evaluate(&self.predict_examples(examples)?, examples, &Protocol::ALL, 0.0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json_atomic(path.as_ref(), &ModelFile { version: MODEL_VERSION, model: self.clone() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f: ModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if f.version != MODEL_VERSION {
            return Err(Error::CheckpointVersion(f.version));
        }
        f.model.params.config.validate()?;
        Ok(f.model)
    }
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer(&mut w, value)?;
        w.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

/// RMS of the root-centred visible 2D coordinates; 1 when there are none.
pub fn fit_input_scale(examples: &[PoseExample], root: usize) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for e in examples {
        let c = center_on_root(&e.joints2d, root)?;
        for (p, &v) in c.coords().iter().zip(c.visibility()) {
            if v {
                sum += p[0] * p[0] + p[1] * p[1];
                count += 2;
            }
        }
    }
    Ok(if sum > 0.0 { (sum / count as f64).sqrt() } else { 1.0 })
}

/// RMS of the root-centred 3D coordinates; 1 when no example has 3D.
pub fn fit_output_scale(examples: &[PoseExample]) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for t in examples.iter().filter_map(|e| e.joints3d.as_ref()) {
        for p in t.root_centered().coords() {
            sum += p.iter().map(|v| v * v).sum::<f64>();
            count += 3;
        }
    }
    if sum > 0.0 {
        (sum / count as f64).sqrt()
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Example-weighted means of the unweighted loss terms.
    pub terms: LossTerms,
    pub total: f64,
    /// Global gradient norm before clipping.
    pub mean_grad_norm: f64,
    pub max_grad_norm: f64,
    pub clipped_steps: usize,
    /// Examples left out of the loss for having a joint behind the camera.
    pub skipped_examples: usize,
    pub heldout: Option<EvalReport>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn last_heldout(&self) -> Option<&EvalReport> {
        self.epochs.iter().rev().find_map(|e| e.heldout.as_ref())
    }
}

/// Everything needed to continue training bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub version: u32,
    pub epochs_done: usize,
    pub model: LiftingModel,
    pub adam: AdamState,
    pub log: TrainLog,
}

pub const STATE_VERSION: u32 = 1;
pub const STATE_FILE: &str = "state.json";

impl TrainState {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json_atomic(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let s: TrainState = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if s.version != STATE_VERSION {
            return Err(Error::CheckpointVersion(s.version));
        }
        Ok(s)
    }
}

/// Dataset converted once into network units.
struct Prepared {
    inputs: Array2<f64>,
    keypoints: Vec<JointSet2D>,
    annotations: Vec<RelativeAnnotationSet>,
    targets: Option<Array3<f64>>,
    intrinsics: Option<Vec<Intrinsics>>,
}

pub struct Trainer {
    config: TrainConfig,
    skeleton: Skeleton,
}

impl Trainer {
    pub fn new(config: TrainConfig, skeleton: Skeleton) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, skeleton })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Fresh parameters and normalisation fitted to `train_set`.
    pub fn init_state(&self, net: &NetConfig, train_set: &[PoseExample]) -> Result<TrainState> {
        if net.input_joints != self.skeleton.num_joints() {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} joints, skeleton has {}",
                net.input_joints,
                self.skeleton.num_joints()
            )));
        }
        let params = init_params(net)?;
        let root = self.skeleton.root();
        let output_scale = match self.config.supervision_mode {
            SupervisionMode::Full3d => fit_output_scale(train_set),
            SupervisionMode::Relative => 1.0,
        };
        let model = LiftingModel::new(params, fit_input_scale(train_set, root)?, output_scale, root)?;
        let adam = AdamState::new(model.params.num_trainable());
        Ok(TrainState { version: STATE_VERSION, epochs_done: 0, model, adam, log: TrainLog::default() })
    }

    fn prepare(&self, model: &LiftingModel, data: &[PoseExample]) -> Result<Prepared> {
        let j = model.num_joints();
        for e in data {
            e.validate()?;
            if e.num_joints() != j {
                return Err(Error::ShapeMismatch(format!("example {} has {} joints, model {j}", e.id, e.num_joints())));
            }
        }
        let inputs = model.input_matrix(data.iter().map(|e| &e.joints2d))?;
        let keypoints = (0..data.len())
            .map(|i| {
                let coords = (0..j).map(|jj| [inputs[[i, 2 * jj]], inputs[[i, 2 * jj + 1]]]).collect();
                JointSet2D::new(coords, data[i].joints2d.visibility().to_vec())
            })
            .collect::<Result<_>>()?;
        let annotations = data.iter().map(|e| e.annotations.clone()).collect();
        let targets = match self.config.supervision_mode {
            SupervisionMode::Full3d => {
                let mut t = Array3::zeros((data.len(), j, 3));
                for (i, e) in data.iter().enumerate() {
                    let truth = e
                        .joints3d
                        .as_ref()
                        .ok_or_else(|| Error::MissingInput(format!("full3d training needs 3D for example {}", e.id)))?;
                    for (jj, c) in truth.root_centered().coords().iter().enumerate() {
                        for k in 0..3 {
                            t[[i, jj, k]] = c[k] / model.output_scale;
                        }
                    }
                }
                Some(t)
            }
            SupervisionMode::Relative => None,
        };
        let intrinsics = match self.config.projection_mode {
            ProjectionMode::Perspective => Some(
                data.iter()
                    .map(|e| {
                        e.camera
                            .as_ref()
                            .ok_or_else(|| Error::MissingInput(format!("perspective loss needs intrinsics for {}", e.id)))?
                            .intrinsics
                            .rescaled(1.0 / model.input_scale)
                    })
                    .collect::<Result<_>>()?,
            ),
            ProjectionMode::Orthographic => None,
        };
        Ok(Prepared { inputs, keypoints, annotations, targets, intrinsics })
    }

    /// Loss over the examples of `idx`, leaving out (with zero gradient) any
    /// example the perspective model cannot project.
    fn batch_loss(&self, data: &Prepared, idx: &[usize], poses: &ArrayView3<f64>, scales: &ArrayView1<f64>) -> Result<(LossValue, usize)> {
        let keypoints: Vec<JointSet2D> = idx.iter().map(|&i| data.keypoints[i].clone()).collect();
        let mut keep: Vec<usize> = (0..idx.len()).collect();
        let uses_perspective = self.config.projection_mode == ProjectionMode::Perspective
            && self.config.supervision_mode == SupervisionMode::Relative
            && self.config.loss_weights.beta > 0.0;
        if uses_perspective {
            let bad = perspective_degenerate_examples(poses, scales, &keypoints);
            keep.retain(|i| !bad.contains(i));
        }
        let skipped = idx.len() - keep.len();
        let (n, j, _) = poses.dim();
        if keep.is_empty() {
            let zero = LossValue { total: 0.0, terms: LossTerms::default(), grad_poses: Array3::zeros((n, j, 3)), grad_scales: Array1::zeros(n) };
            return Ok((zero, skipped));
        }
        let sub_idx: Vec<usize> = keep.iter().map(|&b| idx[b]).collect();
        let sub_poses = poses.select(Axis(0), &keep);
        let sub_scales = scales.select(Axis(0), &keep);
        let sub_kp: Vec<JointSet2D> = keep.iter().map(|&b| keypoints[b].clone()).collect();
        let sub_ann: Vec<RelativeAnnotationSet> = sub_idx.iter().map(|&i| data.annotations[i].clone()).collect();
        let sub_targets = data.targets.as_ref().map(|t| t.select(Axis(0), &sub_idx));
        let sub_k: Option<Vec<Intrinsics>> = data.intrinsics.as_ref().map(|k| sub_idx.iter().map(|&i| k[i]).collect());
        let batch = LossBatch {
            keypoints: &sub_kp,
            annotations: Some(&sub_ann),
            targets: sub_targets.as_ref().map(|t| t.view()),
            intrinsics: sub_k.as_deref(),
            skeleton: &self.skeleton,
        };
        let value = loss_total(
            &sub_poses.view(),
            &sub_scales.view(),
            &batch,
            &self.config.loss_weights,
            self.config.projection_mode,
            self.config.supervision_mode,
        )?;
        if skipped == 0 {
            return Ok((value, 0));
        }
        let mut grad_poses = Array3::zeros((n, j, 3));
        let mut grad_scales = Array1::zeros(n);
        for (row, &b) in keep.iter().enumerate() {
            grad_poses.index_axis_mut(Axis(0), b).assign(&value.grad_poses.index_axis(Axis(0), row));
            grad_scales[b] = value.grad_scales[row];
        }
        Ok((LossValue { grad_poses, grad_scales, ..value }, skipped))
    }

    fn state_path(&self) -> Option<PathBuf> {
        self.config.checkpoint_dir.as_ref().map(|d| d.join(STATE_FILE))
    }

    /// Continues `state` up to `config.epochs` epochs.
    pub fn run(&self, mut state: TrainState, train_set: &[PoseExample], heldout: &[PoseExample]) -> Result<TrainState> {
        let cfg = &self.config;
        if state.epochs_done >= cfg.epochs {
            return Ok(state);
        }
        if train_set.is_empty() {
            return Err(Error::InvalidInput("empty training set".into()));
        }
        let data = self.prepare(&state.model, train_set)?;
        if let Some(dir) = &cfg.checkpoint_dir {
            fs::create_dir_all(dir)?;
        }
        let mut log_file = match &cfg.log_path {
            Some(p) => Some(BufWriter::new(
                OpenOptions::new().create(true).write(true).append(state.epochs_done > 0).truncate(state.epochs_done == 0).open(p)?,
            )),
            None => None,
        };
        let hp = AdamHyper::from(cfg);
        let mut last_good = self.state_path().filter(|p| state.epochs_done > 0 && p.exists());
        for epoch in state.epochs_done..cfg.epochs {
            let started = Instant::now();
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            order.shuffle(&mut epoch_rng(cfg.seed, epoch, 0));
            let mut dropout_rng = epoch_rng(cfg.seed, epoch, 1);

            let mut rec = EpochRecord {
                epoch,
                steps: 0,
                terms: LossTerms::default(),
                total: 0.0,
                mean_grad_norm: 0.0,
                max_grad_norm: 0.0,
                clipped_steps: 0,
                skipped_examples: 0,
                heldout: None,
                wall_ms: 0,
            };
            let mut weight = 0.0;
            for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
                let x = data.inputs.select(Axis(0), idx);
                let out = forward(&state.model.params, &x.view(), Mode::Train(&mut dropout_rng))?;
                let (loss, skipped) = self.batch_loss(&data, idx, &out.poses.view(), &out.scales.view())?;
                let diverged = |reason: String| Error::Diverged { epoch, step, reason, last_good: last_good.clone() };
                if !loss.total.is_finite() {
                    return Err(diverged(format!("loss is {}", loss.total)));
                }
                let mut grads = backward(
                    &state.model.params,
                    &out.cache,
                    &loss.grad_poses.view(),
                    loss.grad_scales.as_slice().expect("contiguous"),
                )?;
                let norm = clip_gradients(&mut grads, cfg.clip_norm)?;
                if !norm.is_finite() {
                    return Err(diverged(format!("gradient norm is {norm}")));
                }
                adam_step(&mut state.model.params, &grads, &mut state.adam, &hp)?;
                state.model.params.update_running_stats(&out.cache)?;
                if !state.model.params.is_finite() {
                    return Err(diverged("parameters became non-finite".into()));
                }

                let w = (idx.len() - skipped) as f64;
                weight += w;
                let t = &mut rec.terms;
                t.root += w * loss.terms.root;
                t.rel += w * loss.terms.rel;
                t.proj += w * loss.terms.proj;
                t.skel += w * loss.terms.skel;
                t.sup += w * loss.terms.sup;
                rec.total += w * loss.total;
                rec.mean_grad_norm += norm;
                rec.max_grad_norm = rec.max_grad_norm.max(norm);
                rec.clipped_steps += (norm > cfg.clip_norm) as usize;
                rec.skipped_examples += skipped;
                rec.steps += 1;
            }
            if weight > 0.0 {
                let t = &mut rec.terms;
                for v in [&mut t.root, &mut t.rel, &mut t.proj, &mut t.skel, &mut t.sup, &mut rec.total] {
                    *v /= weight;
                }
            }
            rec.mean_grad_norm /= rec.steps.max(1) as f64;
            if rec.skipped_examples > 0 {
                log::warn!("epoch {epoch}: skipped {} examples with joints behind the camera", rec.skipped_examples);
            }
            let due = cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs);
            if due && !heldout.is_empty() {
                rec.heldout = Some(state.model.evaluate(heldout)?);
            }
            rec.wall_ms = started.elapsed().as_millis() as u64;
            log::info!(
                "epoch {epoch}: loss {:.5} grad {:.3}{}",
                rec.total,
                rec.mean_grad_norm,
                rec.heldout.as_ref().map(|h| format!(" heldout {h}")).unwrap_or_default()
            );
            if let Some(f) = log_file.as_mut() {
                serde_json::to_writer(&mut *f, &rec)?;
                f.write_all(b"\n")?;
                f.flush()?;
            }
            state.log.epochs.push(rec);
            state.epochs_done = epoch + 1;
            if let Some(path) = self.state_path() {
                state.save(&path)?;
                last_good = Some(path);
            }
        }
        Ok(state)
    }
}

/// Independent random stream per (epoch, purpose), so resuming at an epoch
/// boundary replays the same shuffles and dropout masks.
fn epoch_rng(seed: u64, epoch: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * epoch as u64 + purpose);
    rng
}

/// Trains from scratch; the skeleton comes from `train_cfg.skeleton_path` or
/// the bundled file.
pub fn train(
    net_cfg: &NetConfig,
    train_cfg: &TrainConfig,
    train_set: &[PoseExample],
    heldout: &[PoseExample],
) -> Result<(LiftingModel, TrainLog)> {
    let trainer = Trainer::new(train_cfg.clone(), train_cfg.skeleton()?)?;
    let state = trainer.init_state(net_cfg, train_set)?;
    let state = trainer.run(state, train_set, heldout)?;
    Ok((state.model, state.log))
}

/// Continues from the `state.json` in `train_cfg.checkpoint_dir`.
pub fn resume(train_cfg: &TrainConfig, train_set: &[PoseExample], heldout: &[PoseExample]) -> Result<(LiftingModel, TrainLog)> {
    let trainer = Trainer::new(train_cfg.clone(), train_cfg.skeleton()?)?;
    let path = trainer.state_path().ok_or_else(|| Error::MissingInput("resume needs checkpoint_dir".into()))?;
    let state = trainer.run(TrainState::load(path)?, train_set, heldout)?;
    Ok((state.model, state.log))
}
