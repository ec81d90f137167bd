//! Fully connected lifting network `ℝ^{2J} → ℝ^{3J}` with a bounded scale head.
//!
//! Layout: `Linear(2J→H) → BN → ReLU → Dropout`, then residual blocks of two
//! such units with an additive skip, then `Linear(H→3J)` for the pose. The
//! scale head `Linear(H→1)` reads the same final hidden activations and is
//! squashed to `(0, r)` with a scaled sigmoid.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::distr::{Distribution, Uniform};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::central_differences;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub hidden_width: usize,
    pub num_residual_blocks: usize,
    pub dropout_rate: f64,
    pub scale_range_r: f64,
    pub input_joints: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden_width: 1024,
            num_residual_blocks: 1,
            dropout_rate: 0.5,
            scale_range_r: 1.0,
            input_joints: 17,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.num_residual_blocks == 0 || self.input_joints < 2 {
            return Err(Error::InvalidInput(format!(
                "hidden_width, num_residual_blocks must be positive and input_joints >= 2: {self:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidInput(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        if !(self.scale_range_r > 0.0 && self.scale_range_r.is_finite()) {
            return Err(Error::InvalidInput(format!("scale_range_r {} must be positive", self.scale_range_r)));
        }
        Ok(())
    }
}

/// `y = x W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn init(fan_in: usize, fan_out: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let weight = Array2::from_shape_fn((fan_in, fan_out), |_| dist.sample(rng));
        Self { weight, bias: Array1::zeros(fan_out) }
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Gradients for upstream `dy`, plus the gradient with respect to `x`.
    pub fn backward(&self, x: &ArrayView2<f64>, dy: &ArrayView2<f64>) -> (LinearGrad, Array2<f64>) {
        let grad = LinearGrad { weight: x.t().dot(dy), bias: dy.sum_axis(Axis(0)) };
        (grad, dy.dot(&self.weight.t()))
    }

    fn zero_grad(&self) -> LinearGrad {
        LinearGrad { weight: Array2::zeros(self.weight.raw_dim()), bias: Array1::zeros(self.bias.len()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrad {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }

    fn zero_grad(&self) -> BatchNormGrad {
        BatchNormGrad { gamma: Array1::zeros(self.gamma.len()), beta: Array1::zeros(self.beta.len()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub first: Linear,
    pub first_bn: BatchNorm,
    pub second: Linear,
    pub second_bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlockGrad {
    pub first: LinearGrad,
    pub first_bn: BatchNormGrad,
    pub second: LinearGrad,
    pub second_bn: BatchNormGrad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub config: NetConfig,
    pub input: Linear,
    pub input_bn: BatchNorm,
    pub blocks: Vec<ResidualBlock>,
    pub output: Linear,
    pub scale_head: Linear,
}

/// Gradients with the same layout as the trainable part of [`NetParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub input: LinearGrad,
    pub input_bn: BatchNormGrad,
    pub blocks: Vec<ResidualBlockGrad>,
    pub output: LinearGrad,
    pub scale_head: LinearGrad,
}

fn slice(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

/// Deterministic parameter initialisation from `config.seed`.
pub fn init_params(config: &NetConfig) -> Result<NetParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (j, h) = (config.input_joints, config.hidden_width);
    let relu_bound = |fan_in: usize| (6.0 / fan_in as f64).sqrt();
    let head_bound = |fan_in: usize| (1.0 / fan_in as f64).sqrt();

    let input = Linear::init(2 * j, h, relu_bound(2 * j), &mut rng);
    let blocks = (0..config.num_residual_blocks)
        .map(|_| ResidualBlock {
            first: Linear::init(h, h, relu_bound(h), &mut rng),
            first_bn: BatchNorm::new(h),
            second: Linear::init(h, h, relu_bound(h), &mut rng),
            second_bn: BatchNorm::new(h),
        })
        .collect();
    let output = Linear::init(h, 3 * j, head_bound(h), &mut rng);
    let scale_head = Linear::init(h, 1, head_bound(h), &mut rng);
    Ok(NetParams { config: config.clone(), input, input_bn: BatchNorm::new(h), blocks, output, scale_head })
}

impl NetParams {
    /// Trainable tensors in canonical order (running statistics excluded).
    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut out = vec![slice2(&self.input.weight), slice(&self.input.bias)];
        out.extend([slice(&self.input_bn.gamma), slice(&self.input_bn.beta)]);
        for b in &self.blocks {
            out.extend([slice2(&b.first.weight), slice(&b.first.bias)]);
            out.extend([slice(&b.first_bn.gamma), slice(&b.first_bn.beta)]);
            out.extend([slice2(&b.second.weight), slice(&b.second.bias)]);
            out.extend([slice(&b.second_bn.gamma), slice(&b.second_bn.beta)]);
        }
        out.extend([slice2(&self.output.weight), slice(&self.output.bias)]);
        out.extend([slice2(&self.scale_head.weight), slice(&self.scale_head.bias)]);
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![slice2_mut(&mut self.input.weight), slice_mut(&mut self.input.bias)];
        out.push(slice_mut(&mut self.input_bn.gamma));
        out.push(slice_mut(&mut self.input_bn.beta));
        for b in &mut self.blocks {
            out.push(slice2_mut(&mut b.first.weight));
            out.push(slice_mut(&mut b.first.bias));
            out.push(slice_mut(&mut b.first_bn.gamma));
            out.push(slice_mut(&mut b.first_bn.beta));
            out.push(slice2_mut(&mut b.second.weight));
            out.push(slice_mut(&mut b.second.bias));
            out.push(slice_mut(&mut b.second_bn.gamma));
            out.push(slice_mut(&mut b.second_bn.beta));
        }
        out.push(slice2_mut(&mut self.output.weight));
        out.push(slice_mut(&mut self.output.bias));
        out.push(slice2_mut(&mut self.scale_head.weight));
        out.push(slice_mut(&mut self.scale_head.bias));
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.trainable().concat()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.trainable_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        assert_eq!(offset, flat.len(), "flat parameter vector has the wrong length");
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.trainable().iter().all(|t| t.iter().all(|v| v.is_finite()))
            && self.batch_norms().all(|bn| {
                bn.running_mean.iter().chain(bn.running_var.iter()).all(|v| v.is_finite())
            })
    }

    fn batch_norms(&self) -> impl Iterator<Item = &BatchNorm> {
        std::iter::once(&self.input_bn).chain(self.blocks.iter().flat_map(|b| [&b.first_bn, &b.second_bn]))
    }

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        let mut out = vec![&mut self.input_bn];
        for b in &mut self.blocks {
            out.push(&mut b.first_bn);
            out.push(&mut b.second_bn);
        }
        out
    }

    pub fn zero_gradients(&self) -> NetGradients {
        NetGradients {
            input: self.input.zero_grad(),
            input_bn: self.input_bn.zero_grad(),
            blocks: self
                .blocks
                .iter()
                .map(|b| ResidualBlockGrad {
                    first: b.first.zero_grad(),
                    first_bn: b.first_bn.zero_grad(),
                    second: b.second.zero_grad(),
                    second_bn: b.second_bn.zero_grad(),
                })
                .collect(),
            output: self.output.zero_grad(),
            scale_head: self.scale_head.zero_grad(),
        }
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// estimates (exponential moving average, unbiased variance).
    pub fn update_running_stats(&mut self, cache: &ForwardCache) -> Result<()> {
        if !cache.train {
            return Err(Error::CacheMismatch("running statistics need a train-mode cache".into()));
        }
        let n = cache.batch_size as f64;
        let correction = if cache.batch_size > 1 { n / (n - 1.0) } else { 1.0 };
        let units = cache.units();
        let bns = self.batch_norms_mut();
        if units.len() != bns.len() {
            return Err(Error::CacheMismatch("unit count differs from parameter layout".into()));
        }
        for (bn, unit) in bns.into_iter().zip(units) {
            bn.running_mean.zip_mut_with(&unit.batch_mean, |r, &m| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m);
            bn.running_var
                .zip_mut_with(&unit.batch_var, |r, &v| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * correction);
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &Checkpoint { version: CHECKPOINT_VERSION, params: self.clone() })?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion(ck.version));
        }
        ck.params.config.validate()?;
        Ok(ck.params)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    params: NetParams,
}

impl NetGradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![slice2(&self.input.weight), slice(&self.input.bias)];
        out.extend([slice(&self.input_bn.gamma), slice(&self.input_bn.beta)]);
        for b in &self.blocks {
            out.extend([slice2(&b.first.weight), slice(&b.first.bias)]);
            out.extend([slice(&b.first_bn.gamma), slice(&b.first_bn.beta)]);
            out.extend([slice2(&b.second.weight), slice(&b.second.bias)]);
            out.extend([slice(&b.second_bn.gamma), slice(&b.second_bn.beta)]);
        }
        out.extend([slice2(&self.output.weight), slice(&self.output.bias)]);
        out.extend([slice2(&self.scale_head.weight), slice(&self.scale_head.bias)]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![slice2_mut(&mut self.input.weight), slice_mut(&mut self.input.bias)];
        out.push(slice_mut(&mut self.input_bn.gamma));
        out.push(slice_mut(&mut self.input_bn.beta));
        for b in &mut self.blocks {
            out.push(slice2_mut(&mut b.first.weight));
            out.push(slice_mut(&mut b.first.bias));
            out.push(slice_mut(&mut b.first_bn.gamma));
            out.push(slice_mut(&mut b.first_bn.beta));
            out.push(slice2_mut(&mut b.second.weight));
            out.push(slice_mut(&mut b.second.bias));
            out.push(slice_mut(&mut b.second_bn.gamma));
            out.push(slice_mut(&mut b.second_bn.beta));
        }
        out.push(slice2_mut(&mut self.output.weight));
        out.push(slice_mut(&mut self.output.bias));
        out.push(slice2_mut(&mut self.scale_head.weight));
        out.push(slice_mut(&mut self.scale_head.bias));
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Global L2 norm across every tensor.
    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= factor);
        }
    }
}

pub enum Mode<'a> {
    /// Running statistics, no dropout.
    Eval,
    /// Batch statistics; dropout masks drawn from the given stream.
    Train(&'a mut dyn RngCore),
}

/// One `Linear → BN → ReLU → Dropout` unit.
#[derive(Debug, Clone)]
struct UnitCache {
    input: Array2<f64>,
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
    /// BN output before the ReLU.
    activated: Array2<f64>,
    dropout_mask: Option<Array2<f64>>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    train: bool,
    batch_size: usize,
    input_unit: UnitCache,
    block_units: Vec<(UnitCache, UnitCache)>,
    hidden: Array2<f64>,
    scale_sigmoid: Array1<f64>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    fn units(&self) -> Vec<&UnitCache> {
        let mut out = vec![&self.input_unit];
        for (a, b) in &self.block_units {
            out.push(a);
            out.push(b);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `N × J × 3` predicted poses.
    pub poses: Array3<f64>,
    /// Scale-head outputs, each in `(0, r)`.
    pub scales: Array1<f64>,
    pub cache: ForwardCache,
}

/// Inverted dropout: each entry is zeroed with probability `rate` and the
/// survivors are scaled by `1 / (1 − rate)`. Returns the output and the mask.
pub fn apply_dropout(x: &Array2<f64>, rate: f64, rng: &mut dyn RngCore) -> (Array2<f64>, Array2<f64>) {
    let keep = 1.0 / (1.0 - rate);
    let mask = Array2::from_shape_fn(x.raw_dim(), |_| if rng.random::<f64>() < rate { 0.0 } else { keep });
    (x * &mask, mask)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn unit_forward(
    linear: &Linear,
    bn: &BatchNorm,
    x: Array2<f64>,
    rate: f64,
    mode: &mut Mode<'_>,
) -> (Array2<f64>, UnitCache) {
    let z = linear.forward(&x.view());
    let (mean, var) = match mode {
        Mode::Train(_) => {
            let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
            let var = z.var_axis(Axis(0), 0.0);
            (mean, var)
        }
        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let normalized = (&z - &mean) * &inv_std;
    let activated = &normalized * &bn.gamma + &bn.beta;
    let relu = activated.mapv(|v| v.max(0.0));
    let (out, dropout_mask) = match mode {
        Mode::Train(rng) if rate > 0.0 => {
            let (out, mask) = apply_dropout(&relu, rate, &mut **rng);
            (out, Some(mask))
        }
        _ => (relu, None),
    };
    let cache = UnitCache { input: x, normalized, inv_std, activated, dropout_mask, batch_mean: mean, batch_var: var };
    (out, cache)
}

fn unit_backward(
    linear: &Linear,
    bn: &BatchNorm,
    cache: &UnitCache,
    dout: &Array2<f64>,
) -> (LinearGrad, BatchNormGrad, Array2<f64>) {
    let n = dout.nrows() as f64;
    let mut d = match &cache.dropout_mask {
        Some(mask) => dout * mask,
        None => dout.clone(),
    };
    d.zip_mut_with(&cache.activated, |g, &a| {
        if a <= 0.0 {
            *g = 0.0
        }
    });
    let bn_grad = BatchNormGrad {
        gamma: (&d * &cache.normalized).sum_axis(Axis(0)),
        beta: d.sum_axis(Axis(0)),
    };
    // dz = inv_std/N · (N·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂))
    let dxhat = &d * &bn.gamma;
    let sum_dxhat = dxhat.sum_axis(Axis(0));
    let sum_dxhat_xhat = (&dxhat * &cache.normalized).sum_axis(Axis(0));
    let dz = (&dxhat * n - &sum_dxhat - &cache.normalized * &sum_dxhat_xhat) * &(&cache.inv_std / n);
    let (lin_grad, dx) = linear.backward(&cache.input.view(), &dz.view());
    (lin_grad, bn_grad, dx)
}

/// Runs the network on a batch of flattened, root-centered 2D poses (`N × 2J`).
pub fn forward(params: &NetParams, batch: &ArrayView2<f64>, mut mode: Mode<'_>) -> Result<ForwardOutput> {
    let cfg = &params.config;
    let (n, width) = batch.dim();
    if width != 2 * cfg.input_joints {
        return Err(Error::ShapeMismatch(format!("input width {width}, expected {}", 2 * cfg.input_joints)));
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if !batch.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite network input".into()));
    }
    let train = matches!(mode, Mode::Train(_));
    let rate = cfg.dropout_rate;

    let (mut h, input_unit) = unit_forward(&params.input, &params.input_bn, batch.to_owned(), rate, &mut mode);
    let mut block_units = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (a, c1) = unit_forward(&block.first, &block.first_bn, h.clone(), rate, &mut mode);
        let (b, c2) = unit_forward(&block.second, &block.second_bn, a, rate, &mut mode);
        h = h + b;
        block_units.push((c1, c2));
    }

    let flat = params.output.forward(&h.view());
    let poses = flat
        .into_shape_with_order((n, cfg.input_joints, 3))
        .expect("output width is 3J");
    let scale_pre = params.scale_head.forward(&h.view()).column(0).to_owned();
    let scale_sigmoid = scale_pre.mapv(sigmoid);
    let scales = &scale_sigmoid * cfg.scale_range_r;

    let cache = ForwardCache { train, batch_size: n, input_unit, block_units, hidden: h, scale_sigmoid };
    Ok(ForwardOutput { poses, scales, cache })
}

/// Exact parameter gradients given upstream gradients on the poses and scales.
pub fn backward(
    params: &NetParams,
    cache: &ForwardCache,
    d_poses: &ArrayView3<f64>,
    d_scales: &[f64],
) -> Result<NetGradients> {
    let cfg = &params.config;
    let n = cache.batch_size;
    if !cache.train {
        return Err(Error::CacheMismatch("backward needs a train-mode forward".into()));
    }
    if d_poses.dim() != (n, cfg.input_joints, 3) || d_scales.len() != n {
        return Err(Error::CacheMismatch(format!(
            "upstream gradients {:?}/{} do not match batch of {n}",
            d_poses.dim(),
            d_scales.len()
        )));
    }
    if cache.block_units.len() != params.blocks.len() || cache.hidden.ncols() != cfg.hidden_width {
        return Err(Error::CacheMismatch("cache was produced by a different architecture".into()));
    }

    let d_flat = d_poses
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, 3 * cfg.input_joints))
        .expect("contiguous");
    let d_pre: Array2<f64> = Array2::from_shape_fn((n, 1), |(i, _)| {
        let sg = cache.scale_sigmoid[i];
        d_scales[i] * cfg.scale_range_r * sg * (1.0 - sg)
    });
    let (output, dh_pose) = params.output.backward(&cache.hidden.view(), &d_flat.view());
    let (scale_head, dh_scale) = params.scale_head.backward(&cache.hidden.view(), &d_pre.view());
    let mut dh = dh_pose + dh_scale;

    let mut blocks = Vec::with_capacity(params.blocks.len());
    for (block, (c1, c2)) in params.blocks.iter().zip(&cache.block_units).rev() {
        let (second, second_bn, da) = unit_backward(&block.second, &block.second_bn, c2, &dh);
        let (first, first_bn, dx) = unit_backward(&block.first, &block.first_bn, c1, &da);
        dh = dh + dx;
        blocks.push(ResidualBlockGrad { first, first_bn, second, second_bn });
    }
    blocks.reverse();
    let (input, input_bn, _) = unit_backward(&params.input, &params.input_bn, &cache.input_unit, &dh);
    Ok(NetGradients { input, input_bn, blocks, output, scale_head })
}

/// Central-difference gradient of `loss` over every trainable parameter.
/// `loss` must be deterministic in the parameters.
pub fn numerical_gradient<F>(mut loss: F, params: &NetParams, step: f64) -> NetGradients
where
    F: FnMut(&NetParams) -> f64,
{
    let mut probe = params.clone();
    let flat = central_differences(
        |theta| {
            probe.assign_flat(theta);
            loss(&probe)
        },
        &params.flatten(),
        step,
    );
    let mut grads = params.zero_gradients();
    let mut offset = 0;
    for t in grads.tensors_mut() {
        t.copy_from_slice(&flat[offset..offset + t.len()]);
        offset += t.len();
    }
    grads
}
