//! Fully convolutional joint detector/descriptor over an N-frame burst.
//!
//! The burst's frames are concatenated along channels and fed through an
//! L2-Net style backbone in which every stride is replaced by dilation, so
//! spatial resolution is preserved end to end. The final 8x8 stage is
//! realized as three successive 2x2 dilated convolutions. The last
//! convolution is linear; its activations X yield
//!
//! * descriptors `F = X / ||X||` (per-pixel L2 normalization),
//! * `c_feature = X^2` elementwise,
//! * detection `K` and reliability `R`: each a 1x1 convolution over
//!   `c_feature` followed by a two-way softmax, taking one channel.
//!
//! Training-mode forward normalizes with per-burst spatial batch
//! statistics and exposes them for running-average updates; the public
//! [`forward`] uses the stored running statistics, which keeps inference a
//! translation-equivariant pure function of (weights, burst).

pub mod checkpoint;
pub mod conv;
pub mod tensor;

use crate::burstsynth::Burst;
use crate::error::{Error, Result};
use crate::rng::DetRng;
use conv::{conv_backward_input, conv_backward_weights, conv_forward, ConvDesc};
use tensor::Tensor;

pub const DESCRIPTOR_DIM: usize = 128;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const NORM_FLOOR: f64 = 1e-12;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// Frames per burst (odd).
    pub frame_count: usize,
    /// 1 for grayscale, 3 for RGB frames.
    pub input_channels_per_frame: usize,
    /// Descriptor dimensionality; fixed at 128.
    pub descriptor_dim: usize,
    /// Output width of each backbone stage.
    pub backbone_widths: Vec<usize>,
    /// Dilation of each backbone stage; the final stage is expanded into
    /// three 2x2 convolutions at its dilation.
    pub dilation_schedule: Vec<usize>,
    pub weight_init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            frame_count: 5,
            input_channels_per_frame: 3,
            descriptor_dim: DESCRIPTOR_DIM,
            backbone_widths: vec![32, 32, 64, 64, 128, 128, 128],
            dilation_schedule: vec![1, 1, 1, 2, 2, 4, 4],
            weight_init_seed: 0,
        }
    }
}

/// One concrete convolution of the expanded layer list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    /// Batch normalization + rectifier follow this conv.
    pub normalized: bool,
}

impl ModelConfig {
    pub fn grayscale(frame_count: usize, seed: u64) -> Self {
        ModelConfig {
            frame_count,
            input_channels_per_frame: 1,
            weight_init_seed: seed,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 || self.frame_count.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "frame_count must be odd, got {}",
                self.frame_count
            )));
        }
        if !(self.input_channels_per_frame == 1 || self.input_channels_per_frame == 3) {
            return Err(Error::Config("input_channels_per_frame must be 1 or 3".into()));
        }
        if self.descriptor_dim != DESCRIPTOR_DIM {
            return Err(Error::Config(format!(
                "descriptor_dim is fixed at {DESCRIPTOR_DIM}, got {}",
                self.descriptor_dim
            )));
        }
        if self.backbone_widths.len() < 2 {
            return Err(Error::Config("need at least two backbone stages".into()));
        }
        if self.backbone_widths.contains(&0) {
            return Err(Error::Config("zero-width backbone stage".into()));
        }
        if self.dilation_schedule.len() != self.backbone_widths.len() {
            return Err(Error::Config(format!(
                "dilation schedule length {} != backbone width count {}",
                self.dilation_schedule.len(),
                self.backbone_widths.len()
            )));
        }
        if self.dilation_schedule.contains(&0) {
            return Err(Error::Config("dilations must be >= 1".into()));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        self.frame_count * self.input_channels_per_frame
    }

    /// Expand (widths, dilations) into the concrete conv list: one 3x3 conv
    /// per stage except the last, which becomes three 2x2 convolutions; the
    /// final conv is linear and emits the descriptor activations.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let n = self.backbone_widths.len();
        let mut specs = Vec::with_capacity(n + 2);
        for i in 0..n - 1 {
            specs.push(LayerSpec {
                out_channels: self.backbone_widths[i],
                kernel: 3,
                dilation: self.dilation_schedule[i],
                normalized: true,
            });
        }
        let last_w = self.backbone_widths[n - 1];
        let last_d = self.dilation_schedule[n - 1];
        specs.push(LayerSpec { out_channels: last_w, kernel: 2, dilation: last_d, normalized: true });
        specs.push(LayerSpec { out_channels: last_w, kernel: 2, dilation: last_d, normalized: true });
        specs.push(LayerSpec {
            out_channels: self.descriptor_dim,
            kernel: 2,
            dilation: last_d,
            normalized: false,
        });
        specs
    }
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub desc: ConvDesc,
    pub weight: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

#[derive(Clone, Debug)]
pub struct BnLayer {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

impl BnLayer {
    fn identity(channels: usize) -> Self {
        BnLayer {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

/// All model parameters plus the training step counter.
#[derive(Clone, Debug)]
pub struct Weights {
    pub config: ModelConfig,
    pub convs: Vec<ConvLayer>,
    /// Batch-norm parameters for every normalized conv (indices align with
    /// the first `convs.len() - 1` layers).
    pub bns: Vec<BnLayer>,
    pub head_det: ConvLayer,
    pub head_rel: ConvLayer,
    pub step: u64,
    pub version: u32,
}

fn head_desc(dim: usize) -> ConvDesc {
    ConvDesc { cin: dim, cout: 2, kernel: 1, dilation: 1 }
}

/// Deterministic weight initialization from `config.weight_init_seed`.
pub fn init_model(config: &ModelConfig) -> Result<Weights> {
    config.validate()?;
    let mut rng = DetRng::derive(config.weight_init_seed, &[0x1217]);
    let specs = config.layer_specs();
    let mut cin = config.input_channels();
    let mut convs = Vec::with_capacity(specs.len());
    let mut bns = Vec::new();
    for spec in &specs {
        let desc = ConvDesc {
            cin,
            cout: spec.out_channels,
            kernel: spec.kernel,
            dilation: spec.dilation,
        };
        let fan_in = (cin * spec.kernel * spec.kernel) as f64;
        // He init under rectifiers, Xavier-like for the linear output conv
        let std = if spec.normalized { (2.0 / fan_in).sqrt() } else { (1.0 / fan_in).sqrt() };
        let weight: Vec<f32> = (0..desc.weight_len())
            .map(|_| (rng.normal() * std) as f32)
            .collect();
        let bias = if spec.normalized { None } else { Some(vec![0.0; spec.out_channels]) };
        convs.push(ConvLayer { desc, weight, bias });
        if spec.normalized {
            bns.push(BnLayer::identity(spec.out_channels));
        }
        cin = spec.out_channels;
    }
    let dim = config.descriptor_dim;
    // near-flat confidence maps at init: the heads carry no structure the
    // backbone has not yet earned, and the softmax sits at its maximal
    // gradient
    let head_std = 0.1 * (1.0 / dim as f64).sqrt();
    let mk_head = |rng: &mut DetRng| ConvLayer {
        desc: head_desc(dim),
        weight: (0..2 * dim).map(|_| (rng.normal() * head_std) as f32).collect(),
        bias: Some(vec![0.0; 2]),
    };
    let head_det = mk_head(&mut rng);
    let head_rel = mk_head(&mut rng);
    Ok(Weights {
        config: config.clone(),
        convs,
        bns,
        head_det,
        head_rel,
        step: 0,
        version: 1,
    })
}

/// Dense network output for one burst.
#[derive(Clone, Debug)]
pub struct NetworkOutput {
    pub height: usize,
    pub width: usize,
    /// D x H x W unit-norm descriptors.
    pub descriptors: Tensor,
    /// H x W detection confidence in (0, 1).
    pub detection: Vec<f32>,
    /// H x W reliability confidence in (0, 1).
    pub reliability: Vec<f32>,
    /// D x H x W elementwise square of the raw descriptor activations.
    pub c_feature: Tensor,
}

impl NetworkOutput {
    pub fn descriptor_at(&self, x: usize, y: usize) -> Vec<f32> {
        let mut v = vec![0.0; self.descriptors.channels];
        self.descriptors.pixel_vector(y, x, &mut v);
        v
    }

    #[inline]
    pub fn detection_at(&self, x: usize, y: usize) -> f32 {
        self.detection[y * self.width + x]
    }

    #[inline]
    pub fn reliability_at(&self, x: usize, y: usize) -> f32 {
        self.reliability[y * self.width + x]
    }
}

/// Everything backward needs from a training-mode forward pass.
pub struct TrainCache {
    input: Tensor,
    /// Post-activation output of each conv layer (the last entry is the raw
    /// linear activation X).
    acts: Vec<Tensor>,
    /// Normalized (pre-affine) values per BN layer.
    xhats: Vec<Tensor>,
    /// Per-channel batch statistics per BN layer.
    pub batch_means: Vec<Vec<f32>>,
    pub batch_vars: Vec<Vec<f32>>,
    stds: Vec<Vec<f32>>,
    inv_norms: Vec<f32>,
}

/// Gradients aligned with [`Weights::trainable_params_mut`].
#[derive(Clone, Debug)]
pub struct GradBuffers {
    pub conv_w: Vec<Vec<f32>>,
    pub conv_b: Vec<Option<Vec<f32>>>,
    pub bn_gamma: Vec<Vec<f32>>,
    pub bn_beta: Vec<Vec<f32>>,
    pub head_det_w: Vec<f32>,
    pub head_det_b: Vec<f32>,
    pub head_rel_w: Vec<f32>,
    pub head_rel_b: Vec<f32>,
}

impl GradBuffers {
    pub fn zeros_like(weights: &Weights) -> Self {
        GradBuffers {
            conv_w: weights.convs.iter().map(|c| vec![0.0; c.weight.len()]).collect(),
            conv_b: weights
                .convs
                .iter()
                .map(|c| c.bias.as_ref().map(|b| vec![0.0; b.len()]))
                .collect(),
            bn_gamma: weights.bns.iter().map(|b| vec![0.0; b.gamma.len()]).collect(),
            bn_beta: weights.bns.iter().map(|b| vec![0.0; b.beta.len()]).collect(),
            head_det_w: vec![0.0; weights.head_det.weight.len()],
            head_det_b: vec![0.0; 2],
            head_rel_w: vec![0.0; weights.head_rel.weight.len()],
            head_rel_b: vec![0.0; 2],
        }
    }

    pub fn scale(&mut self, s: f32) {
        for v in self.views_mut() {
            for x in v {
                *x *= s;
            }
        }
    }

    pub fn add(&mut self, other: &GradBuffers) {
        let mine = self.views_mut();
        let theirs = other.views();
        for (a, b) in mine.into_iter().zip(theirs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    /// Flat views in the canonical trainable-parameter order.
    pub fn views(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for w in &self.conv_w {
            out.push(w);
        }
        for b in self.conv_b.iter().flatten() {
            out.push(b);
        }
        for g in &self.bn_gamma {
            out.push(g);
        }
        for b in &self.bn_beta {
            out.push(b);
        }
        out.push(&self.head_det_w);
        out.push(&self.head_det_b);
        out.push(&self.head_rel_w);
        out.push(&self.head_rel_b);
        out
    }

    pub fn views_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for w in &mut self.conv_w {
            out.push(w);
        }
        for b in self.conv_b.iter_mut().flatten() {
            out.push(b);
        }
        for g in &mut self.bn_gamma {
            out.push(g);
        }
        for b in &mut self.bn_beta {
            out.push(b);
        }
        out.push(&mut self.head_det_w);
        out.push(&mut self.head_det_b);
        out.push(&mut self.head_rel_w);
        out.push(&mut self.head_rel_b);
        out
    }
}

impl Weights {
    /// Mutable flat views over all trainable parameters, in the same order
    /// as [`GradBuffers::views`].
    pub fn trainable_params_mut(&mut self) -> Vec<&mut [f32]> {
        let mut conv_w: Vec<&mut [f32]> = Vec::new();
        let mut conv_b: Vec<&mut [f32]> = Vec::new();
        for c in &mut self.convs {
            conv_w.push(&mut c.weight);
            if let Some(b) = &mut c.bias {
                conv_b.push(b);
            }
        }
        let mut bn_g: Vec<&mut [f32]> = Vec::new();
        let mut bn_b: Vec<&mut [f32]> = Vec::new();
        for b in &mut self.bns {
            bn_g.push(&mut b.gamma);
            bn_b.push(&mut b.beta);
        }
        let mut out: Vec<&mut [f32]> = Vec::new();
        out.extend(conv_w);
        out.extend(conv_b);
        out.extend(bn_g);
        out.extend(bn_b);
        out.push(&mut self.head_det.weight);
        out.push(self.head_det.bias.as_mut().expect("head bias"));
        out.push(&mut self.head_rel.weight);
        out.push(self.head_rel.bias.as_mut().expect("head bias"));
        out
    }

    /// Named tensors (parameters plus running statistics) with shapes, in a
    /// stable order, for checkpoint serialization.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let mut out: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((
                format!("conv{i}.weight"),
                vec![c.desc.cout, c.desc.cin, c.desc.kernel, c.desc.kernel],
                &c.weight,
            ));
            if let Some(b) = &c.bias {
                out.push((format!("conv{i}.bias"), vec![c.desc.cout], b));
            }
        }
        for (i, b) in self.bns.iter().enumerate() {
            let c = b.gamma.len();
            out.push((format!("bn{i}.gamma"), vec![c], &b.gamma));
            out.push((format!("bn{i}.beta"), vec![c], &b.beta));
            out.push((format!("bn{i}.running_mean"), vec![c], &b.running_mean));
            out.push((format!("bn{i}.running_var"), vec![c], &b.running_var));
        }
        let dim = self.config.descriptor_dim;
        out.push(("head_det.weight".into(), vec![2, dim, 1, 1], &self.head_det.weight));
        out.push(("head_det.bias".into(), vec![2], self.head_det.bias.as_deref().unwrap()));
        out.push(("head_rel.weight".into(), vec![2, dim, 1, 1], &self.head_rel.weight));
        out.push(("head_rel.bias".into(), vec![2], self.head_rel.bias.as_deref().unwrap()));
        out
    }

    /// Locate a named tensor slot for checkpoint loading.
    pub(crate) fn tensor_slot_mut(&mut self, name: &str) -> Option<&mut Vec<f32>> {
        if let Some(rest) = name.strip_prefix("conv") {
            let (idx, field) = rest.split_once('.')?;
            let i: usize = idx.parse().ok()?;
            let c = self.convs.get_mut(i)?;
            return match field {
                "weight" => Some(&mut c.weight),
                "bias" => c.bias.as_mut(),
                _ => None,
            };
        }
        if let Some(rest) = name.strip_prefix("bn") {
            let (idx, field) = rest.split_once('.')?;
            let i: usize = idx.parse().ok()?;
            let b = self.bns.get_mut(i)?;
            return match field {
                "gamma" => Some(&mut b.gamma),
                "beta" => Some(&mut b.beta),
                "running_mean" => Some(&mut b.running_mean),
                "running_var" => Some(&mut b.running_var),
                _ => None,
            };
        }
        match name {
            "head_det.weight" => Some(&mut self.head_det.weight),
            "head_det.bias" => self.head_det.bias.as_mut(),
            "head_rel.weight" => Some(&mut self.head_rel.weight),
            "head_rel.bias" => self.head_rel.bias.as_mut(),
            _ => None,
        }
    }

    /// Fold the batch statistics of a training forward pass into the
    /// running statistics (exponential moving average).
    pub fn update_running_stats(&mut self, cache: &TrainCache) {
        for (bn, (mean, var)) in self
            .bns
            .iter_mut()
            .zip(cache.batch_means.iter().zip(cache.batch_vars.iter()))
        {
            for c in 0..bn.running_mean.len() {
                bn.running_mean[c] =
                    ((1.0 - BN_MOMENTUM) * bn.running_mean[c] as f64 + BN_MOMENTUM * mean[c] as f64) as f32;
                bn.running_var[c] =
                    ((1.0 - BN_MOMENTUM) * bn.running_var[c] as f64 + BN_MOMENTUM * var[c] as f64) as f32;
            }
        }
    }
}

/// Concatenate the burst frames along channels into the network input.
pub fn burst_to_input(burst: &Burst) -> Tensor {
    let (h, w) = (burst.height(), burst.width());
    let cpf = burst.frames[0].channels;
    let mut input = Tensor::zeros(burst.frames.len() * cpf, h, w);
    for (k, frame) in burst.frames.iter().enumerate() {
        for c in 0..cpf {
            let plane = input.plane_mut(k * cpf + c);
            for y in 0..h {
                for x in 0..w {
                    plane[y * w + x] = frame.get(x, y, c);
                }
            }
        }
    }
    input
}

fn check_burst(weights: &Weights, burst: &Burst) -> Result<()> {
    let cfg = &weights.config;
    if burst.frames.len() != cfg.frame_count {
        return Err(Error::Data(format!(
            "burst has {} frames but the model expects {}",
            burst.frames.len(),
            cfg.frame_count
        )));
    }
    if burst.frames[0].channels != cfg.input_channels_per_frame {
        return Err(Error::Data(format!(
            "burst frames have {} channels but the model expects {}",
            burst.frames[0].channels, cfg.input_channels_per_frame
        )));
    }
    Ok(())
}

fn bn_stats(x: &Tensor) -> (Vec<f32>, Vec<f32>) {
    let n = x.spatial_len() as f64;
    let mut means = vec![0.0f32; x.channels];
    let mut vars = vec![0.0f32; x.channels];
    for c in 0..x.channels {
        let plane = x.plane(c);
        let mut s = 0.0f64;
        for &v in plane {
            s += v as f64;
        }
        let mean = s / n;
        let mut sq = 0.0f64;
        for &v in plane {
            let d = v as f64 - mean;
            sq += d * d;
        }
        means[c] = mean as f32;
        vars[c] = (sq / n) as f32;
    }
    (means, vars)
}

/// Training-mode batch norm: normalize by the tensor's own per-channel
/// spatial statistics. Returns (output, xhat, std).
fn bn_forward_train(x: &Tensor, bn: &BnLayer) -> (Tensor, Tensor, Vec<f32>, Vec<f32>, Vec<f32>) {
    let (means, vars) = bn_stats(x);
    let mut stds = vec![0.0f32; x.channels];
    let mut xhat = Tensor::zeros(x.channels, x.height, x.width);
    let mut out = Tensor::zeros(x.channels, x.height, x.width);
    for c in 0..x.channels {
        let std = ((vars[c] as f64) + BN_EPS).sqrt() as f32;
        stds[c] = std;
        let (g, b) = (bn.gamma[c], bn.beta[c]);
        let m = means[c];
        let xp = x.plane(c);
        let hp = xhat.plane_mut(c);
        for (h, &v) in hp.iter_mut().zip(xp) {
            *h = (v - m) / std;
        }
        let op = out.plane_mut(c);
        for (o, &h) in op.iter_mut().zip(xhat.plane(c)) {
            *o = g * h + b;
        }
    }
    (out, xhat, means, vars, stds)
}

/// Inference-mode batch norm using running statistics (a per-channel affine
/// map, hence exactly translation equivariant).
fn bn_forward_eval(x: &mut Tensor, bn: &BnLayer) {
    for c in 0..x.channels {
        let std = ((bn.running_var[c] as f64) + BN_EPS).sqrt() as f32;
        let scale = bn.gamma[c] / std;
        let shift = bn.beta[c] - bn.running_mean[c] * scale;
        for v in x.plane_mut(c) {
            *v = *v * scale + shift;
        }
    }
}

/// Backward through training-mode batch norm.
fn bn_backward(
    dy: &Tensor,
    xhat: &Tensor,
    stds: &[f32],
    bn: &BnLayer,
    g_gamma: &mut [f32],
    g_beta: &mut [f32],
) -> Tensor {
    let n = dy.spatial_len() as f64;
    let mut dx = Tensor::zeros(dy.channels, dy.height, dy.width);
    for c in 0..dy.channels {
        let dyp = dy.plane(c);
        let xp = xhat.plane(c);
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for (&d, &h) in dyp.iter().zip(xp) {
            sum_dy += d as f64;
            sum_dy_xhat += d as f64 * h as f64;
        }
        g_gamma[c] += sum_dy_xhat as f32;
        g_beta[c] += sum_dy as f32;
        let gamma = bn.gamma[c] as f64;
        let std = stds[c] as f64;
        let k1 = sum_dy / n;
        let k2 = sum_dy_xhat / n;
        let dxp = dx.plane_mut(c);
        for ((o, &d), &h) in dxp.iter_mut().zip(dyp).zip(xp) {
            *o = ((gamma / std) * (d as f64 - k1 - h as f64 * k2)) as f32;
        }
    }
    dx
}

fn relu_inplace(x: &mut Tensor) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Per-pixel L2 normalization across channels; returns (F, inv_norms).
fn normalize_descriptors(x: &Tensor) -> (Tensor, Vec<f32>) {
    let sz = x.spatial_len();
    let mut inv = vec![0.0f32; sz];
    for (i, item) in inv.iter_mut().enumerate() {
        let mut s = 0.0f64;
        for c in 0..x.channels {
            let v = x.data[c * sz + i] as f64;
            s += v * v;
        }
        *item = (1.0 / s.sqrt().max(NORM_FLOOR)) as f32;
    }
    let mut f = Tensor::zeros(x.channels, x.height, x.width);
    for c in 0..x.channels {
        let xp = x.plane(c);
        let fp = f.plane_mut(c);
        for ((o, &v), &iv) in fp.iter_mut().zip(xp).zip(inv.iter()) {
            *o = v * iv;
        }
    }
    (f, inv)
}

/// Two-way softmax over a 2-channel logit tensor; returns channel 0.
fn softmax_head(logits: &Tensor) -> Vec<f32> {
    let sz = logits.spatial_len();
    let l0 = logits.plane(0);
    let l1 = logits.plane(1);
    let mut out = vec![0.0f32; sz];
    for i in 0..sz {
        let d = (l0[i] - l1[i]) as f64;
        out[i] = (1.0 / (1.0 + (-d).exp())) as f32;
    }
    out
}

fn heads_from_x(weights: &Weights, x: &Tensor) -> (Tensor, Vec<f32>, Vec<f32>, Tensor, Vec<f32>) {
    let mut c_feature = x.clone();
    for v in &mut c_feature.data {
        *v *= *v;
    }
    let logits_det = conv_forward(
        &weights.head_det.desc,
        &weights.head_det.weight,
        weights.head_det.bias.as_deref(),
        &c_feature,
    );
    let logits_rel = conv_forward(
        &weights.head_rel.desc,
        &weights.head_rel.weight,
        weights.head_rel.bias.as_deref(),
        &c_feature,
    );
    let detection = softmax_head(&logits_det);
    let reliability = softmax_head(&logits_rel);
    let (f, inv) = normalize_descriptors(x);
    (c_feature, detection, reliability, f, inv)
}

/// Inference forward pass (running-statistics normalization).
pub fn forward(weights: &Weights, burst: &Burst) -> Result<NetworkOutput> {
    check_burst(weights, burst)?;
    let mut x = burst_to_input(burst);
    let mut bn_idx = 0;
    let specs = weights.config.layer_specs();
    for (conv, spec) in weights.convs.iter().zip(&specs) {
        let mut out = conv_forward(&conv.desc, &conv.weight, conv.bias.as_deref(), &x);
        if spec.normalized {
            bn_forward_eval(&mut out, &weights.bns[bn_idx]);
            bn_idx += 1;
            relu_inplace(&mut out);
        }
        x = out;
    }
    let (c_feature, detection, reliability, f, _inv) = heads_from_x(weights, &x);
    Ok(NetworkOutput {
        height: x.height,
        width: x.width,
        descriptors: f,
        detection,
        reliability,
        c_feature,
    })
}

/// Training forward pass: batch-statistics normalization, with every
/// intermediate needed by [`backward`] cached. Running statistics are not
/// touched; fold them in explicitly with [`Weights::update_running_stats`].
pub fn forward_train(weights: &Weights, burst: &Burst) -> Result<(NetworkOutput, TrainCache)> {
    check_burst(weights, burst)?;
    let input = burst_to_input(burst);
    let specs = weights.config.layer_specs();
    let mut acts: Vec<Tensor> = Vec::with_capacity(specs.len());
    let mut xhats = Vec::new();
    let mut batch_means = Vec::new();
    let mut batch_vars = Vec::new();
    let mut stds = Vec::new();
    let mut cur = input.clone();
    for (conv, spec) in weights.convs.iter().zip(&specs) {
        let conv_out = conv_forward(&conv.desc, &conv.weight, conv.bias.as_deref(), &cur);
        if spec.normalized {
            let bn = &weights.bns[xhats.len()];
            let (mut out, xhat, means, vars, std) = bn_forward_train(&conv_out, bn);
            relu_inplace(&mut out);
            xhats.push(xhat);
            batch_means.push(means);
            batch_vars.push(vars);
            stds.push(std);
            acts.push(out.clone());
            cur = out;
        } else {
            acts.push(conv_out.clone());
            cur = conv_out;
        }
    }
    let x = acts.last().expect("at least one layer");
    let (c_feature, detection, reliability, f, inv_norms) = heads_from_x(weights, x);
    let output = NetworkOutput {
        height: x.height,
        width: x.width,
        descriptors: f,
        detection,
        reliability,
        c_feature,
    };
    let cache = TrainCache {
        input,
        acts,
        xhats,
        batch_means,
        batch_vars,
        stds,
        inv_norms,
    };
    Ok((output, cache))
}

/// Gradients of some scalar loss with respect to the network outputs.
pub struct OutputGrads {
    /// d loss / d F (unit-norm descriptors); may be all zeros.
    pub d_descriptors: Tensor,
    /// d loss / d K.
    pub d_detection: Vec<f32>,
    /// d loss / d R.
    pub d_reliability: Vec<f32>,
}

impl OutputGrads {
    pub fn zeros(out: &NetworkOutput) -> Self {
        OutputGrads {
            d_descriptors: Tensor::zeros(out.descriptors.channels, out.height, out.width),
            d_detection: vec![0.0; out.height * out.width],
            d_reliability: vec![0.0; out.height * out.width],
        }
    }
}

fn softmax_backward(confidence: &[f32], d_conf: &[f32], h: usize, w: usize) -> Tensor {
    let mut dlogits = Tensor::zeros(2, h, w);
    let sz = h * w;
    for i in 0..sz {
        let k = confidence[i] as f64;
        let s = (k * (1.0 - k)) * d_conf[i] as f64;
        dlogits.data[i] = s as f32;
        dlogits.data[sz + i] = -s as f32;
    }
    dlogits
}

/// Backpropagate output gradients through a cached training forward pass,
/// accumulating parameter gradients into `grads`.
pub fn backward(
    weights: &Weights,
    cache: &TrainCache,
    output: &NetworkOutput,
    out_grads: &OutputGrads,
    grads: &mut GradBuffers,
) {
    let x = cache.acts.last().expect("cache has layers");
    let (h, w) = (x.height, x.width);
    let sz = h * w;
    let dim = x.channels;

    // heads: softmax -> 1x1 conv -> c_feature
    let dlog_det = softmax_backward(&output.detection, &out_grads.d_detection, h, w);
    let dlog_rel = softmax_backward(&output.reliability, &out_grads.d_reliability, h, w);
    let hdesc = head_desc(dim);
    let mut d_cfeat = conv_backward_input(&hdesc, &weights.head_det.weight, &dlog_det);
    let d_cfeat_rel = conv_backward_input(&hdesc, &weights.head_rel.weight, &dlog_rel);
    for (a, b) in d_cfeat.data.iter_mut().zip(&d_cfeat_rel.data) {
        *a += *b;
    }
    conv_backward_weights(
        &hdesc,
        &output.c_feature,
        &dlog_det,
        &mut grads.head_det_w,
        Some(&mut grads.head_det_b),
    );
    conv_backward_weights(
        &hdesc,
        &output.c_feature,
        &dlog_rel,
        &mut grads.head_rel_w,
        Some(&mut grads.head_rel_b),
    );

    // dX = 2 X o dC + (dF - F (F . dF)) / ||X||
    let mut dx = Tensor::zeros(dim, h, w);
    for c in 0..dim {
        let xp = x.plane(c);
        let dcp = d_cfeat.plane(c);
        let dxp = dx.plane_mut(c);
        for i in 0..sz {
            dxp[i] = 2.0 * xp[i] * dcp[i];
        }
    }
    let f = &output.descriptors;
    let df = &out_grads.d_descriptors;
    let mut dots = vec![0.0f64; sz];
    for c in 0..dim {
        let fp = f.plane(c);
        let dfp = df.plane(c);
        for (d, (a, b)) in dots.iter_mut().zip(fp.iter().zip(dfp)) {
            *d += *a as f64 * *b as f64;
        }
    }
    for c in 0..dim {
        let fp = f.plane(c);
        let dfp = df.plane(c);
        let dxp = dx.plane_mut(c);
        for i in 0..sz {
            dxp[i] += cache.inv_norms[i] * (dfp[i] - fp[i] * dots[i] as f32);
        }
    }

    // backbone chain
    let specs = weights.config.layer_specs();
    let mut d_act = dx;
    for layer in (0..weights.convs.len()).rev() {
        let conv = &weights.convs[layer];
        let spec = &specs[layer];
        let conv_in: &Tensor = if layer == 0 { &cache.input } else { &cache.acts[layer - 1] };
        let d_conv_out = if spec.normalized {
            // relu mask then batch-norm backward
            let act = &cache.acts[layer];
            let mut d_pre = d_act;
            for (g, &a) in d_pre.data.iter_mut().zip(&act.data) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            let bn_idx = layer; // normalized layers are a prefix of the chain
            bn_backward(
                &d_pre,
                &cache.xhats[bn_idx],
                &cache.stds[bn_idx],
                &weights.bns[bn_idx],
                &mut grads.bn_gamma[bn_idx],
                &mut grads.bn_beta[bn_idx],
            )
        } else {
            d_act
        };
        let gb = grads.conv_b[layer].as_deref_mut();
        conv_backward_weights(&conv.desc, conv_in, &d_conv_out, &mut grads.conv_w[layer], gb);
        if layer == 0 {
            break;
        }
        d_act = conv_backward_input(&conv.desc, &conv.weight, &d_conv_out);
    }
}
