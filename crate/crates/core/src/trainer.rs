//! Corpus ingestion, the training loop, and checkpoint/resume.
//!
//! Every random choice is derived statelessly from (seed, epoch, step,
//! slot), so a run is bit-reproducible and an interrupted run resumed from
//! a checkpoint retraces the exact trajectory of an uninterrupted one.

use crate::burstsynth::{make_burst_pair, BurstSpec};
use crate::error::{Error, Result};
use crate::image::ImageBuf;
use crate::losses::{total_loss, LossConfig, LossTerms};
use crate::network::checkpoint::{load_checkpoint, save_checkpoint};
use crate::network::{backward, forward_train, init_model, GradBuffers, ModelConfig, Weights};
use crate::rng::DetRng;
use std::io::Write;
use std::path::{Path, PathBuf};

const TAG_EPOCH_SHUFFLE: u64 = 0x50;
const TAG_SYNTH: u64 = 0x51;

/// Full training recipe.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Burst pairs per optimizer step.
    pub batch_size: usize,
    pub crop_size: usize,
    pub burst_spec: BurstSpec,
    pub loss_config: LossConfig,
    pub model_config: ModelConfig,
    pub corpus_dirs: Vec<PathBuf>,
    pub checkpoint_dir: PathBuf,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            learning_rate: 1e-4,
            weight_decay: 5e-4,
            batch_size: 4,
            crop_size: 192,
            burst_spec: BurstSpec::default(),
            loss_config: LossConfig::default(),
            model_config: ModelConfig::default(),
            corpus_dirs: Vec::new(),
            checkpoint_dir: PathBuf::from("checkpoints"),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.crop_size < 2 * self.loss_config.patch_size {
            return Err(Error::Config(format!(
                "crop_size {} must be at least twice the patch size {}",
                self.crop_size, self.loss_config.patch_size
            )));
        }
        self.burst_spec.validate()?;
        self.loss_config.validate()?;
        self.model_config.validate()?;
        Ok(())
    }

    /// The burst spec actually used per pair: the trainer's crop size and
    /// seed override the nested spec's.
    fn effective_burst_spec(&self) -> BurstSpec {
        BurstSpec {
            crop_size: self.crop_size,
            seed: self.seed,
            ..self.burst_spec.clone()
        }
    }
}

/// Smallest source dimension that can host a crop with full synthesis
/// margins (perspective jitter, intra-burst and inter-burst translation).
pub fn min_source_dim(spec: &BurstSpec) -> usize {
    let c = (spec.crop_size - 1) as f64;
    (c * (1.0 + 2.0 * spec.homography_jitter) + 4.0 * spec.max_translation).ceil() as usize + 2
}

#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub path: PathBuf,
    pub width: usize,
    pub height: usize,
}

/// Deterministic listing of the usable corpus images.
#[derive(Clone, Debug)]
pub struct CorpusManifest {
    pub entries: Vec<CorpusEntry>,
    /// Images rejected for being smaller than the synthesis minimum.
    pub skipped_small: usize,
    /// FNV-1a over (path, dims, file bytes) in listing order.
    pub content_hash: String,
}

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "ppm", "pgm", "bmp"];

fn collect_images(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut children: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|d| d.path()))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::io(dir, e))?;
    children.sort();
    for child in children {
        if child.is_dir() {
            collect_images(&child, out)?;
        } else if child
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false)
        {
            out.push(child);
        }
    }
    Ok(())
}

fn fnv1a(hash: &mut u64, bytes: &[u8]) {
    for &b in bytes {
        *hash ^= b as u64;
        *hash = hash.wrapping_mul(0x100_0000_01b3);
    }
}

/// Scan corpus directories for usable images, in lexicographic path order.
/// Images smaller than `min_dim` on either side are skipped (counted).
pub fn ingest_corpus(dirs: &[PathBuf], min_dim: usize) -> Result<CorpusManifest> {
    let mut paths = Vec::new();
    for dir in dirs {
        collect_images(dir, &mut paths)?;
    }
    let mut entries = Vec::new();
    let mut skipped_small = 0usize;
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for path in paths {
        let (w, h) = match image::image_dimensions(&path) {
            Ok(d) => (d.0 as usize, d.1 as usize),
            Err(e) => {
                return Err(Error::Image {
                    path,
                    message: e.to_string(),
                })
            }
        };
        if w < min_dim || h < min_dim {
            skipped_small += 1;
            continue;
        }
        fnv1a(&mut hash, path.to_string_lossy().as_bytes());
        fnv1a(&mut hash, &(w as u64).to_le_bytes());
        fnv1a(&mut hash, &(h as u64).to_le_bytes());
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        fnv1a(&mut hash, &bytes);
        entries.push(CorpusEntry { path, width: w, height: h });
    }
    if entries.is_empty() {
        return Err(Error::Data(format!(
            "empty corpus: no usable image of at least {min_dim}x{min_dim} px found"
        )));
    }
    Ok(CorpusManifest {
        entries,
        skipped_small,
        content_hash: format!("{hash:016x}"),
    })
}

/// Adam with decoupled multiplicative weight decay.
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(weights: &mut Weights) -> Self {
        let shapes: Vec<usize> = weights.trainable_params_mut().iter().map(|p| p.len()).collect();
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One optimizer step at (1-indexed) time `t`. Decay is applied
    /// multiplicatively before the moment update, so a parameter with zero
    /// gradient shrinks by exactly (1 - lr * wd).
    pub fn apply(
        &mut self,
        weights: &mut Weights,
        grads: &GradBuffers,
        lr: f64,
        wd: f64,
        t: u64,
    ) {
        let decay = (1.0 - lr * wd) as f32;
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        let params = weights.trainable_params_mut();
        let gviews = grads.views();
        for ((param, grad), (m, v)) in params
            .into_iter()
            .zip(gviews)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..param.len() {
                param[i] *= decay;
                let g = grad[i] as f64;
                let mi = self.beta1 * m[i] as f64 + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v[i] as f64 + (1.0 - self.beta2) * g * g;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                param[i] -= update as f32;
            }
        }
    }

    fn to_extra_tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let mut out = Vec::new();
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            out.push((format!("opt.{i}.m"), vec![m.len()], m.as_slice()));
            out.push((format!("opt.{i}.v"), vec![v.len()], v.as_slice()));
        }
        out
    }

    fn from_extra(
        weights: &mut Weights,
        extra: &std::collections::BTreeMap<String, Vec<f32>>,
        path: &Path,
    ) -> Result<Self> {
        let mut state = AdamState::new(weights);
        for i in 0..state.m.len() {
            let mk = format!("opt.{i}.m");
            let vk = format!("opt.{i}.v");
            match (extra.get(&mk), extra.get(&vk)) {
                (Some(m), Some(v)) if m.len() == state.m[i].len() && v.len() == state.v[i].len() => {
                    state.m[i] = m.clone();
                    state.v[i] = v.clone();
                }
                _ => {
                    return Err(Error::format(
                        path,
                        format!("checkpoint lacks optimizer tensor {mk}/{vk}; cannot resume"),
                    ))
                }
            }
        }
        Ok(state)
    }
}

/// Per-epoch mean loss terms.
#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean: LossTerms,
}

/// Outcome of a training run.
#[derive(Debug)]
pub struct TrainReport {
    pub weights: Weights,
    pub epochs: Vec<EpochStats>,
    pub steps_run: u64,
    pub checkpoints: Vec<PathBuf>,
    pub manifest: CorpusManifest,
}

fn load_training_image(entry: &CorpusEntry, channels: usize) -> Result<ImageBuf> {
    let img = ImageBuf::load(&entry.path)?;
    Ok(match (img.channels, channels) {
        (a, b) if a == b => img,
        (3, 1) => img.to_gray(),
        (1, 3) => {
            let mut rgb = ImageBuf::new(img.width, img.height, 3);
            for i in 0..img.width * img.height {
                for c in 0..3 {
                    rgb.data[i * 3 + c] = img.data[i];
                }
            }
            rgb
        }
        _ => return Err(Error::Data("unsupported channel conversion".into())),
    })
}

struct LossLog {
    file: std::fs::File,
}

impl LossLog {
    fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("loss_log.tsv");
        let fresh = !path.exists();
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        if fresh {
            writeln!(file, "step\ttotal\tcosim\tpeak_a\tpeak_b\treliability")
                .map_err(|e| Error::io(&path, e))?;
        }
        Ok(LossLog { file })
    }

    fn record(&mut self, step: u64, t: &LossTerms) {
        let _ = writeln!(
            self.file,
            "{step}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            t.total, t.cosim, t.peakiness_a, t.peakiness_b, t.reliability
        );
    }
}

/// Train from scratch per `config`.
pub fn train(config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let mut weights = init_model(&config.model_config)?;
    let adam = AdamState::new(&mut weights);
    run_training(config, weights, adam, 0)
}

/// Resume a run from a checkpoint, continuing until `config.epochs` total
/// epochs have been trained.
pub fn resume(config: &TrainConfig, checkpoint: &Path) -> Result<TrainReport> {
    config.validate()?;
    let (mut weights, extra) = load_checkpoint(checkpoint)?;
    if weights.config != config.model_config {
        return Err(Error::Config(format!(
            "checkpoint model config {:?} does not match requested {:?}",
            weights.config, config.model_config
        )));
    }
    let adam = AdamState::from_extra(&mut weights, &extra, checkpoint)?;
    let manifest = ingest_corpus(&config.corpus_dirs, min_source_dim(&config.effective_burst_spec()))?;
    let steps_per_epoch = manifest.entries.len().div_ceil(config.batch_size) as u64;
    let done_epochs = (weights.step / steps_per_epoch) as usize;
    if weights.step % steps_per_epoch != 0 {
        return Err(Error::Data(format!(
            "checkpoint step {} is not an epoch boundary (steps per epoch {steps_per_epoch})",
            weights.step
        )));
    }
    run_training(config, weights, adam, done_epochs)
}

fn run_training(
    config: &TrainConfig,
    mut weights: Weights,
    mut adam: AdamState,
    start_epoch: usize,
) -> Result<TrainReport> {
    let spec = config.effective_burst_spec();
    let manifest = ingest_corpus(&config.corpus_dirs, min_source_dim(&spec))?;
    let mut log = LossLog::open(&config.checkpoint_dir)?;
    let mut epochs = Vec::new();
    let mut checkpoints = Vec::new();
    let channels = config.model_config.input_channels_per_frame;

    let mut global_step = weights.step;
    for epoch in start_epoch..config.epochs {
        let mut order: Vec<usize> = (0..manifest.entries.len()).collect();
        DetRng::derive(config.seed, &[TAG_EPOCH_SHUFFLE, epoch as u64]).shuffle(&mut order);

        let mut epoch_acc = LossTerms::default();
        let mut epoch_steps = 0usize;
        for (step_in_epoch, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = GradBuffers::zeros_like(&weights);
            let mut batch_acc = LossTerms::default();
            for (slot, &img_idx) in batch.iter().enumerate() {
                let entry = &manifest.entries[img_idx];
                let image = load_training_image(entry, channels)?;
                let mut rng = DetRng::derive(
                    config.seed,
                    &[TAG_SYNTH, epoch as u64, step_in_epoch as u64, slot as u64],
                );
                let pair = make_burst_pair(&image, &spec, &mut rng).map_err(|e| {
                    Error::Data(format!("step {global_step}, image {:?}: {e}", entry.path))
                })?;
                let (out_a, cache_a) = forward_train(&weights, &pair.burst_a)?;
                weights.update_running_stats(&cache_a);
                let (out_b, cache_b) = forward_train(&weights, &pair.burst_b)?;
                weights.update_running_stats(&cache_b);
                let (terms, pair_grads) =
                    total_loss(&out_a, &out_b, &pair.flow_ab, &config.loss_config).map_err(
                        |e| Error::Numeric(format!("step {global_step}: {e}")),
                    )?;
                backward(&weights, &cache_a, &out_a, &pair_grads.a, &mut grads);
                backward(&weights, &cache_b, &out_b, &pair_grads.b, &mut grads);
                batch_acc.total += terms.total;
                batch_acc.detection += terms.detection;
                batch_acc.cosim += terms.cosim;
                batch_acc.peakiness_a += terms.peakiness_a;
                batch_acc.peakiness_b += terms.peakiness_b;
                batch_acc.reliability += terms.reliability;
            }
            let inv = 1.0 / batch.len() as f64;
            for t in [
                &mut batch_acc.total,
                &mut batch_acc.detection,
                &mut batch_acc.cosim,
                &mut batch_acc.peakiness_a,
                &mut batch_acc.peakiness_b,
                &mut batch_acc.reliability,
            ] {
                *t *= inv;
            }
            if !batch_acc.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at step {global_step}"
                )));
            }
            grads.scale(inv as f32);
            global_step += 1;
            adam.apply(
                &mut weights,
                &grads,
                config.learning_rate,
                config.weight_decay,
                global_step,
            );
            weights.step = global_step;
            log.record(global_step, &batch_acc);
            epoch_acc.total += batch_acc.total;
            epoch_acc.detection += batch_acc.detection;
            epoch_acc.cosim += batch_acc.cosim;
            epoch_acc.peakiness_a += batch_acc.peakiness_a;
            epoch_acc.peakiness_b += batch_acc.peakiness_b;
            epoch_acc.reliability += batch_acc.reliability;
            epoch_steps += 1;
        }
        let inv = 1.0 / epoch_steps as f64;
        let mean = LossTerms {
            total: epoch_acc.total * inv,
            detection: epoch_acc.detection * inv,
            cosim: epoch_acc.cosim * inv,
            peakiness_a: epoch_acc.peakiness_a * inv,
            peakiness_b: epoch_acc.peakiness_b * inv,
            reliability: epoch_acc.reliability * inv,
        };
        epochs.push(EpochStats { epoch: epoch + 1, mean });
        let path = config
            .checkpoint_dir
            .join(format!("checkpoint_epoch_{:04}.lbck", epoch + 1));
        save_checkpoint(&path, &weights, &adam.to_extra_tensors())?;
        checkpoints.push(path);
    }
    Ok(TrainReport {
        weights,
        epochs,
        steps_run: global_step,
        checkpoints,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::texture;

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("burstfeat_trainer_{tag}"));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn tiny_config(corpus: PathBuf, ckpt: PathBuf, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 1,
            crop_size: 32,
            burst_spec: BurstSpec {
                frame_count: 3,
                max_translation: 3.0,
                noise_variance_range: (0.05, 0.1),
                homography_jitter: 0.02,
                crop_size: 32,
                seed: 0,
            },
            loss_config: LossConfig { patch_size: 16, ..LossConfig::default() },
            model_config: ModelConfig::grayscale(3, 17),
            corpus_dirs: vec![corpus],
            checkpoint_dir: ckpt,
            seed: 99,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn ingest_rejects_empty_and_counts_undersized() {
        let dir = tmpdir("ingest");
        assert!(matches!(
            ingest_corpus(std::slice::from_ref(&dir), 48),
            Err(Error::Data(_))
        ));
        for i in 0..3 {
            texture::textured_image(64, 64, i)
                .save_png8(&dir.join(format!("ok_{i}.png")))
                .unwrap();
        }
        texture::textured_image(20, 20, 9)
            .save_png8(&dir.join("small.png"))
            .unwrap();
        let m = ingest_corpus(std::slice::from_ref(&dir), 48).unwrap();
        assert_eq!(m.entries.len(), 3);
        assert_eq!(m.skipped_small, 1);
        let m2 = ingest_corpus(&[dir], 48).unwrap();
        assert_eq!(m.content_hash, m2.content_hash);
    }

    #[test]
    fn zero_gradient_parameters_shrink_by_exact_decay() {
        let mut weights = init_model(&ModelConfig::grayscale(3, 1)).unwrap();
        let before: Vec<f32> = weights.convs[2].weight.clone();
        let grads = GradBuffers::zeros_like(&weights);
        let mut adam = AdamState::new(&mut weights);
        let (lr, wd) = (1e-4, 5e-4);
        adam.apply(&mut weights, &grads, lr, wd, 1);
        let decay = (1.0 - lr * wd) as f32;
        for (b, a) in before.iter().zip(&weights.convs[2].weight) {
            assert_eq!(*a, b * decay);
        }
    }

    #[test]
    fn one_epoch_run_produces_checkpoint_and_log() {
        let corpus = tmpdir("run1_corpus");
        for i in 0..2 {
            texture::textured_image(72, 72, 100 + i)
                .save_png8(&corpus.join(format!("img_{i}.png")))
                .unwrap();
        }
        let ckpt = tmpdir("run1_ckpt");
        let config = tiny_config(corpus, ckpt.clone(), 1);
        let report = train(&config).unwrap();
        assert_eq!(report.checkpoints.len(), 1);
        assert!(report.checkpoints[0].exists());
        assert_eq!(report.steps_run, 2); // 2 images, batch 1
        assert!(ckpt.join("loss_log.tsv").exists());
        let log = std::fs::read_to_string(ckpt.join("loss_log.tsv")).unwrap();
        assert!(log.lines().count() >= 3); // header + 2 steps
        assert!(report.epochs[0].mean.total.is_finite());
    }

    #[test]
    fn training_is_deterministic_across_runs() {
        let corpus = tmpdir("det_corpus");
        for i in 0..2 {
            texture::textured_image(72, 72, 200 + i)
                .save_png8(&corpus.join(format!("img_{i}.png")))
                .unwrap();
        }
        let ckpt1 = tmpdir("det_ckpt1");
        let ckpt2 = tmpdir("det_ckpt2");
        let r1 = train(&tiny_config(corpus.clone(), ckpt1, 2)).unwrap();
        let r2 = train(&tiny_config(corpus, ckpt2, 2)).unwrap();
        let b1 = std::fs::read(&r1.checkpoints[1]).unwrap();
        let b2 = std::fs::read(&r2.checkpoints[1]).unwrap();
        assert_eq!(b1, b2, "checkpoint bytes differ between identical runs");
        for (e1, e2) in r1.epochs.iter().zip(&r2.epochs) {
            assert_eq!(e1.mean.total, e2.mean.total);
        }
    }

    #[test]
    fn resume_retraces_the_uninterrupted_trajectory() {
        let corpus = tmpdir("res_corpus");
        for i in 0..3 {
            texture::textured_image(72, 72, 300 + i)
                .save_png8(&corpus.join(format!("img_{i}.png")))
                .unwrap();
        }
        let full_ckpt = tmpdir("res_full");
        let full = train(&tiny_config(corpus.clone(), full_ckpt, 2)).unwrap();

        let part_ckpt = tmpdir("res_part");
        let part_cfg1 = tiny_config(corpus.clone(), part_ckpt.clone(), 1);
        let part = train(&part_cfg1).unwrap();
        assert_eq!(part.steps_run, 3);
        let part_cfg2 = tiny_config(corpus, part_ckpt, 2);
        let resumed = resume(&part_cfg2, &part.checkpoints[0]).unwrap();
        assert_eq!(resumed.steps_run, full.steps_run);
        // identical final checkpoints and identical second-epoch losses
        let b_full = std::fs::read(&full.checkpoints[1]).unwrap();
        let b_res = std::fs::read(&resumed.checkpoints[0]).unwrap();
        assert_eq!(b_full, b_res);
        assert_eq!(full.epochs[1].mean.total, resumed.epochs[0].mean.total);
    }

    #[test]
    fn resume_rejects_mismatched_model_config() {
        let corpus = tmpdir("mis_corpus");
        for i in 0..2 {
            texture::textured_image(72, 72, 400 + i)
                .save_png8(&corpus.join(format!("img_{i}.png")))
                .unwrap();
        }
        let ckpt = tmpdir("mis_ckpt");
        let cfg = tiny_config(corpus, ckpt, 1);
        let report = train(&cfg).unwrap();
        let mut other = cfg.clone();
        other.model_config = ModelConfig::grayscale(5, 17);
        let err = resume(&other, &report.checkpoints[0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("frame_count: 3") && msg.contains("frame_count: 5"), "{msg}");
    }
}
