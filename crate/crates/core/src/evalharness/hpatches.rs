//! Synthetic-burst matching benchmark over HPatches-format datasets.
//!
//! A scene directory holds images `1.<ext>` .. `N.<ext>` plus text
//! homographies `H_1_2` .. `H_1_N` (3x3, row major) mapping image-1
//! coordinates to image-k coordinates. For every image and noise level a
//! robotic burst is synthesized (centered crop, uniform intra-burst motion,
//! fixed noise variance, no perspective jitter: the dataset already varies
//! viewpoint); features extracted from the common frames are scored with
//! matching accuracy and repeatability against the dataset homography
//! composed with the crop offsets.
//!
//! Scene names keep the HPatches convention: `v_*` viewpoint scenes,
//! `i_*` illumination scenes.

use super::{default_mma_thresholds, mma, repeatability};
use crate::burstsynth::{synthesize_burst, BurstSpec};
use crate::error::{Error, Result};
use crate::extractor::{extract_features, ExtractParams, FeatureSet};
use crate::geometry::Homography;
use crate::image::ImageBuf;
use crate::network::Weights;
use crate::rng::DetRng;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug)]
pub struct HpatchesScene {
    pub name: String,
    pub images: Vec<PathBuf>,
    /// homographies[k-2] maps image-1 coordinates to image-k coordinates.
    pub homographies: Vec<Homography>,
}

const SCENE_IMAGE_EXTENSIONS: [&str; 4] = ["ppm", "png", "jpg", "pgm"];

/// Parse one scene directory.
pub fn parse_scene(dir: &Path) -> Result<HpatchesScene> {
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string();
    let mut images = Vec::new();
    for k in 1.. {
        let found = SCENE_IMAGE_EXTENSIONS
            .iter()
            .map(|ext| dir.join(format!("{k}.{ext}")))
            .find(|p| p.exists());
        match found {
            Some(p) => images.push(p),
            None => break,
        }
    }
    if images.len() < 2 {
        return Err(Error::Data(format!(
            "scene {name}: found {} images, need at least 2",
            images.len()
        )));
    }
    let mut homographies = Vec::new();
    for k in 2..=images.len() {
        let path = dir.join(format!("H_1_{k}"));
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let nums: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(&path, e.to_string()))?;
        if nums.len() != 9 {
            return Err(Error::format(
                &path,
                format!("expected 9 numbers, found {}", nums.len()),
            ));
        }
        homographies.push(Homography::from_rows([
            [nums[0], nums[1], nums[2]],
            [nums[3], nums[4], nums[5]],
            [nums[6], nums[7], nums[8]],
        ]));
    }
    Ok(HpatchesScene { name, images, homographies })
}

/// Benchmark configuration.
#[derive(Clone, Debug)]
pub struct BenchmarkParams {
    /// Noise variances to evaluate; 0.0 is the noise-free gold reference.
    pub noise_levels: Vec<f64>,
    pub frame_count: usize,
    pub max_translation: f64,
    pub extract: ExtractParams,
    pub mma_thresholds: Vec<f64>,
    pub repeatability_eps: f64,
    pub seed: u64,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        BenchmarkParams {
            noise_levels: vec![0.0, 0.3, 0.6],
            frame_count: 5,
            max_translation: 30.0,
            extract: ExtractParams::default(),
            mma_thresholds: default_mma_thresholds(),
            repeatability_eps: 3.0,
            seed: 0,
        }
    }
}

/// Per (scene, noise level) metrics: MMA per threshold and repeatability,
/// averaged over the scene's image pairs (1, k).
#[derive(Clone, Debug)]
pub struct SceneResult {
    pub scene: String,
    pub noise: f64,
    pub pairs: usize,
    pub mma: Vec<f64>,
    pub repeatability: f64,
    pub mean_matches: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SubsetAggregate {
    pub scenes: usize,
    pub mma: Vec<f64>,
    pub repeatability: f64,
}

#[derive(Clone, Debug)]
pub struct LevelAggregate {
    pub noise: f64,
    pub all: SubsetAggregate,
    pub viewpoint: SubsetAggregate,
    pub illumination: SubsetAggregate,
}

#[derive(Clone, Debug)]
pub struct BenchmarkReport {
    pub thresholds: Vec<f64>,
    pub per_scene: Vec<SceneResult>,
    pub aggregates: Vec<LevelAggregate>,
    pub skipped_scenes: usize,
}

fn fnv_str(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Burst of one benchmark image: centered crop, no perspective jitter.
/// Returns the burst and the crop origin.
fn benchmark_burst(
    image: &ImageBuf,
    params: &BenchmarkParams,
    noise: f64,
    rng: &mut DetRng,
) -> Result<(crate::burstsynth::Burst, (f64, f64))> {
    let margin = params.max_translation.ceil() as usize + 1;
    let min_side = image.width.min(image.height);
    if min_side <= 2 * margin + 32 {
        return Err(Error::Data(format!(
            "image {}x{} too small for a burst crop with margin {margin}",
            image.width, image.height
        )));
    }
    let crop = min_side - 2 * margin;
    let origin = (
        (image.width - crop) as f64 / 2.0,
        (image.height - crop) as f64 / 2.0,
    );
    let spec = BurstSpec {
        frame_count: params.frame_count,
        max_translation: params.max_translation,
        noise_variance_range: (noise, noise),
        homography_jitter: 0.0,
        crop_size: crop,
        seed: 0,
    };
    let warp = Homography::translation(origin.0, origin.1);
    let burst = synthesize_burst(image, &warp, &spec, rng)?;
    Ok((burst, origin))
}

fn load_scene_image(path: &Path, channels: usize) -> Result<ImageBuf> {
    let img = ImageBuf::load(path)?;
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

fn subset_aggregate<'a>(
    results: impl Iterator<Item = &'a SceneResult>,
    n_thresholds: usize,
) -> SubsetAggregate {
    let mut agg = SubsetAggregate {
        scenes: 0,
        mma: vec![0.0; n_thresholds],
        repeatability: 0.0,
    };
    for r in results {
        agg.scenes += 1;
        for (a, m) in agg.mma.iter_mut().zip(&r.mma) {
            *a += m;
        }
        agg.repeatability += r.repeatability;
    }
    if agg.scenes > 0 {
        let inv = 1.0 / agg.scenes as f64;
        for a in &mut agg.mma {
            *a *= inv;
        }
        agg.repeatability *= inv;
    }
    agg
}

/// Run the benchmark over every scene directory under `dataset_dir`.
/// Malformed scenes are skipped and counted.
pub fn hpatches_burst_benchmark(
    dataset_dir: &Path,
    weights: &Weights,
    params: &BenchmarkParams,
) -> Result<BenchmarkReport> {
    let mut scene_dirs: Vec<PathBuf> = std::fs::read_dir(dataset_dir)
        .map_err(|e| Error::io(dataset_dir, e))?
        .filter_map(|e| e.ok().map(|d| d.path()))
        .filter(|p| p.is_dir())
        .collect();
    scene_dirs.sort();
    if scene_dirs.is_empty() {
        return Err(Error::Data(format!(
            "no scene directories under {}",
            dataset_dir.display()
        )));
    }
    let channels = weights.config.input_channels_per_frame;
    let mut per_scene = Vec::new();
    let mut skipped = 0usize;
    for dir in &scene_dirs {
        let scene = match parse_scene(dir) {
            Ok(s) => s,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        match run_scene(&scene, weights, params, channels) {
            Ok(mut results) => per_scene.append(&mut results),
            Err(_) => skipped += 1,
        }
    }
    if per_scene.is_empty() {
        return Err(Error::Data("every scene was skipped as malformed".into()));
    }
    let nt = params.mma_thresholds.len();
    let mut aggregates = Vec::new();
    for &noise in &params.noise_levels {
        let at_level = |pred: &dyn Fn(&&SceneResult) -> bool| {
            subset_aggregate(
                per_scene
                    .iter()
                    .filter(|r| r.noise == noise)
                    .filter(pred),
                nt,
            )
        };
        aggregates.push(LevelAggregate {
            noise,
            all: at_level(&|_| true),
            viewpoint: at_level(&|r| r.scene.starts_with("v_")),
            illumination: at_level(&|r| r.scene.starts_with("i_")),
        });
    }
    Ok(BenchmarkReport {
        thresholds: params.mma_thresholds.clone(),
        per_scene,
        aggregates,
        skipped_scenes: skipped,
    })
}

fn run_scene(
    scene: &HpatchesScene,
    weights: &Weights,
    params: &BenchmarkParams,
    channels: usize,
) -> Result<Vec<SceneResult>> {
    let scene_tag = fnv_str(&scene.name);
    let images: Vec<ImageBuf> = scene
        .images
        .iter()
        .map(|p| load_scene_image(p, channels))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (li, &noise) in params.noise_levels.iter().enumerate() {
        // burst + features per image
        let mut features: Vec<FeatureSet> = Vec::with_capacity(images.len());
        let mut origins = Vec::with_capacity(images.len());
        for (k, img) in images.iter().enumerate() {
            let mut rng = DetRng::derive(params.seed, &[0xb3, scene_tag, k as u64, li as u64]);
            let (burst, origin) = benchmark_burst(img, params, noise, &mut rng)?;
            let fs = extract_features(
                weights,
                &burst,
                &params.extract,
                &format!("{}_{}", scene.name, k + 1),
            )?;
            features.push(fs);
            origins.push(origin);
        }
        let mut mma_acc = vec![0.0f64; params.mma_thresholds.len()];
        let mut rep_acc = 0.0f64;
        let mut match_acc = 0.0f64;
        let pairs = scene.homographies.len();
        for (k, h_1k) in scene.homographies.iter().enumerate() {
            // common-frame-1 -> common-frame-k: undo crop 1, apply dataset
            // homography, apply crop k
            let h = Homography::translation(-origins[k + 1].0, -origins[k + 1].1)
                .compose(h_1k)
                .compose(&Homography::translation(origins[0].0, origins[0].1));
            let res = mma(&features[0], &features[k + 1], &h, &params.mma_thresholds);
            for (a, m) in mma_acc.iter_mut().zip(&res.accuracy) {
                *a += m;
            }
            match_acc += res.match_count as f64;
            rep_acc += repeatability(&features[0], &features[k + 1], &h, params.repeatability_eps)?;
        }
        let inv = 1.0 / pairs as f64;
        out.push(SceneResult {
            scene: scene.name.clone(),
            noise,
            pairs,
            mma: mma_acc.iter().map(|a| a * inv).collect(),
            repeatability: rep_acc * inv,
            mean_matches: match_acc * inv,
        });
    }
    Ok(out)
}

/// Write the report as TSV tables plus per-level MMA curve series files
/// (threshold, accuracy) for plotting.
pub fn write_report(report: &BenchmarkReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let io = |e| Error::io(out_dir, e);

    let per_scene = out_dir.join("per_scene.tsv");
    let mut f = std::fs::File::create(&per_scene).map_err(io)?;
    write!(f, "scene\tnoise\tpairs\trepeatability\tmean_matches").map_err(io)?;
    for t in &report.thresholds {
        write!(f, "\tmma@{t}").map_err(io)?;
    }
    writeln!(f).map_err(io)?;
    for r in &report.per_scene {
        write!(
            f,
            "{}\t{}\t{}\t{:.4}\t{:.1}",
            r.scene, r.noise, r.pairs, r.repeatability, r.mean_matches
        )
        .map_err(io)?;
        for m in &r.mma {
            write!(f, "\t{m:.4}").map_err(io)?;
        }
        writeln!(f).map_err(io)?;
    }

    let summary = out_dir.join("summary.tsv");
    let mut f = std::fs::File::create(&summary).map_err(io)?;
    write!(f, "noise\tsubset\tscenes\trepeatability").map_err(io)?;
    for t in &report.thresholds {
        write!(f, "\tmma@{t}").map_err(io)?;
    }
    writeln!(f).map_err(io)?;
    for agg in &report.aggregates {
        for (tag, sub) in [
            ("all", &agg.all),
            ("viewpoint", &agg.viewpoint),
            ("illumination", &agg.illumination),
        ] {
            write!(
                f,
                "{}\t{}\t{}\t{:.4}",
                agg.noise, tag, sub.scenes, sub.repeatability
            )
            .map_err(io)?;
            for m in &sub.mma {
                write!(f, "\t{m:.4}").map_err(io)?;
            }
            writeln!(f).map_err(io)?;
        }
    }

    for agg in &report.aggregates {
        let series = out_dir.join(format!("mma_curve_noise_{:.2}.tsv", agg.noise));
        let mut f = std::fs::File::create(&series).map_err(io)?;
        for (t, m) in report.thresholds.iter().zip(&agg.all.mma) {
            writeln!(f, "{t}\t{m:.6}").map_err(io)?;
        }
    }
    Ok(())
}

/// Generate a synthetic HPatches-format scene from a procedural texture:
/// image 1 plus `count - 1` perspective-warped variants with their exact
/// homographies. Useful for smoke tests and demos without the dataset.
pub fn write_synthetic_scene(
    dir: &Path,
    name: &str,
    size: usize,
    count: usize,
    seed: u64,
) -> Result<PathBuf> {
    let scene_dir = dir.join(name);
    std::fs::create_dir_all(&scene_dir).map_err(|e| Error::io(&scene_dir, e))?;
    let base = crate::texture::textured_image(size, size, seed);
    base.save_png8(&scene_dir.join("1.png"))?;
    let mut rng = DetRng::derive(seed, &[0x4f1e]);
    for k in 2..=count {
        let c = (size - 1) as f64;
        let src = [(0.0, 0.0), (c, 0.0), (c, c), (0.0, c)];
        let mut dst = src;
        for corner in &mut dst {
            corner.0 += rng.uniform_in(-0.035, 0.035) * c;
            corner.1 += rng.uniform_in(-0.035, 0.035) * c;
        }
        let h_1k = Homography::from_point_pairs(&src, &dst)?;
        let h_k1 = h_1k.inverse()?;
        let mut img = ImageBuf::new(size, size, 1);
        for y in 0..size {
            for x in 0..size {
                if let Some((sx, sy)) = h_k1.apply(x as f64, y as f64) {
                    let sx = sx.clamp(0.0, c);
                    let sy = sy.clamp(0.0, c);
                    img.set(x, y, 0, base.sample_bilinear(sx, sy, 0));
                }
            }
        }
        img.save_png8(&scene_dir.join(format!("{k}.png")))?;
        let rows = h_1k.rows();
        let mut text = String::new();
        for row in rows {
            text.push_str(&format!("{} {} {}\n", row[0], row[1], row[2]));
        }
        std::fs::write(scene_dir.join(format!("H_1_{k}")), text)
            .map_err(|e| Error::io(&scene_dir, e))?;
    }
    Ok(scene_dir)
}
