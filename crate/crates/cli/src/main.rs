//! Command-line interface for the burstfeat pipeline.
//!
//! Subcommands cover synthetic burst generation, training, multi-scale
//! extraction, matching/repeatability evaluation, trajectory error
//! evaluation, SfM feature export, and reconstruction-statistics reports.
//!
//! Exit codes: 0 success, 2 bad arguments or configuration, 3 data error
//! (missing or malformed inputs), 4 numeric failure. A TOML config file can
//! seed any command's parameters (`--config`, or the `BURSTFEAT_CONFIG`
//! environment variable); explicit flags win over the file.

use burstfeat::burstsynth::{make_burst_pair, BurstSpec};
use burstfeat::error::Error;
use burstfeat::evalharness::hpatches::{
    hpatches_burst_benchmark, write_report, BenchmarkParams,
};
use burstfeat::evalharness::recon::reconstruction_stats;
use burstfeat::evalharness::trajectory::{align_trajectory, ate_rpe, PoseTrajectory};
use burstfeat::extractor::{extract_features, ExtractParams};
use burstfeat::image::ImageBuf;
use burstfeat::interop;
use burstfeat::network::checkpoint::load_checkpoint;
use burstfeat::network::forward;
use burstfeat::rng::DetRng;
use burstfeat::trainer::{ingest_corpus, min_source_dim, resume, train, TrainConfig};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

const CONFIG_ENV: &str = "BURSTFEAT_CONFIG";

#[derive(Parser)]
#[command(
    name = "burstfeat",
    about = "Burst-aware learned features for low-light imagery",
    version
)]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Cap on worker threads (defaults to the machine's core count).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate burst pairs with ground-truth flow maps from a corpus.
    Synth(SynthArgs),
    /// Train the joint detector/descriptor on synthesized burst pairs.
    Train(TrainArgs),
    /// Extract multi-scale features from burst directories.
    Extract(ExtractArgs),
    /// Matching accuracy and repeatability over an HPatches-format dataset.
    EvalMatching(EvalMatchingArgs),
    /// Camera-trajectory error between estimated and ground-truth poses.
    EvalPose(EvalPoseArgs),
    /// Export feature files to the SfM text import format.
    ExportColmap(ExportArgs),
    /// Aggregate normalized SfM reports into reconstruction statistics.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Source image directory (repeatable).
    #[arg(long = "corpus", required = true)]
    corpus: Vec<PathBuf>,
    /// Output directory for the generated pairs.
    #[arg(long)]
    out: PathBuf,
    /// Number of burst pairs to generate.
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Master seed; identical seeds reproduce identical outputs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Frames per burst (odd; default 5, the training recipe).
    #[arg(long)]
    frames: Option<usize>,
    /// Maximum apparent translation in pixels (default 30).
    #[arg(long = "max-translation")]
    max_translation: Option<f64>,
    /// Lower bound of the noise variance range (default 0.3).
    #[arg(long = "noise-min")]
    noise_min: Option<f64>,
    /// Upper bound of the noise variance range (default 0.6).
    #[arg(long = "noise-max")]
    noise_max: Option<f64>,
    /// Crop size in pixels (default 192).
    #[arg(long)]
    crop: Option<usize>,
    /// Corner perturbation as a fraction of the crop size (default 0.05).
    #[arg(long)]
    jitter: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus directories (repeatable; required unless set in the config).
    #[arg(long = "corpus")]
    corpus: Vec<PathBuf>,
    /// Checkpoint/log output directory.
    #[arg(long = "out")]
    out: Option<PathBuf>,
    /// Training epochs (default 25).
    #[arg(long)]
    epochs: Option<usize>,
    /// Fixed learning rate (default 0.0001).
    #[arg(long)]
    lr: Option<f64>,
    /// Decoupled weight decay (default 0.0005).
    #[arg(long)]
    wd: Option<f64>,
    /// Burst pairs per optimizer step (default 4).
    #[arg(long)]
    batch: Option<usize>,
    /// Crop size (default 192).
    #[arg(long)]
    crop: Option<usize>,
    /// Frames per burst (default 5).
    #[arg(long)]
    frames: Option<usize>,
    /// Maximum apparent translation in pixels (default 30).
    #[arg(long = "max-translation")]
    max_translation: Option<f64>,
    /// Corner perturbation as a fraction of the crop size (default 0.05).
    #[arg(long)]
    jitter: Option<f64>,
    /// Grayscale frames instead of RGB.
    #[arg(long, default_value_t = false)]
    gray: bool,
    /// Master seed (default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Resume from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    /// Checkpoint holding the trained weights.
    #[arg(long)]
    weights: PathBuf,
    /// A burst directory, or a manifest file listing burst directories.
    input: PathBuf,
    /// Output directory for .lbft feature files.
    #[arg(long)]
    out: PathBuf,
    /// Keypoint budget (default 4000).
    #[arg(long = "max-kpts")]
    max_keypoints: Option<usize>,
    /// Detection confidence threshold (default 0.7).
    #[arg(long = "det-thr")]
    detection_threshold: Option<f32>,
    /// Reliability confidence threshold (default 0.7).
    #[arg(long = "rel-thr")]
    reliability_threshold: Option<f32>,
    /// Multi-scale pyramid on/off (default on; off runs a single scale).
    #[arg(long, default_value = "on")]
    scales: String,
    /// Also dump detection/reliability confidence maps as PNGs.
    #[arg(long, default_value_t = false)]
    dump_confidence: bool,
}

#[derive(Args)]
struct EvalMatchingArgs {
    /// HPatches-format dataset directory (scene subdirectories).
    dataset: PathBuf,
    /// Checkpoint holding the weights to evaluate.
    #[arg(long)]
    weights: PathBuf,
    /// Report output directory.
    #[arg(long)]
    out: PathBuf,
    /// Noise variance levels (comma separated; 0 is the noise-free gold).
    #[arg(long, default_value = "0.0,0.3,0.6", value_delimiter = ',')]
    noise: Vec<f64>,
    /// Frames per synthesized burst.
    #[arg(long, default_value_t = 5)]
    frames: usize,
    /// Maximum apparent translation in pixels.
    #[arg(long = "max-translation", default_value_t = 30.0)]
    max_translation: f64,
    #[arg(long = "max-kpts", default_value_t = 4000)]
    max_keypoints: usize,
    #[arg(long = "det-thr", default_value_t = 0.7)]
    detection_threshold: f32,
    #[arg(long = "rel-thr", default_value_t = 0.7)]
    reliability_threshold: f32,
    /// Master seed for burst synthesis.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalPoseArgs {
    /// Estimated trajectory (text format; see docs).
    est: PathBuf,
    /// Ground-truth trajectory.
    gt: PathBuf,
    /// Skip similarity alignment and compare poses as given.
    #[arg(long, default_value_t = false)]
    no_align: bool,
}

#[derive(Args)]
struct ExportArgs {
    /// Directory of .lbft feature files (or a single file).
    input: PathBuf,
    /// Output directory for the text exports.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Normalized SfM report files (TSV).
    files: Vec<PathBuf>,
}

/// Optional TOML config: any section may be present; flags override.
#[derive(Default, serde::Deserialize)]
struct FileConfig {
    train: Option<TrainConfig>,
    extract: Option<ExtractParams>,
    synth: Option<BurstSpec>,
}

fn load_file_config(path: Option<&PathBuf>) -> Result<FileConfig, Error> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let file_config = match load_file_config(cli.config.as_ref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args, &file_config),
        Command::Train(args) => cmd_train(args, &file_config),
        Command::Extract(args) => cmd_extract(args, &file_config),
        Command::EvalMatching(args) => cmd_eval_matching(args),
        Command::EvalPose(args) => cmd_eval_pose(args),
        Command::ExportColmap(args) => cmd_export_colmap(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn cmd_synth(args: SynthArgs, file: &FileConfig) -> Result<(), Error> {
    let base = file.synth.clone().unwrap_or_default();
    let spec = BurstSpec {
        frame_count: args.frames.unwrap_or(base.frame_count),
        max_translation: args.max_translation.unwrap_or(base.max_translation),
        noise_variance_range: (
            args.noise_min.unwrap_or(base.noise_variance_range.0),
            args.noise_max.unwrap_or(base.noise_variance_range.1),
        ),
        homography_jitter: args.jitter.unwrap_or(base.homography_jitter),
        crop_size: args.crop.unwrap_or(base.crop_size),
        seed: args.seed,
    };
    spec.validate()?;
    let manifest = ingest_corpus(&args.corpus, min_source_dim(&spec))?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    for i in 0..args.count {
        let entry = &manifest.entries[i % manifest.entries.len()];
        let image = ImageBuf::load(&entry.path)?;
        let mut rng = DetRng::derive(args.seed, &[0xc0, i as u64]);
        let pair = make_burst_pair(&image, &spec, &mut rng)?;
        let pair_dir = args.out.join(format!("pair_{i:04}"));
        interop::write_burst_dir(&pair.burst_a, &pair_dir.join("burst_a"))?;
        interop::write_burst_dir(&pair.burst_b, &pair_dir.join("burst_b"))?;
        interop::write_flow_file(&pair.flow_ab, &pair_dir.join("flow_ab.lbfw"))?;
        let rows = pair.homography_ab.rows();
        let flat: Vec<String> = rows.iter().flatten().map(|v| format!("{v}")).collect();
        let meta = format!(
            "source: {}\nhomography_ab: {}\n",
            entry.path.display(),
            flat.join(" ")
        );
        std::fs::write(pair_dir.join("pair_meta.txt"), meta).map_err(|e| Error::Io {
            path: pair_dir.clone(),
            source: e,
        })?;
    }
    println!(
        "synthesized {} burst pairs from {} corpus images into {}",
        args.count,
        manifest.entries.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs, file: &FileConfig) -> Result<(), Error> {
    let mut cfg = file.train.clone().unwrap_or_default();
    if !args.corpus.is_empty() {
        cfg.corpus_dirs = args.corpus;
    }
    if let Some(out) = args.out {
        cfg.checkpoint_dir = out;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.learning_rate = lr;
    }
    if let Some(wd) = args.wd {
        cfg.weight_decay = wd;
    }
    if let Some(b) = args.batch {
        cfg.batch_size = b;
    }
    if let Some(c) = args.crop {
        cfg.crop_size = c;
    }
    if let Some(f) = args.frames {
        cfg.model_config.frame_count = f;
        cfg.burst_spec.frame_count = f;
    }
    if let Some(t) = args.max_translation {
        cfg.burst_spec.max_translation = t;
    }
    if let Some(j) = args.jitter {
        cfg.burst_spec.homography_jitter = j;
    }
    if args.gray {
        cfg.model_config.input_channels_per_frame = 1;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
        cfg.model_config.weight_init_seed = s;
    }
    if cfg.corpus_dirs.is_empty() {
        return Err(Error::Config(
            "no corpus directories (pass --corpus or set train.corpus_dirs)".into(),
        ));
    }
    let report = match args.resume {
        Some(ckpt) => resume(&cfg, &ckpt)?,
        None => train(&cfg)?,
    };
    for e in &report.epochs {
        println!(
            "epoch {:3}  total {:.4}  cosim {:.4}  peak_a {:.4}  peak_b {:.4}  rel {:.4}",
            e.epoch,
            e.mean.total,
            e.mean.cosim,
            e.mean.peakiness_a,
            e.mean.peakiness_b,
            e.mean.reliability
        );
    }
    if let Some(last) = report.checkpoints.last() {
        println!("final checkpoint: {}", last.display());
    }
    Ok(())
}

fn adapt_burst_channels(
    burst: burstfeat::burstsynth::Burst,
    channels: usize,
) -> Result<burstfeat::burstsynth::Burst, Error> {
    if burst.frames[0].channels == channels {
        return Ok(burst);
    }
    let frames: Vec<ImageBuf> = burst
        .frames
        .iter()
        .map(|f| {
            if channels == 1 {
                f.to_gray()
            } else {
                let mut rgb = ImageBuf::new(f.width, f.height, 3);
                for i in 0..f.width * f.height {
                    for c in 0..3 {
                        rgb.data[i * 3 + c] = f.data[i];
                    }
                }
                rgb
            }
        })
        .collect();
    Ok(burstfeat::burstsynth::Burst {
        frames,
        ..burst
    })
}

fn cmd_extract(args: ExtractArgs, file: &FileConfig) -> Result<(), Error> {
    let (weights, _) = load_checkpoint(&args.weights)?;
    let mut params = file.extract.clone().unwrap_or_default();
    if let Some(v) = args.max_keypoints {
        params.max_keypoints = v;
    }
    if let Some(v) = args.detection_threshold {
        params.detection_threshold = v;
    }
    if let Some(v) = args.reliability_threshold {
        params.reliability_threshold = v;
    }
    params.validate()?;
    let multi_scale = match args.scales.as_str() {
        "on" => true,
        "off" => false,
        other => {
            return Err(Error::Config(format!(
                "--scales must be 'on' or 'off', got '{other}'"
            )))
        }
    };
    let burst_dirs = if args.input.join("metadata.txt").exists() {
        vec![args.input.clone()]
    } else if args.input.is_file() {
        interop::read_burst_manifest(&args.input)?
    } else {
        return Err(Error::Data(format!(
            "{} is neither a burst directory (metadata.txt) nor a manifest file",
            args.input.display()
        )));
    };
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let mut empty = 0usize;
    for dir in &burst_dirs {
        let burst = interop::read_burst_dir(dir)?;
        let burst = adapt_burst_channels(burst, weights.config.input_channels_per_frame)?;
        let mut p = params.clone();
        if !multi_scale {
            let cap = burst.width().max(burst.height()).min(p.scale_max_dim);
            p.scale_max_dim = cap;
            p.scale_min_dim = cap;
        }
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("burst")
            .to_string();
        let fs = extract_features(&weights, &burst, &p, &name)?;
        if fs.is_empty() {
            empty += 1;
        }
        interop::write_feature_file(&fs, &args.out.join(format!("{name}.lbft")))?;
        if args.dump_confidence {
            let out = forward(&weights, &burst)?;
            let mut k_img = ImageBuf::new(out.width, out.height, 1);
            k_img.data.copy_from_slice(&out.detection);
            k_img.save_png8(&args.out.join(format!("{name}_detection.png")))?;
            let mut r_img = ImageBuf::new(out.width, out.height, 1);
            r_img.data.copy_from_slice(&out.reliability);
            r_img.save_png8(&args.out.join(format!("{name}_reliability.png")))?;
        }
        println!("{name}: {} keypoints", fs.len());
    }
    if empty > 0 {
        println!("warning: {empty} of {} bursts produced no keypoints", burst_dirs.len());
    }
    Ok(())
}

fn cmd_eval_matching(args: EvalMatchingArgs) -> Result<(), Error> {
    let (weights, _) = load_checkpoint(&args.weights)?;
    let params = BenchmarkParams {
        noise_levels: args.noise.clone(),
        frame_count: args.frames,
        max_translation: args.max_translation,
        extract: ExtractParams {
            max_keypoints: args.max_keypoints,
            detection_threshold: args.detection_threshold,
            reliability_threshold: args.reliability_threshold,
            ..ExtractParams::default()
        },
        seed: args.seed,
        ..BenchmarkParams::default()
    };
    let report = hpatches_burst_benchmark(&args.dataset, &weights, &params)?;
    write_report(&report, &args.out)?;
    println!("noise\tscenes\tMMA@3\trepeatability");
    for agg in &report.aggregates {
        println!(
            "{:.2}\t{}\t{:.3}\t{:.3}",
            agg.noise, agg.all.scenes, agg.all.mma[2], agg.all.repeatability
        );
    }
    if report.skipped_scenes > 0 {
        println!("warning: skipped {} malformed scenes", report.skipped_scenes);
    }
    println!("full tables in {}", args.out.display());
    Ok(())
}

fn cmd_eval_pose(args: EvalPoseArgs) -> Result<(), Error> {
    let est = PoseTrajectory::read_text(&args.est)?;
    let gt = PoseTrajectory::read_text(&args.gt)?;
    let aligned = if args.no_align {
        est
    } else {
        let sim = align_trajectory(&est, &gt)?;
        println!(
            "alignment: scale {:.6}, rotation angle {:.4} deg",
            sim.scale,
            {
                let r = &sim.rotation;
                let sin = 0.5
                    * ((r[(2, 1)] - r[(1, 2)]).powi(2)
                        + (r[(0, 2)] - r[(2, 0)]).powi(2)
                        + (r[(1, 0)] - r[(0, 1)]).powi(2))
                    .sqrt();
                sin.atan2((r.trace() - 1.0) / 2.0).to_degrees()
            }
        );
        sim.apply(&est)
    };
    let errs = ate_rpe(&aligned, &gt)?;
    println!("metric\ttranslation\trotation_deg");
    println!("ATE\t{}\t{}", errs.ate_trans, errs.ate_rot_deg);
    println!("RPE\t{}\t{}", errs.rpe_trans, errs.rpe_rot_deg);
    Ok(())
}

fn cmd_export_colmap(args: ExportArgs) -> Result<(), Error> {
    let files: Vec<PathBuf> = if args.input.is_file() {
        vec![args.input.clone()]
    } else {
        let mut v: Vec<PathBuf> = std::fs::read_dir(&args.input)
            .map_err(|e| Error::Io {
                path: args.input.clone(),
                source: e,
            })?
            .filter_map(|e| e.ok().map(|d| d.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("lbft"))
            .collect();
        v.sort();
        v
    };
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no .lbft files under {}",
            args.input.display()
        )));
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    for f in &files {
        let fs = interop::read_feature_file(f)?;
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("features");
        interop::export_sfm_text(&fs, &args.out.join(format!("{stem}.txt")))?;
    }
    println!("exported {} feature files to {}", files.len(), args.out.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Error> {
    if args.files.is_empty() {
        return Err(Error::Config("no report files given".into()));
    }
    println!(
        "file\tconv_rate\timages_passed_pct\tkeypoints\tputative\tinliers\tmatch_ratio\tmatch_score\tprecision\tpoints3d"
    );
    for f in &args.files {
        let s = reconstruction_stats(f)?;
        println!(
            "{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.3}\t{:.3}\t{:.3}\t{:.2}",
            f.display(),
            s.convergence_rate,
            s.images_passed_pct,
            s.keypoints_per_image,
            s.putative_matches,
            s.inliers,
            s.match_ratio,
            s.match_score,
            s.precision,
            s.points3d_per_image
        );
        if s.zero_putative_rows > 0 {
            eprintln!(
                "note: {}: {} images had zero putative matches (precision counted as 0)",
                f.display(),
                s.zero_putative_rows
            );
        }
    }
    Ok(())
}
