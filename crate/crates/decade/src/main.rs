//! Command-line entry point wiring the preparation, training, adaptation
//! and evaluation pipelines.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data/parse error,
//! 4 numeric/training error.

mod run_config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use decade::dataio;
use decade::evaluation::{build_report, EvalReport};
use decade::features::{
    build_decade_features, build_disnet_features, effective_orientation, ClassPriors,
};
use decade::kitti::{
    self, extract_crop, load_detections, load_split, BBox, DetectionRecord, ImageMeta,
    LabelRecord,
};
use decade::layers::LayerSpec;
use decade::matching::{build_adaptation_dataset, match_detections, MatchingError};
use decade::models::{
    self, build_disnet, build_distmlp, build_posecnn, load_checkpoint, pose_output_to_degrees,
    save_checkpoint, CheckpointMeta, NetworkDef,
};
use decade::network::{gradient_check, Network};
use decade::seed::{derive_seed, rng_for};
use decade::synth::{generate_samples, perturb_detections, render_bar_into_image, SynthConfig};
use decade::tensor::Tensor;
use decade::training::{train, Dataset, TrainConfig, TrainOutcome};

use run_config::RunConfig;

#[derive(Parser)]
#[command(name = "decade", about = "Detection-wise distance estimation toolkit")]
struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TrainTarget {
    Pose,
    Dist,
    Disnet,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AdaptTarget {
    Pose,
    Dist,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    Gt,
    E2e,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DistanceNetwork {
    Distmlp,
    Disnet,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize pose/distance datasets from labels and images.
    Prepare,
    /// Train one network on the prepared ground-truth datasets.
    Train { which: TrainTarget },
    /// Fine-tune a trained network on detector outputs (pose first, then
    /// dist).
    Adapt {
        which: AdaptTarget,
        /// Use adapted pose/dist checkpoints where applicable.
        #[arg(long)]
        adapted_pose: bool,
    },
    /// Evaluate on ground-truth annotations (gt) or matched detections
    /// (e2e).
    Eval {
        mode: EvalMode,
        /// Distance network to evaluate.
        #[arg(long, value_enum, default_value_t = DistanceNetwork::Distmlp)]
        network: DistanceNetwork,
        #[arg(long)]
        pose_checkpoint: Option<PathBuf>,
        #[arg(long)]
        dist_checkpoint: Option<PathBuf>,
    },
    /// Predict orientation and distance for every detection in a file.
    Predict {
        #[arg(long)]
        pose_checkpoint: Option<PathBuf>,
        #[arg(long)]
        dist_checkpoint: Option<PathBuf>,
    },
    /// Print the parameter/FLOP table for all three networks.
    Complexity,
    /// Mean single-sample inference latency of a checkpoint.
    Bench {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Generate a synthetic dataset in the KITTI-compatible file formats.
    Synth {
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Also write a detections CSV with this box jitter std.
        #[arg(long)]
        jitter: Option<f64>,
    },
    /// Finite-difference gradient check over all layer kinds.
    Gradcheck,
}

/// Error with a stable process exit code.
#[derive(Debug)]
enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<kitti::KittiError> for CliError {
    fn from(e: kitti::KittiError) -> Self {
        CliError::Data(e.to_string())
    }
}
impl From<decade::dataio::DataIoError> for CliError {
    fn from(e: decade::dataio::DataIoError) -> Self {
        CliError::Data(e.to_string())
    }
}
impl From<models::CheckpointError> for CliError {
    fn from(e: models::CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}
impl From<decade::training::TrainError> for CliError {
    fn from(e: decade::training::TrainError) -> Self {
        CliError::Numeric(e.to_string())
    }
}
impl From<decade::network::NetworkError> for CliError {
    fn from(e: decade::network::NetworkError) -> Self {
        CliError::Numeric(e.to_string())
    }
}
impl From<decade::evaluation::EvalError> for CliError {
    fn from(e: decade::evaluation::EvalError) -> Self {
        CliError::Numeric(e.to_string())
    }
}
impl From<MatchingError> for CliError {
    fn from(e: MatchingError) -> Self {
        CliError::Data(e.to_string())
    }
}
impl From<decade::features::FeatureError> for CliError {
    fn from(e: decade::features::FeatureError) -> Self {
        CliError::Data(e.to_string())
    }
}
impl From<decade::synth::SynthError> for CliError {
    fn from(e: decade::synth::SynthError) -> Self {
        match e {
            decade::synth::SynthError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

fn io_data(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}", e.message());
            return ExitCode::from(e.code());
        }
    };
    match run(cli.command, cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(CliError::Config)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(command: Command, cfg: RunConfig) -> Result<(), CliError> {
    match command {
        Command::Prepare => cmd_prepare(&cfg),
        Command::Train { which } => cmd_train(&cfg, which),
        Command::Adapt { which, .. } => cmd_adapt(&cfg, which),
        Command::Eval {
            mode,
            network,
            pose_checkpoint,
            dist_checkpoint,
        } => cmd_eval(&cfg, mode, network, pose_checkpoint, dist_checkpoint),
        Command::Predict {
            pose_checkpoint,
            dist_checkpoint,
        } => cmd_predict(&cfg, pose_checkpoint, dist_checkpoint),
        Command::Complexity => {
            cmd_complexity();
            Ok(())
        }
        Command::Bench { checkpoint, n } => cmd_bench(&checkpoint, n),
        Command::Synth { n, jitter } => cmd_synth(&cfg, n, jitter),
        Command::Gradcheck => cmd_gradcheck(),
    }
}

// ---------------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------------

fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
    let p = path
        .clone()
        .ok_or_else(|| CliError::Config(format!("missing required config key {key:?}")))?;
    if !p.exists() {
        return Err(CliError::Config(format!(
            "{key} path {} does not exist",
            p.display()
        )));
    }
    Ok(p)
}

fn priors_for(cfg: &RunConfig) -> Result<ClassPriors, CliError> {
    match &cfg.priors {
        Some(path) => Ok(ClassPriors::load_overrides(path)?),
        None => Ok(ClassPriors::default()),
    }
}

/// Labels for every id in the split, preprocessed; missing files name the
/// offending id.
fn load_split_labels(
    labels_dir: &Path,
    split: &[String],
    cfg: &RunConfig,
) -> Result<BTreeMap<String, Vec<LabelRecord>>, CliError> {
    let mut out = BTreeMap::new();
    for id in split {
        let path = labels_dir.join(format!("{id}.txt"));
        if !path.exists() {
            return Err(CliError::Data(format!(
                "split references image id {id:?} but {} does not exist",
                path.display()
            )));
        }
        let records = kitti::load_label_file(&path, cfg.distance_mode)?;
        out.insert(id.clone(), kitti::preprocess(records));
    }
    Ok(out)
}

fn load_image_checked(
    images_dir: &Path,
    id: &str,
) -> Result<(Tensor<f32>, ImageMeta), CliError> {
    let path = images_dir.join(format!("{id}.png"));
    if !path.exists() {
        return Err(CliError::Data(format!(
            "image id {id:?}: {} does not exist",
            path.display()
        )));
    }
    Ok(kitti::load_image(&path, id)?)
}

fn checkpoints_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("checkpoints")
}

fn prepared_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("prepared")
}

fn save_outcome(
    cfg: &RunConfig,
    name: &str,
    final_net: &Network<f32>,
    outcome: &TrainOutcome,
    epochs: usize,
) -> Result<(), CliError> {
    let dir = checkpoints_dir(cfg);
    fs::create_dir_all(&dir).map_err(|e| io_data(&dir, e))?;
    let meta = CheckpointMeta {
        seed: cfg.seed,
        epochs: epochs as u32,
    };
    save_checkpoint(final_net, &meta, &dir.join(format!("{name}_final.ckpt")))?;
    save_checkpoint(&outcome.best, &meta, &dir.join(format!("{name}_best.ckpt")))?;
    let hist = cfg.out_dir.join(format!("{name}_history.csv"));
    fs::write(&hist, outcome.history.to_csv()).map_err(|e| io_data(&hist, e))?;
    println!(
        "{name}: trained {epochs} epochs; best holdout MAE at epoch {:?}; wrote {}",
        outcome.best_epoch,
        dir.join(format!("{name}_best.ckpt")).display()
    );
    Ok(())
}

fn load_net(path: &Path, what: &str) -> Result<Network<f32>, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!(
            "{what} checkpoint {} does not exist (run the prerequisite command first)",
            path.display()
        )));
    }
    Ok(load_checkpoint(path)?.0)
}

fn pose_degrees_for_crop(net: &Network<f32>, crop: &Tensor<f32>) -> f64 {
    let input = crop
        .clone()
        .reshaped(vec![1, 3, 32, 32])
        .expect("crop is 3x32x32");
    let out = net.predict(&input).expect("pose forward");
    pose_output_to_degrees(out.values()[0])
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

fn cmd_prepare(cfg: &RunConfig) -> Result<(), CliError> {
    let labels_dir = require(&cfg.labels_dir, "labels_dir")?;
    let images_dir = require(&cfg.images_dir, "images_dir")?;
    let train_split = require(&cfg.train_split, "train_split")?;
    let test_split = require(&cfg.test_split, "test_split")?;
    let priors = priors_for(cfg)?;

    let dir = prepared_dir(cfg);
    for (split_name, split_path) in [("train", &train_split), ("test", &test_split)] {
        let ids = load_split(split_path)?;
        if ids.is_empty() {
            return Err(CliError::Config(format!(
                "split file {} is empty",
                split_path.display()
            )));
        }
        let labels = load_split_labels(&labels_dir, &ids, cfg)?;
        let mut pose: Vec<(Tensor<f32>, f64)> = Vec::new();
        let mut dist: Vec<(Vec<f64>, f64)> = Vec::new();
        let mut disnet: Vec<(Vec<f64>, f64)> = Vec::new();
        for id in &ids {
            let records = &labels[id];
            if records.is_empty() {
                continue;
            }
            let (image, meta) = load_image_checked(&images_dir, id)?;
            for rec in records {
                let crop = extract_crop(&image, &rec.box2d)?;
                let theta = effective_orientation(rec.alpha);
                pose.push((crop, theta));
                let f = build_decade_features(&rec.box2d, rec.class_name, theta, &meta)?;
                dist.push((f.values, rec.distance));
                let f = build_disnet_features(&rec.box2d, rec.class_name, &meta, &priors)?;
                disnet.push((f.values, rec.distance));
            }
        }
        fs::create_dir_all(&dir).map_err(|e| io_data(&dir, e))?;
        dataio::write_pose_bin(&dir.join(format!("pose_{split_name}.bin")), &pose)?;
        dataio::write_feature_csv(&dir.join(format!("dist_{split_name}.csv")), &dist, 14)?;
        dataio::write_feature_csv(&dir.join(format!("disnet_{split_name}.csv")), &disnet, 6)?;
        println!(
            "{split_name}: {} images, {} annotations -> pose/dist/disnet datasets in {}",
            ids.len(),
            pose.len(),
            dir.display()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn cmd_train(cfg: &RunConfig, which: TrainTarget) -> Result<(), CliError> {
    let dir = prepared_dir(cfg);
    let (name, def, data, epochs, lr): (&str, NetworkDef, Dataset, usize, f64) = match which {
        TrainTarget::Pose => (
            models::POSECNN,
            build_posecnn(),
            dataio::read_pose_bin(&dir.join("pose_train.bin"))?,
            cfg.epochs_pose,
            cfg.lr_pose,
        ),
        TrainTarget::Dist => (
            models::DISTMLP,
            build_distmlp(),
            dataio::read_feature_csv(&dir.join("dist_train.csv"))?,
            cfg.epochs_dist,
            cfg.lr_dist,
        ),
        TrainTarget::Disnet => (
            models::DISNET,
            build_disnet(),
            dataio::read_feature_csv(&dir.join("disnet_train.csv"))?,
            cfg.epochs_dist,
            cfg.lr_dist,
        ),
    };
    let mut net = def.instantiate(cfg.seed);
    let tc = TrainConfig {
        epochs,
        batch_size: cfg.batch_size,
        learning_rate: lr,
        seed: derive_seed(cfg.seed, &format!("train/{name}")),
        holdout_fraction: 0.1,
    };
    let outcome = train(&mut net, &data, &tc)?;
    save_outcome(cfg, name, &net, &outcome, epochs)
}

// ---------------------------------------------------------------------------
// adapt
// ---------------------------------------------------------------------------

#[allow(clippy::type_complexity)]
fn adaptation_inputs(
    cfg: &RunConfig,
) -> Result<
    (
        BTreeMap<String, Vec<DetectionRecord>>,
        BTreeMap<String, Vec<LabelRecord>>,
        PathBuf,
    ),
    CliError,
> {
    let labels_dir = require(&cfg.labels_dir, "labels_dir")?;
    let images_dir = require(&cfg.images_dir, "images_dir")?;
    let train_split = require(&cfg.train_split, "train_split")?;
    let detections_path = require(&cfg.detections, "detections")?;
    let ids = load_split(&train_split)?;
    let truths = load_split_labels(&labels_dir, &ids, cfg)?;
    let mut dets: BTreeMap<String, Vec<DetectionRecord>> = BTreeMap::new();
    for det in load_detections(&detections_path)? {
        dets.entry(det.image_id.clone()).or_default().push(det);
    }
    dets.retain(|id, _| truths.contains_key(id));
    Ok((dets, truths, images_dir))
}

fn cmd_adapt(cfg: &RunConfig, which: AdaptTarget) -> Result<(), CliError> {
    let ckpt_dir = checkpoints_dir(cfg);
    let (dets, truths, images_dir) = adaptation_inputs(cfg)?;

    match which {
        AdaptTarget::Pose => {
            let mut net = load_net(&ckpt_dir.join("posecnn_best.ckpt"), "pose")?;
            let ds = build_adaptation_dataset(
                &dets,
                &truths,
                |id| {
                    load_image_checked(&images_dir, id)
                        .map_err(|e| MatchingError::Image(id.to_string(), e.message().to_string()))
                },
                cfg.iou_threshold,
                |_| 0.0,
            )?;
            if ds.pose.is_empty() {
                return Err(CliError::Data(
                    "no detections matched ground truth; nothing to adapt on".into(),
                ));
            }
            let mut data = Dataset::new(vec![3, 32, 32]);
            for (crop, target_deg) in &ds.pose {
                data.push(crop.values(), (*target_deg / 90.0) as f32);
            }
            let tc = TrainConfig {
                epochs: cfg.epochs_adapt,
                batch_size: cfg.batch_size,
                learning_rate: cfg.lr_pose,
                seed: derive_seed(cfg.seed, "adapt/posecnn"),
                holdout_fraction: 0.1,
            };
            let outcome = train(&mut net, &data, &tc)?;
            save_outcome(cfg, "posecnn_adapt", &net, &outcome, cfg.epochs_adapt)
        }
        AdaptTarget::Dist => {
            // the distance adaptation set is built from the *adapted* pose
            // network's predictions, so pose adaptation must run first
            let pose_path = ckpt_dir.join("posecnn_adapt_best.ckpt");
            if !pose_path.exists() {
                return Err(CliError::Config(format!(
                    "distance adaptation requires the adapted pose checkpoint {} — run `adapt pose` first",
                    pose_path.display()
                )));
            }
            let pose = load_net(&pose_path, "adapted pose")?;
            let mut net = load_net(&ckpt_dir.join("distmlp_best.ckpt"), "distance")?;
            let ds = build_adaptation_dataset(
                &dets,
                &truths,
                |id| {
                    load_image_checked(&images_dir, id)
                        .map_err(|e| MatchingError::Image(id.to_string(), e.message().to_string()))
                },
                cfg.iou_threshold,
                |crop| pose_degrees_for_crop(&pose, crop),
            )?;
            if ds.distance.is_empty() {
                return Err(CliError::Data(
                    "no detections matched ground truth; nothing to adapt on".into(),
                ));
            }
            let mut data = Dataset::new(vec![14]);
            for (features, target) in &ds.distance {
                let row: Vec<f32> = features.values.iter().map(|&v| v as f32).collect();
                data.push(&row, *target as f32);
            }
            let tc = TrainConfig {
                epochs: cfg.epochs_adapt,
                batch_size: cfg.batch_size,
                learning_rate: cfg.lr_dist,
                seed: derive_seed(cfg.seed, "adapt/distmlp"),
                holdout_fraction: 0.1,
            };
            let outcome = train(&mut net, &data, &tc)?;
            save_outcome(cfg, "distmlp_adapt", &net, &outcome, cfg.epochs_adapt)
        }
    }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalSample {
    crop: Tensor<f32>,
    box2d: BBox,
    class: decade::kitti::KittiClass,
    meta: ImageMeta,
    truth_distance: f64,
    truth_theta_deg: f64,
}

fn cmd_eval(
    cfg: &RunConfig,
    mode: EvalMode,
    network: DistanceNetwork,
    pose_checkpoint: Option<PathBuf>,
    dist_checkpoint: Option<PathBuf>,
) -> Result<(), CliError> {
    let labels_dir = require(&cfg.labels_dir, "labels_dir")?;
    let images_dir = require(&cfg.images_dir, "images_dir")?;
    let test_split = require(&cfg.test_split, "test_split")?;
    let priors = priors_for(cfg)?;
    let ckpt_dir = checkpoints_dir(cfg);

    let dist_path = dist_checkpoint.unwrap_or_else(|| {
        ckpt_dir.join(match network {
            DistanceNetwork::Distmlp => "distmlp_best.ckpt",
            DistanceNetwork::Disnet => "disnet_best.ckpt",
        })
    });
    let dist_net = load_net(&dist_path, "distance")?;
    let pose_net = match network {
        DistanceNetwork::Distmlp => Some(load_net(
            &pose_checkpoint.unwrap_or_else(|| ckpt_dir.join("posecnn_best.ckpt")),
            "pose",
        )?),
        DistanceNetwork::Disnet => None,
    };

    let ids = load_split(&test_split)?;
    let truths = load_split_labels(&labels_dir, &ids, cfg)?;

    // collect evaluation samples; in e2e mode crops/boxes come from matched
    // detections, in gt mode from the annotations themselves
    let mut samples: Vec<EvalSample> = Vec::new();
    match mode {
        EvalMode::Gt => {
            for id in &ids {
                let records = &truths[id];
                if records.is_empty() {
                    continue;
                }
                let (image, meta) = load_image_checked(&images_dir, id)?;
                for rec in records {
                    samples.push(EvalSample {
                        crop: extract_crop(&image, &rec.box2d)?,
                        box2d: rec.box2d,
                        class: rec.class_name,
                        meta: meta.clone(),
                        truth_distance: rec.distance,
                        truth_theta_deg: effective_orientation(rec.alpha),
                    });
                }
            }
        }
        EvalMode::E2e => {
            let detections_path = require(&cfg.detections, "detections")?;
            let mut dets: BTreeMap<String, Vec<DetectionRecord>> = BTreeMap::new();
            for det in load_detections(&detections_path)? {
                dets.entry(det.image_id.clone()).or_default().push(det);
            }
            for id in &ids {
                let Some(image_dets) = dets.get(id) else {
                    continue;
                };
                let pairs = match_detections(image_dets, &truths[id], cfg.iou_threshold)?;
                if pairs.is_empty() {
                    continue;
                }
                let (image, meta) = load_image_checked(&images_dir, id)?;
                for pair in pairs {
                    samples.push(EvalSample {
                        crop: extract_crop(&image, &pair.detection.box2d)?,
                        box2d: pair.detection.box2d,
                        class: pair.truth.class_name,
                        meta: meta.clone(),
                        truth_distance: pair.truth.distance,
                        truth_theta_deg: effective_orientation(pair.truth.alpha),
                    });
                }
            }
            if samples.is_empty() {
                return Err(CliError::Data(
                    "no detections matched ground truth at the IoU threshold; nothing to evaluate"
                        .into(),
                ));
            }
        }
    }
    if samples.is_empty() {
        return Err(CliError::Data("test split has no annotations".into()));
    }

    let mut pairs = Vec::with_capacity(samples.len());
    let mut pose_pairs = Vec::new();
    for s in &samples {
        let features = match network {
            DistanceNetwork::Distmlp => {
                let theta = pose_degrees_for_crop(pose_net.as_ref().unwrap(), &s.crop);
                pose_pairs.push((theta, s.truth_theta_deg));
                build_decade_features(&s.box2d, s.class, theta, &s.meta)?
            }
            DistanceNetwork::Disnet => {
                build_disnet_features(&s.box2d, s.class, &s.meta, &priors)?
            }
        };
        let row: Vec<f32> = features.values.iter().map(|&v| v as f32).collect();
        let input = Tensor::new(vec![1, row.len()], row).expect("feature row");
        let pred = f64::from(dist_net.predict(&input)?.values()[0]);
        pairs.push((pred, s.truth_distance, s.class));
    }

    let report = build_report(
        &pairs,
        if pose_pairs.is_empty() {
            None
        } else {
            Some(&pose_pairs)
        },
    )?;
    write_report(cfg, mode, network, &report)?;
    println!(
        "evaluated {} samples: MAE {:.3} m, MRE {:.2}%{}",
        report.overall.count,
        report.overall.mae_m.unwrap_or(f64::NAN),
        report.overall.mre_fraction.unwrap_or(f64::NAN) * 100.0,
        report
            .pose_mae_deg
            .map(|p| format!(", pose MAE {p:.2} deg"))
            .unwrap_or_default()
    );
    Ok(())
}

fn write_report(
    cfg: &RunConfig,
    mode: EvalMode,
    network: DistanceNetwork,
    report: &EvalReport,
) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| io_data(&cfg.out_dir, e))?;
    let mode_tag = match mode {
        EvalMode::Gt => "gt",
        EvalMode::E2e => "e2e",
    };
    let net_tag = match network {
        DistanceNetwork::Distmlp => "",
        DistanceNetwork::Disnet => "_disnet",
    };
    let base = cfg.out_dir.join(format!("report_{mode_tag}{net_tag}"));
    let json = base.with_extension("json");
    fs::write(&json, report.to_json()).map_err(|e| io_data(&json, e))?;
    let csv = base.with_extension("csv");
    fs::write(&csv, report.to_csv()).map_err(|e| io_data(&csv, e))?;
    println!("wrote {} and {}", json.display(), csv.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

fn cmd_predict(
    cfg: &RunConfig,
    pose_checkpoint: Option<PathBuf>,
    dist_checkpoint: Option<PathBuf>,
) -> Result<(), CliError> {
    let images_dir = require(&cfg.images_dir, "images_dir")?;
    let detections_path = require(&cfg.detections, "detections")?;
    let ckpt_dir = checkpoints_dir(cfg);
    let pose = load_net(
        &pose_checkpoint.unwrap_or_else(|| ckpt_dir.join("posecnn_best.ckpt")),
        "pose",
    )?;
    let dist = load_net(
        &dist_checkpoint.unwrap_or_else(|| ckpt_dir.join("distmlp_best.ckpt")),
        "distance",
    )?;
    let dets = load_detections(&detections_path)?;

    let mut out =
        String::from("image_id,class,confidence,left,top,right,bottom,theta_eff_deg,distance_m\n");
    let mut cache: Option<(String, Tensor<f32>, ImageMeta)> = None;
    for det in &dets {
        if cache.as_ref().map(|(id, _, _)| id.as_str()) != Some(det.image_id.as_str()) {
            let (image, meta) = load_image_checked(&images_dir, &det.image_id)?;
            cache = Some((det.image_id.clone(), image, meta));
        }
        let (_, image, meta) = cache.as_ref().unwrap();
        let crop = extract_crop(image, &det.box2d)?;
        let theta = pose_degrees_for_crop(&pose, &crop);
        let features = build_decade_features(&det.box2d, det.class_name, theta, meta)?;
        let row: Vec<f32> = features.values.iter().map(|&v| v as f32).collect();
        let input = Tensor::new(vec![1, 14], row).expect("feature row");
        let pred = f64::from(dist.predict(&input)?.values()[0]);
        out.push_str(&format!(
            "{},{},{:.4},{:.2},{:.2},{:.2},{:.2},{:.3},{:.3}\n",
            det.image_id,
            det.class_name.name(),
            det.confidence,
            det.box2d.left,
            det.box2d.top,
            det.box2d.right,
            det.box2d.bottom,
            theta,
            pred
        ));
    }
    fs::create_dir_all(&cfg.out_dir).map_err(|e| io_data(&cfg.out_dir, e))?;
    let path = cfg.out_dir.join("predictions.csv");
    fs::write(&path, out).map_err(|e| io_data(&path, e))?;
    println!("wrote {} predictions to {}", dets.len(), path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// complexity / bench
// ---------------------------------------------------------------------------

fn cmd_complexity() {
    println!("{:<10} {:>12} {:>14}", "network", "parameters", "flops(b=1)");
    for def in [build_posecnn(), build_distmlp(), build_disnet()] {
        println!(
            "{:<10} {:>12} {:>14}",
            def.name,
            def.count_params(),
            def.count_flops(1)
        );
    }
}

fn cmd_bench(checkpoint: &Path, n: usize) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Config("bench needs n >= 1".into()));
    }
    let net = load_net(checkpoint, "bench")?;
    let mut shape = vec![1];
    shape.extend_from_slice(&net.input_shape);
    let mut rng = rng_for(0, "bench/input");
    let input = Tensor::from_fn(&shape, |_| {
        use rand::Rng;
        rng.random_range(0.0..1.0f32)
    });
    for _ in 0..10 {
        let _ = net.predict(&input)?;
    }
    let start = Instant::now();
    for _ in 0..n {
        let _ = net.predict(&input)?;
    }
    let mean_ms = start.elapsed().as_secs_f64() * 1000.0 / n as f64;
    if n == 1 {
        eprintln!("warning: n=1 gives a single-run time; expect noise");
    }
    println!(
        "{}: mean inference {:.4} ms over {n} runs (10 warm-ups)",
        net.name, mean_ms
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn cmd_synth(cfg: &RunConfig, n: usize, jitter: Option<f64>) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Config("synth needs n >= 1".into()));
    }
    let synth_cfg = SynthConfig {
        focal_px: cfg.focal_px,
        image_width: cfg.image_width,
        image_height: cfg.image_height,
        min_distance_m: cfg.min_distance_m,
        max_distance_m: cfg.max_distance_m,
        priors: priors_for(cfg)?,
        jitter_std: jitter.unwrap_or(0.0),
        ..SynthConfig::default()
    };
    let samples = generate_samples(&synth_cfg, cfg.seed, n)?;

    let root = cfg.out_dir.join("synth");
    let labels_dir = root.join("labels");
    let images_dir = root.join("images");
    fs::create_dir_all(&labels_dir).map_err(|e| io_data(&labels_dir, e))?;
    fs::create_dir_all(&images_dir).map_err(|e| io_data(&images_dir, e))?;

    let mut train_ids = String::new();
    let mut test_ids = String::new();
    let split_at = (n as f64 * 0.9).ceil() as usize;
    for (i, s) in samples.iter().enumerate() {
        let label_path = labels_dir.join(format!("{}.txt", s.image_id));
        fs::write(&label_path, format!("{}\n", s.label.to_line()))
            .map_err(|e| io_data(&label_path, e))?;
        let mut image = Tensor::zeros(&[
            3,
            synth_cfg.image_height as usize,
            synth_cfg.image_width as usize,
        ]);
        render_bar_into_image(
            &mut image,
            &s.label.box2d,
            effective_orientation(s.label.alpha),
            derive_seed(cfg.seed, &format!("synth/image/{}", s.image_id)),
        );
        kitti::save_image(&image, &images_dir.join(format!("{}.png", s.image_id)))?;
        if i < split_at {
            train_ids.push_str(&s.image_id);
            train_ids.push('\n');
        } else {
            test_ids.push_str(&s.image_id);
            test_ids.push('\n');
        }
    }
    fs::write(root.join("train.txt"), train_ids).map_err(|e| io_data(&root, e))?;
    fs::write(root.join("test.txt"), test_ids).map_err(|e| io_data(&root, e))?;
    if let Some(std) = jitter {
        let dets = perturb_detections(&samples, std, derive_seed(cfg.seed, "synth/detections"));
        let path = root.join("detections.csv");
        fs::write(&path, kitti::detections_to_csv(&dets)).map_err(|e| io_data(&path, e))?;
    }
    println!(
        "wrote {n} synthetic samples under {} ({} train / {} test)",
        root.display(),
        split_at,
        n - split_at
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

fn cmd_gradcheck() -> Result<(), CliError> {
    let stacks: Vec<(&str, Vec<usize>, Vec<LayerSpec>)> = vec![
        (
            "dense-relu-dense",
            vec![6],
            vec![
                LayerSpec::Dense { input: 6, output: 8 },
                LayerSpec::Relu,
                LayerSpec::Dense { input: 8, output: 2 },
            ],
        ),
        (
            "conv-pool-relu-dense",
            vec![2, 8, 8],
            vec![
                LayerSpec::Conv2d {
                    in_channels: 2,
                    out_channels: 3,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { window: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { input: 48, output: 1 },
            ],
        ),
    ];
    let mut worst = 0.0f64;
    for (name, input_shape, specs) in &stacks {
        for seed in 0..5u64 {
            let mut rng = rng_for(seed, &format!("gradcheck/{name}"));
            let mut net = Network::<f64>::init(name, input_shape, specs, &mut rng)
                .map_err(|e| CliError::Numeric(e.to_string()))?;
            let mut shape = vec![2];
            shape.extend_from_slice(input_shape);
            let input = {
                use rand::Rng;
                Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0))
            };
            let out = net.forward(&input)?;
            let target = {
                use rand::Rng;
                Tensor::from_fn(out.shape(), |_| rng.random_range(-1.0..1.0))
            };
            let err = gradient_check(&mut net, &input, &target, 1e-5)?;
            worst = worst.max(err);
            println!("{name} seed {seed}: max relative error {err:.3e}");
        }
    }
    if worst >= 1e-4 {
        return Err(CliError::Numeric(format!(
            "gradient check failed: worst relative error {worst:.3e} >= 1e-4"
        )));
    }
    println!("all gradient checks passed (worst {worst:.3e})");
    Ok(())
}
