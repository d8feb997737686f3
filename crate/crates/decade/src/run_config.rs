//! Line-based `key = value` run configuration, overridable by CLI flags.

use std::path::{Path, PathBuf};

use decade::kitti::DistanceMode;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub labels_dir: Option<PathBuf>,
    pub images_dir: Option<PathBuf>,
    pub train_split: Option<PathBuf>,
    pub test_split: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub priors: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub distance_mode: DistanceMode,
    pub iou_threshold: f64,
    pub epochs_pose: usize,
    pub epochs_dist: usize,
    pub epochs_adapt: usize,
    pub batch_size: usize,
    pub lr_pose: f64,
    pub lr_dist: f64,
    // synthetic generator
    pub focal_px: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub min_distance_m: f64,
    pub max_distance_m: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            labels_dir: None,
            images_dir: None,
            train_split: None,
            test_split: None,
            detections: None,
            priors: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            distance_mode: DistanceMode::ZAxis,
            iou_threshold: 0.6,
            epochs_pose: 250,
            epochs_dist: 250,
            epochs_adapt: 100,
            batch_size: 64,
            lr_pose: 0.001,
            lr_dist: 0.0001,
            focal_px: 700.0,
            image_width: 1242,
            image_height: 375,
            min_distance_m: 4.0,
            max_distance_m: 150.0,
        }
    }
}

impl RunConfig {
    /// Parses a config file. Lines are `key = value`; `#` starts a comment.
    /// Unknown keys are an error.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!("config line {}: expected key = value", i + 1));
            };
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| format!("config line {}: bad {what} value {value:?}", i + 1);
            match key {
                "labels_dir" => cfg.labels_dir = Some(PathBuf::from(value)),
                "images_dir" => cfg.images_dir = Some(PathBuf::from(value)),
                "train_split" => cfg.train_split = Some(PathBuf::from(value)),
                "test_split" => cfg.test_split = Some(PathBuf::from(value)),
                "detections" => cfg.detections = Some(PathBuf::from(value)),
                "priors" => cfg.priors = Some(PathBuf::from(value)),
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                "distance_mode" => {
                    cfg.distance_mode = match value {
                        "z_axis" => DistanceMode::ZAxis,
                        "euclidean" => DistanceMode::Euclidean,
                        _ => return Err(bad("distance_mode")),
                    }
                }
                "iou_threshold" => cfg.iou_threshold = value.parse().map_err(|_| bad(key))?,
                "epochs_pose" => cfg.epochs_pose = value.parse().map_err(|_| bad(key))?,
                "epochs_dist" => cfg.epochs_dist = value.parse().map_err(|_| bad(key))?,
                "epochs_adapt" => cfg.epochs_adapt = value.parse().map_err(|_| bad(key))?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad(key))?,
                "lr_pose" => cfg.lr_pose = value.parse().map_err(|_| bad(key))?,
                "lr_dist" => cfg.lr_dist = value.parse().map_err(|_| bad(key))?,
                "focal_px" => cfg.focal_px = value.parse().map_err(|_| bad(key))?,
                "image_width" => cfg.image_width = value.parse().map_err(|_| bad(key))?,
                "image_height" => cfg.image_height = value.parse().map_err(|_| bad(key))?,
                "min_distance_m" => cfg.min_distance_m = value.parse().map_err(|_| bad(key))?,
                "max_distance_m" => cfg.max_distance_m = value.parse().map_err(|_| bad(key))?,
                _ => return Err(format!("config line {}: unknown key {key:?}", i + 1)),
            }
        }
        Ok(cfg)
    }
}
