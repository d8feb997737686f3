//! Feature vectors for the distance networks.
//!
//! The main layout packs an 8-way class one-hot with normalized box width,
//! height, diagonal, center, and the effective allocentric orientation
//! (14 entries). The DisNet baseline layout uses inverse dimensional
//! features plus per-class real-world size priors (6 entries).

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::kitti::{BBox, ImageMeta, KittiClass};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("class {0} cannot be encoded (no one-hot slot)")]
    UnknownClass(KittiClass),
    #[error("degenerate box: width {width}, height {height}")]
    DegenerateBox { width: f64, height: f64 },
    #[error("priors row {row}: {message}")]
    BadPriors { row: usize, message: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureLayout {
    DecadeV1,
    DisnetV1,
}

impl FeatureLayout {
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        match self {
            FeatureLayout::DecadeV1 => 14,
            FeatureLayout::DisnetV1 => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: FeatureLayout,
}

/// Folds an allocentric angle (radians) onto the effective range [0, 90]
/// degrees: orientations with the same visible projected width map to one
/// value.
pub fn effective_orientation(alpha: f64) -> f64 {
    let mut a = (alpha.to_degrees()).abs() % 360.0;
    if a > 180.0 {
        a = 360.0 - a;
    }
    a.min(180.0 - a)
}

/// Builds the 14-entry feature vector:
/// one-hot class (8) | w/W | h/H | diag ratio | cx/W | cy/H | theta_eff/90.
pub fn build_decade_features(
    box2d: &BBox,
    class_name: KittiClass,
    theta_eff_deg: f64,
    meta: &ImageMeta,
) -> Result<FeatureVector, FeatureError> {
    let slot = class_name
        .one_hot_index()
        .ok_or(FeatureError::UnknownClass(class_name))?;
    let img_w = f64::from(meta.width_px);
    let img_h = f64::from(meta.height_px);
    let mut values = vec![0.0; 14];
    values[slot] = 1.0;
    let (cx, cy) = box2d.center();
    values[8] = box2d.width() / img_w;
    values[9] = box2d.height() / img_h;
    values[10] = box2d.diagonal() / img_w.hypot(img_h);
    values[11] = cx / img_w;
    values[12] = cy / img_h;
    values[13] = theta_eff_deg / 90.0;
    Ok(FeatureVector {
        values,
        layout: FeatureLayout::DecadeV1,
    })
}

/// Per-class real-world (height, width, length) in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPriors {
    table: HashMap<KittiClass, (f64, f64, f64)>,
}

impl Default for ClassPriors {
    fn default() -> Self {
        let mut table = HashMap::new();
        table.insert(KittiClass::Car, (1.5, 1.8, 4.0));
        table.insert(KittiClass::Van, (2.0, 1.9, 5.0));
        table.insert(KittiClass::Truck, (3.0, 2.6, 10.0));
        table.insert(KittiClass::Pedestrian, (1.75, 0.6, 0.6));
        table.insert(KittiClass::PersonSitting, (1.2, 0.6, 0.6));
        table.insert(KittiClass::Cyclist, (1.75, 0.6, 1.8));
        table.insert(KittiClass::Tram, (3.5, 2.5, 15.0));
        table.insert(KittiClass::Misc, (1.5, 1.5, 3.0));
        Self { table }
    }
}

impl ClassPriors {
    pub fn get(&self, class_name: KittiClass) -> Option<(f64, f64, f64)> {
        self.table.get(&class_name).copied()
    }

    /// Overrides entries from a CSV `class,height_m,width_m,length_m`
    /// (header required; unlisted classes keep their defaults).
    pub fn load_overrides(path: &Path) -> Result<Self, FeatureError> {
        let text = std::fs::read_to_string(path).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut priors = Self::default();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let row = i;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(FeatureError::BadPriors {
                    row,
                    message: format!("expected 4 fields, got {}", fields.len()),
                });
            }
            let class_name = KittiClass::parse(fields[0]).ok_or_else(|| FeatureError::BadPriors {
                row,
                message: format!("unknown class {:?}", fields[0]),
            })?;
            let mut dims = [0.0f64; 3];
            for (j, d) in dims.iter_mut().enumerate() {
                *d = fields[j + 1].parse().map_err(|_| FeatureError::BadPriors {
                    row,
                    message: format!("unparseable number {:?}", fields[j + 1]),
                })?;
                if *d <= 0.0 {
                    return Err(FeatureError::BadPriors {
                        row,
                        message: format!("prior must be strictly positive, got {d}"),
                    });
                }
            }
            priors.table.insert(class_name, (dims[0], dims[1], dims[2]));
        }
        Ok(priors)
    }
}

/// Builds the 6-entry DisNet-style baseline vector:
/// H/h | W/w | DIAG/diag | prior height | prior width | prior length.
pub fn build_disnet_features(
    box2d: &BBox,
    class_name: KittiClass,
    meta: &ImageMeta,
    priors: &ClassPriors,
) -> Result<FeatureVector, FeatureError> {
    let (w, h) = (box2d.width(), box2d.height());
    if w <= 0.0 || h <= 0.0 {
        return Err(FeatureError::DegenerateBox { width: w, height: h });
    }
    let (ph, pw, pl) = priors
        .get(class_name)
        .ok_or(FeatureError::UnknownClass(class_name))?;
    let img_w = f64::from(meta.width_px);
    let img_h = f64::from(meta.height_px);
    Ok(FeatureVector {
        values: vec![
            img_h / h,
            img_w / w,
            img_w.hypot(img_h) / box2d.diagonal(),
            ph,
            pw,
            pl,
        ],
        layout: FeatureLayout::DisnetV1,
    })
}
