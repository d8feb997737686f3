//! Synthetic pinhole-camera scene generator with exact ground truth.
//!
//! Each sample is one object: a class with fixed real-world size, a distance
//! Z and an orientation theta. Box height follows h_px = focal * H_real / Z
//! (orientation-independent); box width projects the rotated footprint
//! W_real*|cos theta| + L_real*|sin theta|, so width carries orientation
//! information while height does not. Crops are rendered as a rotated bright
//! bar whose in-plane angle equals the effective orientation, giving the
//! pose network a learnable visual cue with known ground truth.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::features::{effective_orientation, ClassPriors};
use crate::kitti::{BBox, DetectionRecord, KittiClass, LabelRecord, CROP_SIZE, TRAIN_CLASSES};
use crate::seed::rng_for;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("could not place a {class} sample inside the image after {attempts} attempts")]
    PlacementFailed { class: String, attempts: usize },
    #[error("effective orientation {0} outside [0, 90] degrees")]
    AngleOutOfRange(f64),
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub focal_px: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub min_distance_m: f64,
    pub max_distance_m: f64,
    pub classes: Vec<KittiClass>,
    pub priors: ClassPriors,
    /// Box-edge jitter std as a fraction of box size, for the detector
    /// noise model.
    pub jitter_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            focal_px: 700.0,
            image_width: 1242,
            image_height: 375,
            min_distance_m: 4.0,
            max_distance_m: 150.0,
            classes: TRAIN_CLASSES.to_vec(),
            priors: ClassPriors::default(),
            jitter_std: 0.0,
        }
    }
}

/// One generated object: its annotation (distance known exactly) and the
/// rendered 3x32x32 crop.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub image_id: String,
    pub label: LabelRecord,
    pub crop: Tensor<f32>,
}

const MAX_PLACEMENT_ATTEMPTS: usize = 100;

/// Deterministic given (config, seed, n).
pub fn generate_samples(
    config: &SynthConfig,
    seed: u64,
    n: usize,
) -> Result<Vec<SynthSample>, SynthError> {
    if config.focal_px <= 0.0 || config.jitter_std < 0.0 {
        return Err(SynthError::Config(
            "focal_px must be positive and jitter_std non-negative".into(),
        ));
    }
    let mut rng = rng_for(seed, "synth/samples");
    let img_w = f64::from(config.image_width);
    let img_h = f64::from(config.image_height);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut placed = None;
        let mut class = config.classes[0];
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            class = config.classes[rng.random_range(0..config.classes.len())];
            let (real_h, real_w, real_l) = config
                .priors
                .get(class)
                .ok_or_else(|| SynthError::Config(format!("no prior for class {class}")))?;
            let z = rng.random_range(config.min_distance_m..config.max_distance_m);
            let theta = rng.random_range(-PI..PI);
            let h_px = config.focal_px * real_h / z;
            let w_px = config.focal_px * (real_w * theta.cos().abs() + real_l * theta.sin().abs()) / z;
            if h_px > img_h || w_px > img_w || h_px < 1.0 || w_px < 1.0 {
                continue;
            }
            let cx = rng.random_range(w_px / 2.0..img_w - w_px / 2.0);
            let cy = rng.random_range(h_px / 2.0..img_h - h_px / 2.0);
            placed = Some((z, theta, h_px, w_px, cx, cy, (real_h, real_w, real_l)));
            break;
        }
        let Some((z, theta, h_px, w_px, cx, cy, dims)) = placed else {
            return Err(SynthError::PlacementFailed {
                class: class.to_string(),
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        };
        let theta_eff = effective_orientation(theta);
        let crop_seed = rng.random::<u64>();
        out.push(SynthSample {
            image_id: format!("{i:06}"),
            label: LabelRecord {
                class_name: class,
                truncated: 0.0,
                occluded: 0,
                alpha: theta,
                box2d: BBox::new(cx - w_px / 2.0, cy - h_px / 2.0, cx + w_px / 2.0, cy + h_px / 2.0),
                dims3d: dims,
                location: (0.0, 0.0, z),
                rotation_y: theta,
                distance: z,
            },
            crop: render_crop(theta_eff, crop_seed)?,
        });
    }
    Ok(out)
}

/// Bar intensity at normalized crop coordinates (u, v) in [0, 1], for a bar
/// rotated by `theta_eff` degrees from horizontal.
fn bar_value(u: f64, v: f64, theta_eff_deg: f64) -> f64 {
    const HALF_LEN: f64 = 0.38;
    const HALF_WIDTH: f64 = 0.08;
    const EDGE: f64 = 0.04;
    let t = theta_eff_deg.to_radians();
    let (px, py) = (u - 0.5, v - 0.5);
    let along = px * t.cos() + py * t.sin();
    let perp = -px * t.sin() + py * t.cos();
    let a = ((HALF_LEN - along.abs()) / EDGE).clamp(0.0, 1.0);
    let b = ((HALF_WIDTH - perp.abs()) / EDGE).clamp(0.0, 1.0);
    0.9 * a * b
}

/// Renders the 3x32x32 bar crop for one effective orientation, with seeded
/// Gaussian pixel noise (std 0.02) clamped to [0, 1].
pub fn render_crop(theta_eff_deg: f64, seed: u64) -> Result<Tensor<f32>, SynthError> {
    if !(0.0..=90.0).contains(&theta_eff_deg) {
        return Err(SynthError::AngleOutOfRange(theta_eff_deg));
    }
    let mut rng = rng_for(seed, "synth/crop-noise");
    let noise = Normal::new(0.0f64, 0.02).expect("valid std");
    let mut crop = Tensor::zeros(&[3, CROP_SIZE, CROP_SIZE]);
    let vals = crop.values_mut();
    let plane = CROP_SIZE * CROP_SIZE;
    for y in 0..CROP_SIZE {
        for x in 0..CROP_SIZE {
            let u = (x as f64 + 0.5) / CROP_SIZE as f64;
            let v = (y as f64 + 0.5) / CROP_SIZE as f64;
            let base = bar_value(u, v, theta_eff_deg);
            for c in 0..3 {
                let val = (base + noise.sample(&mut rng)).clamp(0.0, 1.0);
                vals[c * plane + y * CROP_SIZE + x] = val as f32;
            }
        }
    }
    Ok(crop)
}

/// Draws the same bar into an arbitrary box of a full image tensor, so the
/// file-based pipeline (label files + pictures + crop extraction)
/// approximately reproduces [`render_crop`].
pub fn render_bar_into_image(
    image: &mut Tensor<f32>,
    box2d: &BBox,
    theta_eff_deg: f64,
    seed: u64,
) {
    let shape = image.shape().to_vec();
    let (h, w) = (shape[1], shape[2]);
    let plane = h * w;
    let mut rng = rng_for(seed, "synth/image-noise");
    let noise = Normal::new(0.0f64, 0.02).expect("valid std");
    let x0 = box2d.left.max(0.0) as usize;
    let x1 = (box2d.right.min(w as f64) as usize).min(w);
    let y0 = box2d.top.max(0.0) as usize;
    let y1 = (box2d.bottom.min(h as f64) as usize).min(h);
    let vals = image.values_mut();
    for y in y0..y1 {
        for x in x0..x1 {
            let u = (x as f64 + 0.5 - box2d.left) / box2d.width();
            let v = (y as f64 + 0.5 - box2d.top) / box2d.height();
            let base = bar_value(u, v, theta_eff_deg);
            let val = ((base + noise.sample(&mut rng)).clamp(0.0, 1.0)) as f32;
            for c in 0..3 {
                vals[c * plane + y * w + x] = val;
            }
        }
    }
}

/// Jitters each annotation box like an imperfect detector: edges displaced
/// by Gaussian noise scaled by box size, confidence uniform in [0.5, 1].
/// Degenerate results are redrawn, so outputs always have positive area.
pub fn perturb_detections(
    samples: &[SynthSample],
    jitter_std: f64,
    seed: u64,
) -> Vec<DetectionRecord> {
    let mut rng = rng_for(seed, "synth/jitter");
    samples
        .iter()
        .map(|s| {
            let b = &s.label.box2d;
            let box2d = loop {
                let (w, h) = (b.width(), b.height());
                let jit = |rng: &mut rand_chacha::ChaCha12Rng, scale: f64| {
                    if jitter_std == 0.0 {
                        0.0
                    } else {
                        Normal::new(0.0, jitter_std * scale).expect("valid std").sample(rng)
                    }
                };
                let candidate = BBox::new(
                    b.left + jit(&mut rng, w),
                    b.top + jit(&mut rng, h),
                    b.right + jit(&mut rng, w),
                    b.bottom + jit(&mut rng, h),
                );
                if candidate.is_valid() {
                    break candidate;
                }
            };
            DetectionRecord {
                image_id: s.image_id.clone(),
                class_name: s.label.class_name,
                confidence: rng.random_range(0.5..1.0),
                box2d,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::iou;

    #[test]
    fn pinhole_proportionality() {
        let cfg = SynthConfig::default();
        // h_px at Z and 2Z: doubling distance halves pixel height
        let h1 = cfg.focal_px * 1.5 / 20.0;
        let h2 = cfg.focal_px * 1.5 / 40.0;
        assert_eq!(h1, 2.0 * h2);
    }

    #[test]
    fn generator_deterministic_and_well_formed() {
        let cfg = SynthConfig::default();
        let a = generate_samples(&cfg, 11, 50).unwrap();
        let b = generate_samples(&cfg, 11, 50).unwrap();
        assert_eq!(a.len(), 50);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.label, y.label);
            assert_eq!(x.crop.values(), y.crop.values());
        }
        for s in &a {
            assert!(s.label.box2d.is_valid());
            assert!(s.label.distance >= cfg.min_distance_m);
            assert!(s.label.distance <= cfg.max_distance_m);
            assert!(s.label.box2d.left >= 0.0 && s.label.box2d.right <= 1242.0);
        }
    }

    #[test]
    fn generator_is_self_inverting() {
        // Z recoverable from box height: Z = focal * H_real / h_px
        let cfg = SynthConfig::default();
        for s in generate_samples(&cfg, 3, 200).unwrap() {
            let (real_h, _, _) = cfg.priors.get(s.label.class_name).unwrap();
            let recovered = cfg.focal_px * real_h / s.label.box2d.height();
            assert!(
                (recovered - s.label.distance).abs() < 1e-6,
                "recovered {recovered} vs {}",
                s.label.distance
            );
        }
    }

    #[test]
    fn theta_zero_removes_length_contribution() {
        // at theta=0 the projected width uses only W_real
        let cfg = SynthConfig::default();
        let (_, real_w, real_l) = cfg.priors.get(KittiClass::Car).unwrap();
        let z = 30.0;
        let w0 = cfg.focal_px * (real_w * 1.0 + real_l * 0.0) / z;
        assert_eq!(w0, cfg.focal_px * real_w / z);
    }

    #[test]
    fn height_sorted_descending_means_distance_ascending() {
        let cfg = SynthConfig {
            classes: vec![KittiClass::Car],
            ..SynthConfig::default()
        };
        let mut samples = generate_samples(&cfg, 5, 300).unwrap();
        samples.sort_by(|a, b| {
            b.label
                .box2d
                .height()
                .partial_cmp(&a.label.box2d.height())
                .unwrap()
        });
        for pair in samples.windows(2) {
            assert!(pair[0].label.distance <= pair[1].label.distance + 1e-9);
        }
    }

    #[test]
    fn render_symmetries() {
        let horiz = render_crop(0.0, 1).unwrap();
        // row symmetry about the center (compare the noiseless structure by
        // averaging channels and allowing noise-level slack)
        let plane = CROP_SIZE * CROP_SIZE;
        let at = |t: &Tensor<f32>, y: usize, x: usize| {
            (0..3).map(|c| t.values()[c * plane + y * CROP_SIZE + x]).sum::<f32>() / 3.0
        };
        for y in 0..CROP_SIZE {
            for x in 0..CROP_SIZE {
                let d = (at(&horiz, y, x) - at(&horiz, CROP_SIZE - 1 - y, x)).abs();
                assert!(d < 0.15, "row symmetry broken at ({y},{x}): {d}");
            }
        }
        let vert = render_crop(90.0, 2).unwrap();
        for y in 0..CROP_SIZE {
            for x in 0..CROP_SIZE {
                let d = (at(&vert, y, x) - at(&horiz, x, y)).abs();
                assert!(d < 0.15, "transpose symmetry broken at ({y},{x}): {d}");
            }
        }
    }

    #[test]
    fn distinct_angles_render_distinct_crops() {
        let a = render_crop(30.0, 3).unwrap();
        let b = render_crop(60.0, 3).unwrap();
        let differing = a
            .values()
            .iter()
            .zip(b.values())
            .filter(|(x, y)| (**x - **y).abs() > 0.1)
            .count();
        assert!(
            differing as f64 > 0.10 * a.len() as f64,
            "only {differing} of {} pixels differ",
            a.len()
        );
    }

    #[test]
    fn render_rejects_out_of_range() {
        assert!(matches!(
            render_crop(90.1, 0),
            Err(SynthError::AngleOutOfRange(_))
        ));
    }

    #[test]
    fn zero_jitter_keeps_boxes() {
        let cfg = SynthConfig::default();
        let samples = generate_samples(&cfg, 7, 20).unwrap();
        let dets = perturb_detections(&samples, 0.0, 1);
        for (s, d) in samples.iter().zip(&dets) {
            assert_eq!(s.label.box2d, d.box2d);
            assert!((0.5..1.0).contains(&d.confidence));
        }
    }

    #[test]
    fn five_percent_jitter_mostly_stays_above_matching_threshold() {
        let cfg = SynthConfig::default();
        let samples = generate_samples(&cfg, 13, 1000).unwrap();
        let dets = perturb_detections(&samples, 0.05, 2);
        let mut total = 0.0;
        for (s, d) in samples.iter().zip(&dets) {
            assert!(d.box2d.is_valid());
            total += iou(&s.label.box2d, &d.box2d).unwrap();
        }
        let mean = total / samples.len() as f64;
        assert!(mean > 0.6, "mean IoU {mean}");
    }
}
