//! IoU, greedy detection-to-truth matching, and adaptation dataset
//! construction.
//!
//! Matching is one-to-one: detections sorted by descending confidence each
//! claim their highest-IoU unmatched truth at or above the threshold; ties
//! keep file order. Class agreement is not required but is recorded per
//! pair.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::features::{build_decade_features, effective_orientation, FeatureVector};
use crate::kitti::{extract_crop, BBox, DetectionRecord, ImageMeta, LabelRecord};
use crate::tensor::Tensor;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.6;

#[derive(Debug, Error)]
pub enum MatchingError {
    #[error("zero-area box {0:?}")]
    DegenerateBox(BBox),
    #[error("image {0}: {1}")]
    Image(String, String),
    #[error("feature construction failed: {0}")]
    Feature(#[from] crate::features::FeatureError),
}

/// Intersection area / union area, 0 when disjoint.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64, MatchingError> {
    if !a.is_valid() {
        return Err(MatchingError::DegenerateBox(*a));
    }
    if !b.is_valid() {
        return Err(MatchingError::DegenerateBox(*b));
    }
    let iw = (a.right.min(b.right) - a.left.max(b.left)).max(0.0);
    let ih = (a.bottom.min(b.bottom) - a.top.max(b.top)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    Ok(inter / union)
}

/// One matched detection/truth pair.
#[derive(Debug, Clone)]
pub struct MatchedPair {
    pub detection: DetectionRecord,
    pub truth: LabelRecord,
    pub iou: f64,
    pub class_agrees: bool,
}

/// Greedy one-to-one matching for a single image's records.
pub fn match_detections(
    dets: &[DetectionRecord],
    truths: &[LabelRecord],
    threshold: f64,
) -> Result<Vec<MatchedPair>, MatchingError> {
    // stable sort keeps file order on confidence ties
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .partial_cmp(&dets[a].confidence)
            .expect("confidences are finite")
    });
    let mut truth_taken = vec![false; truths.len()];
    let mut pairs: Vec<(usize, MatchedPair)> = Vec::new();
    for di in order {
        let det = &dets[di];
        let mut best: Option<(usize, f64)> = None;
        for (ti, truth) in truths.iter().enumerate() {
            if truth_taken[ti] {
                continue;
            }
            let overlap = iou(&det.box2d, &truth.box2d)?;
            if overlap >= threshold && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((ti, overlap));
            }
        }
        if let Some((ti, overlap)) = best {
            truth_taken[ti] = true;
            pairs.push((
                di,
                MatchedPair {
                    detection: det.clone(),
                    truth: truths[ti].clone(),
                    iou: overlap,
                    class_agrees: det.class_name == truths[ti].class_name,
                },
            ));
        }
    }
    // emit in detection file order so downstream aggregation is independent
    // of confidence ordering
    pairs.sort_by_key(|(di, _)| *di);
    Ok(pairs.into_iter().map(|(_, p)| p).collect())
}

/// Supervised samples for detector adaptation: crops and features come from
/// the detection boxes, targets from the matched ground truth.
#[derive(Debug, Default)]
pub struct AdaptationDataset {
    /// (detection crop, effective orientation target in degrees)
    pub pose: Vec<(Tensor<f32>, f64)>,
    /// (feature vector built on the detection box, true distance in meters)
    pub distance: Vec<(FeatureVector, f64)>,
}

/// Matches detections to truths per image (iterated in image-id order) and
/// assembles both adaptation datasets. `orientation_deg` supplies the
/// effective orientation entering the distance features — ground-truth
/// during initial dataset builds, the pose network's prediction during
/// adaptation.
pub fn build_adaptation_dataset(
    dets_by_image: &BTreeMap<String, Vec<DetectionRecord>>,
    truths_by_image: &BTreeMap<String, Vec<LabelRecord>>,
    mut image_for: impl FnMut(&str) -> Result<(Tensor<f32>, ImageMeta), MatchingError>,
    threshold: f64,
    mut orientation_deg: impl FnMut(&Tensor<f32>) -> f64,
) -> Result<AdaptationDataset, MatchingError> {
    let mut out = AdaptationDataset::default();
    for (image_id, dets) in dets_by_image {
        let Some(truths) = truths_by_image.get(image_id) else {
            continue;
        };
        let pairs = match_detections(dets, truths, threshold)?;
        if pairs.is_empty() {
            continue;
        }
        let (image, meta) = image_for(image_id)?;
        for pair in pairs {
            let crop = extract_crop(&image, &pair.detection.box2d)
                .map_err(|e| MatchingError::Image(image_id.clone(), e.to_string()))?;
            let theta = orientation_deg(&crop);
            out.pose
                .push((crop, effective_orientation(pair.truth.alpha)));
            let features =
                build_decade_features(&pair.detection.box2d, pair.detection.class_name, theta, &meta)?;
            out.distance.push((features, pair.truth.distance));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kitti::{DistanceMode, KittiClass};

    fn det(conf: f64, b: BBox) -> DetectionRecord {
        DetectionRecord {
            image_id: "000000".into(),
            class_name: KittiClass::Car,
            confidence: conf,
            box2d: b,
        }
    }

    fn truth(b: BBox) -> LabelRecord {
        crate::kitti::parse_label_line(
            &format!(
                "Car 0.00 0 0.50 {} {} {} {} 1.5 1.8 4.0 0.0 0.0 25.0 0.5",
                b.left, b.top, b.right, b.bottom
            ),
            1,
            DistanceMode::ZAxis,
        )
        .unwrap()
    }

    #[test]
    fn iou_basics() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let far = BBox::new(10.0, 10.0, 12.0, 12.0);
        assert_eq!(iou(&a, &far).unwrap(), 0.0);
        let b = BBox::new(1.0, 0.0, 3.0, 2.0);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou(&a, &b).unwrap() - iou(&b, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn iou_rejects_degenerate_boxes() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        let empty = BBox::new(1.0, 1.0, 1.0, 3.0);
        assert!(matches!(
            iou(&a, &empty),
            Err(MatchingError::DegenerateBox(_))
        ));
    }

    #[test]
    fn exact_match_yields_single_pair() {
        let b = BBox::new(10.0, 10.0, 50.0, 40.0);
        let pairs = match_detections(&[det(0.9, b)], &[truth(b)], 0.6).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].iou, 1.0);
        assert!(pairs[0].class_agrees);
    }

    #[test]
    fn below_threshold_is_unmatched() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        // shifted to IoU = 50/150 = 1/3 < 0.6
        let shifted = BBox::new(5.0, 0.0, 15.0, 10.0);
        let pairs = match_detections(&[det(0.9, shifted)], &[truth(b)], 0.6).unwrap();
        assert!(pairs.is_empty());
    }

    #[test]
    fn higher_confidence_wins_shared_truth() {
        let b = BBox::new(0.0, 0.0, 100.0, 100.0);
        let close = BBox::new(2.0, 0.0, 102.0, 100.0);
        let pairs = match_detections(&[det(0.8, close), det(0.9, b)], &[truth(b)], 0.6).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].detection.confidence, 0.9);
    }

    #[test]
    fn matching_is_one_to_one() {
        let b1 = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b2 = BBox::new(20.0, 0.0, 30.0, 10.0);
        let dets = [det(0.9, b1), det(0.8, b1), det(0.7, b2)];
        let truths = [truth(b1), truth(b2)];
        let pairs = match_detections(&dets, &truths, 0.6).unwrap();
        assert_eq!(pairs.len(), 2);
        let mut truth_boxes: Vec<_> = pairs.iter().map(|p| p.truth.box2d.left as i64).collect();
        truth_boxes.sort_unstable();
        truth_boxes.dedup();
        assert_eq!(truth_boxes.len(), 2);
    }

    #[test]
    fn adaptation_dataset_empty_when_no_matches() {
        let mut dets = BTreeMap::new();
        dets.insert(
            "000000".to_string(),
            vec![det(0.9, BBox::new(200.0, 200.0, 210.0, 210.0))],
        );
        let mut truths = BTreeMap::new();
        truths.insert(
            "000000".to_string(),
            vec![truth(BBox::new(0.0, 0.0, 10.0, 10.0))],
        );
        let ds = build_adaptation_dataset(
            &dets,
            &truths,
            |_| {
                Ok((
                    Tensor::filled(&[3, 240, 320], 0.5),
                    ImageMeta {
                        image_id: "000000".into(),
                        width_px: 320,
                        height_px: 240,
                    },
                ))
            },
            0.6,
            |_| 0.0,
        )
        .unwrap();
        assert!(ds.pose.is_empty());
        assert!(ds.distance.is_empty());
    }

    #[test]
    fn adaptation_uses_detection_box_and_truth_targets() {
        let truth_box = BBox::new(10.0, 10.0, 60.0, 60.0);
        // shifted but still above 0.6 IoU
        let det_box = BBox::new(13.0, 10.0, 63.0, 60.0);
        let mut dets = BTreeMap::new();
        dets.insert("000000".to_string(), vec![det(0.9, det_box)]);
        let mut truths = BTreeMap::new();
        truths.insert("000000".to_string(), vec![truth(truth_box)]);
        let ds = build_adaptation_dataset(
            &dets,
            &truths,
            |_| {
                Ok((
                    Tensor::filled(&[3, 240, 320], 0.5),
                    ImageMeta {
                        image_id: "000000".into(),
                        width_px: 320,
                        height_px: 240,
                    },
                ))
            },
            0.6,
            |_| 33.0,
        )
        .unwrap();
        assert_eq!(ds.pose.len(), 1);
        assert_eq!(ds.distance.len(), 1);
        // pose target from the truth's alpha (0.5 rad)
        assert!((ds.pose[0].1 - effective_orientation(0.5)).abs() < 1e-12);
        // distance target from the truth
        assert_eq!(ds.distance[0].1, 25.0);
        // features from the detection box with the supplied orientation
        let f = &ds.distance[0].0;
        assert!((f.values[8] - 50.0 / 320.0).abs() < 1e-12);
        assert!((f.values[11] - 38.0 / 320.0).abs() < 1e-12);
        assert!((f.values[13] - 33.0 / 90.0).abs() < 1e-12);
    }
}
