//! Randomized invariant checks over the library's core operations.

use proptest::prelude::*;

use decade::features::{build_decade_features, effective_orientation};
use decade::kitti::{
    extract_crop, parse_label_line, preprocess, BBox, DistanceMode, ImageMeta, KittiClass,
};
use decade::layers::{dense_forward, maxpool_forward, relu_forward};
use decade::matching::iou;
use decade::network::mse_loss;
use decade::seed::derive_seed;
use decade::tensor::Tensor;

fn finite_box() -> impl Strategy<Value = BBox> {
    (0.0..500.0f64, 0.0..300.0f64, 0.5..200.0f64, 0.5..150.0f64)
        .prop_map(|(l, t, w, h)| BBox::new(l, t, l + w, t + h))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dense_is_linear_with_zero_bias(
        scale in -3.0..3.0f64,
        xs in proptest::collection::vec(-2.0..2.0f64, 4),
        ws in proptest::collection::vec(-2.0..2.0f64, 12),
    ) {
        let x = Tensor::new(vec![1, 4], xs.clone()).unwrap();
        let sx = Tensor::new(vec![1, 4], xs.iter().map(|v| v * scale).collect()).unwrap();
        let w = Tensor::new(vec![4, 3], ws).unwrap();
        let b = Tensor::zeros(&[3]);
        let y = dense_forward(&x, &w, &b).unwrap();
        let sy = dense_forward(&sx, &w, &b).unwrap();
        for (a, c) in y.values().iter().zip(sy.values()) {
            prop_assert!((a * scale - c).abs() < 1e-9);
        }
    }

    #[test]
    fn mse_is_nonnegative_and_zero_on_equal(
        vals in proptest::collection::vec(-10.0..10.0f64, 1..20),
        other in proptest::collection::vec(-10.0..10.0f64, 1..20),
    ) {
        let n = vals.len().min(other.len());
        let a = Tensor::new(vec![n, 1], vals[..n].to_vec()).unwrap();
        let b = Tensor::new(vec![n, 1], other[..n].to_vec()).unwrap();
        let (loss, _) = mse_loss(&a, &b).unwrap();
        prop_assert!(loss >= 0.0);
        let (self_loss, _) = mse_loss(&a, &a).unwrap();
        prop_assert_eq!(self_loss, 0.0);
    }

    #[test]
    fn relu_output_is_nonnegative_and_idempotent(
        vals in proptest::collection::vec(-5.0..5.0f64, 1..32),
    ) {
        let n = vals.len();
        let x = Tensor::new(vec![1, n], vals).unwrap();
        let y = relu_forward(&x);
        prop_assert!(y.values().iter().all(|&v| v >= 0.0));
        let yy = relu_forward(&y);
        prop_assert_eq!(y.values(), yy.values());
    }

    #[test]
    fn maxpool_picks_a_present_maximum(
        vals in proptest::collection::vec(-5.0..5.0f64, 16),
    ) {
        let x = Tensor::new(vec![1, 1, 4, 4], vals.clone()).unwrap();
        let (y, argmax) = maxpool_forward(&x, 2, 2).unwrap();
        for (out, &src) in y.values().iter().zip(&argmax) {
            prop_assert_eq!(*out, vals[src]);
            prop_assert!(vals.iter().all(|&v| v <= *out || !window_contains(src, &vals, v)));
        }
    }

    #[test]
    fn effective_orientation_is_folded(alpha in -10.0..10.0f64) {
        let f = effective_orientation(alpha);
        prop_assert!((0.0..=90.0).contains(&f));
        prop_assert!((f - effective_orientation(-alpha)).abs() < 1e-9);
        prop_assert!((f - effective_orientation(std::f64::consts::PI - alpha)).abs() < 1e-9);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in finite_box(), b in finite_box()) {
        let ab = iou(&a, &b).unwrap();
        prop_assert_eq!(ab, iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn crop_shape_is_fixed(b in finite_box()) {
        let image = Tensor::from_fn(&[3, 375, 1242], |i| (i % 7) as f32 / 7.0);
        let crop = extract_crop(&image, &b).unwrap();
        prop_assert_eq!(crop.shape(), &[3, 32, 32]);
        prop_assert!(crop.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn decade_features_one_hot_and_ranges(
        b in finite_box(),
        theta in 0.0..90.0f64,
        class_idx in 0..8usize,
    ) {
        let classes = decade::kitti::TRAIN_CLASSES;
        let meta = ImageMeta { image_id: "x".into(), width_px: 1242, height_px: 375 };
        let f = build_decade_features(&b, classes[class_idx], theta, &meta).unwrap();
        prop_assert_eq!(f.values.len(), 14);
        let one_hot_sum: f64 = f.values[..8].iter().sum();
        prop_assert_eq!(one_hot_sum, 1.0);
        prop_assert!(f.values[..8].iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert!((f.values[13] - theta / 90.0).abs() < 1e-12);
        prop_assert!(f.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn preprocess_is_idempotent(
        distances in proptest::collection::vec(-20.0..300.0f64, 1..20),
    ) {
        let records: Vec<_> = distances
            .iter()
            .map(|&d| {
                parse_label_line(
                    &format!(
                        "Car 0.00 0 0.50 10.00 10.00 60.00 60.00 1.50 1.80 4.00 0.00 0.00 {d:.2} 0.50"
                    ),
                    1,
                    DistanceMode::ZAxis,
                )
                .unwrap()
            })
            .collect();
        let once = preprocess(records);
        let twice = preprocess(once.clone());
        prop_assert_eq!(once.len(), twice.len());
        for (a, b) in once.iter().zip(&twice) {
            prop_assert_eq!(a.distance, b.distance);
        }
        prop_assert!(once.iter().all(|r| (0.0..=150.0).contains(&r.distance)));
    }

    #[test]
    fn label_line_round_trips(
        b in finite_box(),
        dist in 0.5..150.0f64,
        alpha in -3.1..3.1f64,
    ) {
        let line = format!(
            "Pedestrian 0.00 0 {alpha:.2} {:.2} {:.2} {:.2} {:.2} 1.75 0.60 0.60 5.00 1.60 {dist:.2} {alpha:.2}",
            b.left, b.top, b.right, b.bottom
        );
        let rec = parse_label_line(&line, 1, DistanceMode::ZAxis).unwrap();
        let rec2 = parse_label_line(&rec.to_line(), 1, DistanceMode::ZAxis).unwrap();
        prop_assert_eq!(rec.class_name, KittiClass::Pedestrian);
        prop_assert!((rec.box2d.left - rec2.box2d.left).abs() < 1e-9);
        prop_assert!((rec.distance - rec2.distance).abs() < 1e-9);
        prop_assert!((rec.alpha - rec2.alpha).abs() < 1e-9);
    }

    #[test]
    fn derived_seeds_are_stable_and_tag_separated(seed in any::<u64>()) {
        prop_assert_eq!(derive_seed(seed, "a"), derive_seed(seed, "a"));
        prop_assert_ne!(derive_seed(seed, "a"), derive_seed(seed, "b"));
    }
}

// helper for the maxpool property: whether `v` appears inside the 2x2
// window that produced output position `src`
fn window_contains(src: usize, vals: &[f64], v: f64) -> bool {
    let (sy, sx) = (src / 4, src % 4);
    let (oy, ox) = (sy / 2 * 2, sx / 2 * 2);
    (0..2).any(|dy| (0..2).any(|dx| vals[(oy + dy) * 4 + (ox + dx)] == v))
}
