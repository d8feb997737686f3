//! Rough training-throughput probe for sizing test budgets.

use std::time::Instant;

use decade::features::{build_decade_features, effective_orientation};
use decade::kitti::ImageMeta;
use decade::models::{build_distmlp, build_posecnn};
use decade::synth::{generate_samples, SynthConfig};
use decade::training::{train, Dataset, TrainConfig};

fn main() {
    let cfg = SynthConfig::default();
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let samples = generate_samples(&cfg, 1, n).unwrap();
    let meta = ImageMeta {
        image_id: "synth".into(),
        width_px: cfg.image_width,
        height_px: cfg.image_height,
    };

    let mut dist_data = Dataset::new(vec![14]);
    for s in &samples {
        let f = build_decade_features(
            &s.label.box2d,
            s.label.class_name,
            effective_orientation(s.label.alpha),
            &meta,
        )
        .unwrap();
        let vals: Vec<f32> = f.values.iter().map(|&v| v as f32).collect();
        dist_data.push(&vals, s.label.distance as f32);
    }
    let mut net = build_distmlp().instantiate(1);
    let t = Instant::now();
    let epochs = 250;
    let tc = TrainConfig {
        epochs,
        ..TrainConfig::distance_defaults(1)
    };
    let out = train(&mut net, &dist_data, &tc).unwrap();
    println!(
        "distmlp: {n} samples, {epochs} epochs in {:.2}s, last holdout mae {:.3}",
        t.elapsed().as_secs_f64(),
        out.history.epochs.last().unwrap().holdout_mae
    );

    let mut pose_data = Dataset::new(vec![3, 32, 32]);
    for s in &samples {
        pose_data.push(
            s.crop.values(),
            (effective_orientation(s.label.alpha) / 90.0) as f32,
        );
    }
    let mut pose = build_posecnn().instantiate(1);
    let t = Instant::now();
    let tc = TrainConfig {
        epochs: 2,
        ..TrainConfig::pose_defaults(1)
    };
    let out = train(&mut pose, &pose_data, &tc).unwrap();
    println!(
        "posecnn: {n} samples, 2 epochs in {:.2}s, last holdout mae {:.4} (norm)",
        t.elapsed().as_secs_f64(),
        out.history.epochs.last().unwrap().holdout_mae
    );
}
