//! Detection-wise distance estimation toolkit.
//!
//! Estimates per-object distance from the outputs of any 2D object detector.
//! Two small networks do the work: a pose CNN that regresses the effective
//! allocentric orientation of a detection from its 32x32x3 crop, and a
//! distance MLP that regresses metric distance from bounding-box features
//! plus that orientation. Both can be fine-tuned on detector outputs matched
//! to ground truth over IoU, so they absorb detector inaccuracy.
//!
//! The crate ships its own minimal CPU training engine ([`tensor`], [`layers`],
//! [`network`], [`optim`]), KITTI label/detections ingestion ([`kitti`]),
//! feature construction ([`features`]), concrete model definitions and
//! checkpointing ([`models`]), IoU matching ([`matching`]), training loops
//! ([`training`]), class-wise/range-wise evaluation ([`evaluation`]) and a
//! pinhole-camera synthetic scene generator ([`synth`]) used as a
//! ground-truth oracle in tests.

pub mod dataio;
pub mod evaluation;
pub mod features;
pub mod kitti;
pub mod layers;
pub mod matching;
pub mod models;
pub mod network;
pub mod optim;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod training;

pub use kitti::BBox;
pub use tensor::Tensor;
