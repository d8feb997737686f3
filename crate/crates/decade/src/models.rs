//! Concrete network definitions, parameter/FLOP accounting, and binary
//! checkpoints.
//!
//! Three models: the pose CNN (32x32x3 crop -> normalized orientation in
//! [0,1], times 90 at inference), the distance MLP (14 features -> meters),
//! and the DisNet-style baseline (6 features -> meters).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::kitti::CROP_SIZE;
use crate::layers::{Layer, LayerSpec};
use crate::network::Network;
use crate::seed::rng_for;
use crate::tensor::Tensor;

pub const POSECNN: &str = "posecnn";
pub const DISTMLP: &str = "distmlp";
pub const DISNET: &str = "disnet";

/// Shape-level model description; instantiate to get trainable weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkDef {
    pub name: String,
    /// Per-sample input shape.
    pub input_shape: Vec<usize>,
    pub specs: Vec<LayerSpec>,
}

impl NetworkDef {
    pub fn instantiate(&self, seed: u64) -> Network<f32> {
        let mut rng = rng_for(seed, &format!("init/{}", self.name));
        Network::init(&self.name, &self.input_shape, &self.specs, &mut rng)
            .expect("model definitions are shape-conformant")
    }

    pub fn count_params(&self) -> usize {
        self.specs.iter().map(LayerSpec::param_count).sum()
    }

    /// FLOPs per forward pass under the multiply-accumulate convention
    /// (1 MAC = 1 FLOP); activations and pooling excluded.
    pub fn count_flops(&self, batch: usize) -> usize {
        let mut shape = self.input_shape.clone();
        let mut flops = 0usize;
        for spec in &self.specs {
            match *spec {
                LayerSpec::Dense { input, output } => {
                    flops += input * output;
                    shape = vec![output];
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let (h, w) = (shape[1], shape[2]);
                    let h_out = (h + 2 * padding - kernel) / stride + 1;
                    let w_out = (w + 2 * padding - kernel) / stride + 1;
                    flops += kernel * kernel * in_channels * out_channels * h_out * w_out;
                    shape = vec![out_channels, h_out, w_out];
                }
                LayerSpec::MaxPool2d { window, stride } => {
                    shape = vec![
                        shape[0],
                        (shape[1] - window) / stride + 1,
                        (shape[2] - window) / stride + 1,
                    ];
                }
                LayerSpec::Relu => {}
                LayerSpec::Flatten => shape = vec![shape.iter().product()],
            }
        }
        flops * batch
    }
}

/// Pose network: three conv+pool blocks then two dense layers, 102,587
/// parameters.
pub fn build_posecnn() -> NetworkDef {
    let conv = |cin, cout| LayerSpec::Conv2d {
        in_channels: cin,
        out_channels: cout,
        kernel: 3,
        stride: 1,
        padding: 1,
    };
    let pool = LayerSpec::MaxPool2d { window: 2, stride: 2 };
    NetworkDef {
        name: POSECNN.into(),
        input_shape: vec![3, CROP_SIZE, CROP_SIZE],
        specs: vec![
            conv(3, 16),
            LayerSpec::Relu,
            pool.clone(),
            conv(16, 32),
            LayerSpec::Relu,
            pool.clone(),
            conv(32, 64),
            LayerSpec::Relu,
            pool,
            LayerSpec::Flatten,
            LayerSpec::Dense { input: 1024, output: 77 },
            LayerSpec::Relu,
            LayerSpec::Dense { input: 77, output: 1 },
        ],
    }
}

fn mlp(name: &str, input: usize) -> NetworkDef {
    NetworkDef {
        name: name.into(),
        input_shape: vec![input],
        specs: vec![
            LayerSpec::Dense { input, output: 100 },
            LayerSpec::Relu,
            LayerSpec::Dense { input: 100, output: 100 },
            LayerSpec::Relu,
            LayerSpec::Dense { input: 100, output: 100 },
            LayerSpec::Relu,
            LayerSpec::Dense { input: 100, output: 1 },
        ],
    }
}

/// Distance network: 14 features -> 3x100 hidden -> meters. 21,801 params.
pub fn build_distmlp() -> NetworkDef {
    mlp(DISTMLP, 14)
}

/// Baseline: 6 inverse-dimensional features -> same hidden stack. 21,001
/// params.
pub fn build_disnet() -> NetworkDef {
    mlp(DISNET, 6)
}

pub fn builder_for(name: &str) -> Option<NetworkDef> {
    match name {
        POSECNN => Some(build_posecnn()),
        DISTMLP => Some(build_distmlp()),
        DISNET => Some(build_disnet()),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"DCDE";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes (not a checkpoint file)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    BadVersion(u32),
    #[error("truncated checkpoint while reading {0}")]
    Truncated(String),
    #[error("layer {index}: unknown kind tag {tag}")]
    UnknownKind { index: usize, tag: u8 },
    #[error("layer {index}: invalid shape {dims:?}")]
    BadShape { index: usize, dims: Vec<u32> },
    #[error("checkpoint metadata is not valid UTF-8")]
    BadMetadata,
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epochs: u32,
}

fn kind_tag(spec: &LayerSpec) -> (u8, Vec<u32>) {
    match *spec {
        LayerSpec::Dense { input, output } => (1, vec![input as u32, output as u32]),
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => (
            2,
            vec![
                out_channels as u32,
                in_channels as u32,
                kernel as u32,
                stride as u32,
                padding as u32,
            ],
        ),
        LayerSpec::MaxPool2d { window, stride } => (3, vec![window as u32, stride as u32]),
        LayerSpec::Relu => (4, vec![]),
        LayerSpec::Flatten => (5, vec![]),
    }
}

fn dims_for_tag(tag: u8) -> Option<usize> {
    match tag {
        1 => Some(2),
        2 => Some(5),
        3 => Some(2),
        4 | 5 => Some(0),
        _ => None,
    }
}

fn spec_from_tag(index: usize, tag: u8, dims: &[u32]) -> Result<LayerSpec, CheckpointError> {
    let bad = || CheckpointError::BadShape {
        index,
        dims: dims.to_vec(),
    };
    let spec = match tag {
        1 => LayerSpec::Dense {
            input: dims[0] as usize,
            output: dims[1] as usize,
        },
        2 => LayerSpec::Conv2d {
            out_channels: dims[0] as usize,
            in_channels: dims[1] as usize,
            kernel: dims[2] as usize,
            stride: dims[3] as usize,
            padding: dims[4] as usize,
        },
        3 => LayerSpec::MaxPool2d {
            window: dims[0] as usize,
            stride: dims[1] as usize,
        },
        4 => LayerSpec::Relu,
        5 => LayerSpec::Flatten,
        _ => return Err(CheckpointError::UnknownKind { index, tag }),
    };
    spec.validate().map_err(|_| bad())?;
    Ok(spec)
}

/// Serializes the network's layers and weights plus training metadata.
/// Layout: magic, format version (u32 LE), name length + bytes, layer
/// count, then per layer a kind tag byte, its shape dims (u32 LE) and the
/// raw f32 LE parameter buffer (weights then bias), and finally a
/// length-prefixed metadata text block.
pub fn save_checkpoint(
    net: &Network<f32>,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<(), CheckpointError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let name = net.name.as_bytes();
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name);
    buf.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        let (tag, dims) = kind_tag(layer.spec());
        buf.push(tag);
        for d in dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for t in [layer.weights.as_ref(), layer.bias.as_ref()].into_iter().flatten() {
            for v in t.values() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let text = format!("seed={};epochs={}", meta.seed, meta.epochs);
    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());

    let mut file = fs::File::create(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(&buf).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.data.len() {
            return Err(CheckpointError::Truncated(what.to_string()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(Network<f32>, CheckpointMeta), CheckpointError> {
    let mut data = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut data))
        .map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
    let mut r = Reader { data: &data, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let name_len = r.u32("name length")? as usize;
    let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
        .map_err(|_| CheckpointError::BadMetadata)?;
    let layer_count = r.u32("layer count")? as usize;

    let mut layers = Vec::with_capacity(layer_count);
    for index in 0..layer_count {
        let tag = r.take(1, "kind tag")?[0];
        let n_dims = dims_for_tag(tag).ok_or(CheckpointError::UnknownKind { index, tag })?;
        let mut dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            dims.push(r.u32("layer shape")?);
        }
        let spec = spec_from_tag(index, tag, &dims)?;
        let mut layer = Layer::new(spec).map_err(|_| CheckpointError::BadShape {
            index,
            dims: dims.clone(),
        })?;
        for t in [layer.weights.as_mut(), layer.bias.as_mut()].into_iter().flatten() {
            let n = t.len();
            let raw = r.take(4 * n, &format!("layer {index} parameters"))?;
            let vals = t.values_mut();
            for (i, chunk) in raw.chunks_exact(4).enumerate() {
                vals[i] = f32::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        layers.push(layer);
    }
    let meta_len = r.u32("metadata length")? as usize;
    let text = std::str::from_utf8(r.take(meta_len, "metadata")?)
        .map_err(|_| CheckpointError::BadMetadata)?;
    let mut meta = CheckpointMeta::default();
    for part in text.split(';') {
        match part.split_once('=') {
            Some(("seed", v)) => meta.seed = v.parse().map_err(|_| CheckpointError::BadMetadata)?,
            Some(("epochs", v)) => {
                meta.epochs = v.parse().map_err(|_| CheckpointError::BadMetadata)?
            }
            _ => return Err(CheckpointError::BadMetadata),
        }
    }

    let input_shape = infer_input_shape(&layers);
    Ok((Network::from_layers(&name, &input_shape, layers), meta))
}

/// Per-sample input shape implied by the first parameterized layer; conv
/// nets take the standard 32x32 crop.
fn infer_input_shape(layers: &[Layer<f32>]) -> Vec<usize> {
    for layer in layers {
        match *layer.spec() {
            LayerSpec::Dense { input, .. } => return vec![input],
            LayerSpec::Conv2d { in_channels, .. } => {
                return vec![in_channels, CROP_SIZE, CROP_SIZE]
            }
            _ => continue,
        }
    }
    vec![]
}

/// Scales a pose network's normalized output back to degrees.
pub fn pose_output_to_degrees(normalized: f32) -> f64 {
    (f64::from(normalized) * 90.0).clamp(0.0, 90.0)
}

/// Runs a pose network on a batch of 3x32x32 crops, returning degrees.
pub fn predict_pose_degrees(
    net: &Network<f32>,
    crops: &[Tensor<f32>],
) -> Result<Vec<f64>, crate::network::NetworkError> {
    if crops.is_empty() {
        return Ok(Vec::new());
    }
    let per = 3 * CROP_SIZE * CROP_SIZE;
    let mut batch = Tensor::zeros(&[crops.len(), 3, CROP_SIZE, CROP_SIZE]);
    for (i, crop) in crops.iter().enumerate() {
        batch.values_mut()[i * per..(i + 1) * per].copy_from_slice(crop.values());
    }
    let out = net.predict(&batch)?;
    Ok(out.values().iter().map(|&v| pose_output_to_degrees(v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_budgets() {
        assert_eq!(build_posecnn().count_params(), 102_587);
        assert_eq!(build_distmlp().count_params(), 21_801);
        assert_eq!(build_disnet().count_params(), 21_001);
    }

    #[test]
    fn posecnn_within_five_percent_of_budget() {
        let p = build_posecnn().count_params() as f64;
        assert!((97_185.0..=107_415.0).contains(&p));
    }

    #[test]
    fn flop_accounting() {
        let dense = NetworkDef {
            name: "d".into(),
            input_shape: vec![14],
            specs: vec![LayerSpec::Dense { input: 14, output: 100 }],
        };
        assert_eq!(dense.count_flops(1), 1_400);
        // 14*100 + 2*(100*100) + 100*1
        assert_eq!(build_distmlp().count_flops(1), 21_500);
        let conv = NetworkDef {
            name: "c".into(),
            input_shape: vec![3, 32, 32],
            specs: vec![LayerSpec::Conv2d {
                in_channels: 3,
                out_channels: 16,
                kernel: 3,
                stride: 1,
                padding: 1,
            }],
        };
        assert_eq!(conv.count_flops(1), 442_368);
        assert_eq!(conv.count_flops(2), 884_736);
    }

    #[test]
    fn spec_counting_basics() {
        assert_eq!(LayerSpec::Dense { input: 2, output: 3 }.param_count(), 9);
        assert_eq!(LayerSpec::Relu.param_count(), 0);
        assert_eq!(LayerSpec::Flatten.param_count(), 0);
        assert_eq!(LayerSpec::MaxPool2d { window: 2, stride: 2 }.param_count(), 0);
    }

    #[test]
    fn builders_are_shape_conformant() {
        // instantiate() dry-runs a forward pass, so this is the real check
        for def in [build_posecnn(), build_distmlp(), build_disnet()] {
            let net = def.instantiate(0);
            assert_eq!(net.count_params(), def.count_params());
        }
    }

    #[test]
    fn posecnn_zero_crop_is_finite_and_batched() {
        let net = build_posecnn().instantiate(1);
        let x = Tensor::zeros(&[1, 3, 32, 32]);
        let y = net.predict(&x).unwrap();
        assert!(y.values()[0].is_finite());
        let xb = Tensor::zeros(&[64, 3, 32, 32]);
        assert_eq!(net.predict(&xb).unwrap().shape(), &[64, 1]);
    }

    #[test]
    fn mlps_batched_shapes_and_finite() {
        let dist = build_distmlp().instantiate(2);
        assert_eq!(
            dist.predict(&Tensor::zeros(&[64, 14])).unwrap().shape(),
            &[64, 1]
        );
        assert!(dist.predict(&Tensor::zeros(&[1, 14])).unwrap().values()[0].is_finite());
        let dis = build_disnet().instantiate(3);
        assert_eq!(
            dis.predict(&Tensor::zeros(&[64, 6])).unwrap().shape(),
            &[64, 1]
        );
        assert_eq!(dist.specs()[2..], dis.specs()[2..]);
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = build_distmlp().instantiate(7);
        let meta = CheckpointMeta { seed: 7, epochs: 42 };
        save_checkpoint(&net, &meta, &path).unwrap();
        let (loaded, lmeta) = load_checkpoint(&path).unwrap();
        assert_eq!(lmeta, meta);
        assert_eq!(loaded.name, net.name);
        let x = Tensor::from_fn(&[5, 14], |i| ((i * 37) % 101) as f32 / 101.0);
        assert_eq!(net.predict(&x).unwrap().values(), loaded.predict(&x).unwrap().values());
    }

    #[test]
    fn checkpoint_corruption_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = build_disnet().instantiate(9);
        save_checkpoint(&net, &CheckpointMeta::default(), &path).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic)));

        let mut bad_version = good.clone();
        bad_version[4] = 99;
        fs::write(&path, &bad_version).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::BadVersion(99))
        ));

        let truncated = &good[..good.len() / 2];
        fs::write(&path, truncated).unwrap();
        match load_checkpoint(&path) {
            Err(CheckpointError::Truncated(what)) => {
                assert!(what.contains("layer"), "truncation context: {what}")
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }
}
