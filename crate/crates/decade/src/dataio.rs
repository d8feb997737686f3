//! On-disk dataset formats produced by `prepare` and consumed by `train`.
//!
//! Feature datasets are CSV (`target_m,f0,...,fN`); pose datasets are a
//! binary pack of 3x32x32 crops with their orientation targets in degrees
//! (magic `DPSE`, u32 LE sample count, then per sample an f32 LE target
//! followed by 3072 f32 LE pixels).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::kitti::CROP_SIZE;
use crate::tensor::Tensor;
use crate::training::Dataset;

const POSE_MAGIC: &[u8; 4] = b"DPSE";
const CROP_LEN: usize = 3 * CROP_SIZE * CROP_SIZE;

#[derive(Debug, Error)]
pub enum DataIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path} row {row}: {message}")]
    BadRow {
        path: String,
        row: usize,
        message: String,
    },
    #[error("{path}: bad header {header:?}")]
    BadHeader { path: String, header: String },
    #[error("{path}: not a pose dataset (bad magic)")]
    BadMagic { path: String },
    #[error("{path}: truncated pose dataset")]
    Truncated { path: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataIoError + '_ {
    move |source| DataIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes a feature dataset CSV; one row per sample, target first.
pub fn write_feature_csv(
    path: &Path,
    rows: &[(Vec<f64>, f64)],
    n_features: usize,
) -> Result<(), DataIoError> {
    let mut out = String::from("target_m");
    for i in 0..n_features {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for (features, target) in rows {
        assert_eq!(features.len(), n_features, "feature width mismatch");
        out.push_str(&format!("{target:.6}"));
        for f in features {
            out.push_str(&format!(",{f:.8}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Reads a feature dataset CSV into a training [`Dataset`].
pub fn read_feature_csv(path: &Path) -> Result<Dataset, DataIoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"target_m") || cols.len() < 2 {
        return Err(DataIoError::BadHeader {
            path: path.display().to_string(),
            header: header.to_string(),
        });
    }
    let n_features = cols.len() - 1;
    let mut data = Dataset::new(vec![n_features]);
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_features + 1 {
            return Err(DataIoError::BadRow {
                path: path.display().to_string(),
                row,
                message: format!("expected {} fields, got {}", n_features + 1, fields.len()),
            });
        }
        let mut parsed = Vec::with_capacity(fields.len());
        for f in &fields {
            parsed.push(f.parse::<f32>().map_err(|_| DataIoError::BadRow {
                path: path.display().to_string(),
                row,
                message: format!("unparseable number {f:?}"),
            })?);
        }
        data.push(&parsed[1..], parsed[0]);
    }
    Ok(data)
}

/// Writes crops with their orientation targets (degrees).
pub fn write_pose_bin(path: &Path, samples: &[(Tensor<f32>, f64)]) -> Result<(), DataIoError> {
    let mut buf = Vec::with_capacity(8 + samples.len() * 4 * (1 + CROP_LEN));
    buf.extend_from_slice(POSE_MAGIC);
    buf.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    for (crop, target_deg) in samples {
        assert_eq!(crop.len(), CROP_LEN, "crop must be 3x32x32");
        buf.extend_from_slice(&(*target_deg as f32).to_le_bytes());
        for v in crop.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&buf).map_err(io_err(path))
}

/// Reads a pose dataset; targets are normalized to [0, 1] (degrees / 90),
/// the pose network's regression range.
pub fn read_pose_bin(path: &Path) -> Result<Dataset, DataIoError> {
    let mut raw = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(io_err(path))?;
    if raw.len() < 8 || &raw[..4] != POSE_MAGIC {
        return Err(DataIoError::BadMagic {
            path: path.display().to_string(),
        });
    }
    let count = u32::from_le_bytes(raw[4..8].try_into().unwrap()) as usize;
    let expected = 8 + count * 4 * (1 + CROP_LEN);
    if raw.len() != expected {
        return Err(DataIoError::Truncated {
            path: path.display().to_string(),
        });
    }
    let mut data = Dataset::new(vec![3, CROP_SIZE, CROP_SIZE]);
    let mut pos = 8;
    let mut crop = vec![0.0f32; CROP_LEN];
    for _ in 0..count {
        let target = f32::from_le_bytes(raw[pos..pos + 4].try_into().unwrap());
        pos += 4;
        for v in crop.iter_mut() {
            *v = f32::from_le_bytes(raw[pos..pos + 4].try_into().unwrap());
            pos += 4;
        }
        data.push(&crop, target / 90.0);
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dist.csv");
        let rows = vec![
            (vec![0.1, 0.2, 0.3], 25.0),
            (vec![0.4, 0.5, 0.6], 80.5),
        ];
        write_feature_csv(&path, &rows, 3).unwrap();
        let data = read_feature_csv(&path).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.sample_shape, vec![3]);
        assert!((data.target(1) - 80.5).abs() < 1e-4);
        assert!((data.input(0)[2] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn pose_bin_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pose.bin");
        let crop = Tensor::from_fn(&[3, 32, 32], |i| (i % 255) as f32 / 255.0);
        write_pose_bin(&path, &[(crop.clone(), 45.0)]).unwrap();
        let data = read_pose_bin(&path).unwrap();
        assert_eq!(data.len(), 1);
        assert!((data.target(0) - 0.5).abs() < 1e-6);
        assert_eq!(data.input(0), crop.values());

        let raw = fs::read(&path).unwrap();
        fs::write(&path, &raw[..raw.len() - 3]).unwrap();
        assert!(matches!(
            read_pose_bin(&path),
            Err(DataIoError::Truncated { .. })
        ));
        fs::write(&path, b"XXXXrest").unwrap();
        assert!(matches!(
            read_pose_bin(&path),
            Err(DataIoError::BadMagic { .. })
        ));
    }

    #[test]
    fn bad_feature_rows_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dist.csv");
        fs::write(&path, "target_m,f0\n1.0,2.0\nbroken\n").unwrap();
        assert!(matches!(
            read_feature_csv(&path),
            Err(DataIoError::BadRow { row: 2, .. })
        ));
    }
}
