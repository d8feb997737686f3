//! KITTI label and detections ingestion, preprocessing, and crop extraction.
//!
//! Label files are one text file per image with 15 whitespace-separated
//! fields per line (type, truncated, occluded, alpha, bbox x4, dimensions x3,
//! location x3, rotation_y). Detections arrive as a CSV with header
//! `image_id,class,confidence,left,top,right,bottom`.

use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAX_DISTANCE_M: f64 = 150.0;

#[derive(Debug, Error)]
pub enum KittiError {
    #[error("line {line}: expected 15 fields, got {count}")]
    FieldCount { line: usize, count: usize },
    #[error("line {line}: unparseable number in field {field}: {value:?}")]
    BadNumber {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("line {line}: unknown class {name:?}")]
    UnknownClass { line: usize, name: String },
    #[error("row {row}: {message}")]
    BadDetectionRow { row: usize, message: String },
    #[error("detections header must be {expected:?}, got {actual:?}")]
    BadHeader { expected: String, actual: String },
    #[error("box has zero area after clamping to the image")]
    DegenerateBox,
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("decoding image {path}: {message}")]
    BadImage { path: String, message: String },
}

/// The nine KITTI annotation classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum KittiClass {
    Car,
    Van,
    Truck,
    Pedestrian,
    PersonSitting,
    Cyclist,
    Tram,
    Misc,
    DontCare,
}

/// The eight trainable classes (everything but DontCare), in feature
/// one-hot order.
pub const TRAIN_CLASSES: [KittiClass; 8] = [
    KittiClass::Car,
    KittiClass::Van,
    KittiClass::Truck,
    KittiClass::Pedestrian,
    KittiClass::PersonSitting,
    KittiClass::Cyclist,
    KittiClass::Tram,
    KittiClass::Misc,
];

impl KittiClass {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "Car" => Self::Car,
            "Van" => Self::Van,
            "Truck" => Self::Truck,
            "Pedestrian" => Self::Pedestrian,
            "Person_sitting" => Self::PersonSitting,
            "Cyclist" => Self::Cyclist,
            "Tram" => Self::Tram,
            "Misc" => Self::Misc,
            "DontCare" => Self::DontCare,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Car => "Car",
            Self::Van => "Van",
            Self::Truck => "Truck",
            Self::Pedestrian => "Pedestrian",
            Self::PersonSitting => "Person_sitting",
            Self::Cyclist => "Cyclist",
            Self::Tram => "Tram",
            Self::Misc => "Misc",
            Self::DontCare => "DontCare",
        }
    }

    /// Index into the one-hot block; DontCare has none.
    pub fn one_hot_index(self) -> Option<usize> {
        TRAIN_CLASSES.iter().position(|&c| c == self)
    }
}

impl fmt::Display for KittiClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Axis-aligned pixel box, (left, top) inclusive towards (right, bottom).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl BBox {
    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Self {
            left,
            top,
            right,
            bottom,
        }
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.left + self.right) / 2.0,
            (self.top + self.bottom) / 2.0,
        )
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn is_valid(&self) -> bool {
        self.right > self.left && self.bottom > self.top
    }

    pub fn clamped(&self, width_px: f64, height_px: f64) -> Self {
        Self {
            left: self.left.clamp(0.0, width_px),
            top: self.top.clamp(0.0, height_px),
            right: self.right.clamp(0.0, width_px),
            bottom: self.bottom.clamp(0.0, height_px),
        }
    }
}

/// How per-object distance is derived from the 3D camera-frame location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMode {
    /// Forward (z) coordinate; signed, so the "< 0 m" preprocessing rule
    /// is meaningful.
    #[default]
    ZAxis,
    Euclidean,
}

pub fn derive_distance(location: (f64, f64, f64), mode: DistanceMode) -> f64 {
    match mode {
        DistanceMode::ZAxis => location.2,
        DistanceMode::Euclidean => {
            (location.0 * location.0 + location.1 * location.1 + location.2 * location.2).sqrt()
        }
    }
}

/// One parsed KITTI annotation plus its derived distance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub class_name: KittiClass,
    pub truncated: f64,
    pub occluded: i32,
    /// Allocentric orientation, radians in [-pi, pi].
    pub alpha: f64,
    pub box2d: BBox,
    /// (height, width, length) in meters.
    pub dims3d: (f64, f64, f64),
    /// (x, y, z) camera coordinates in meters.
    pub location: (f64, f64, f64),
    pub rotation_y: f64,
    /// Derived; clipped to [0, 150] only by [`preprocess`].
    pub distance: f64,
}

impl LabelRecord {
    /// Serializes back to the 15-field line format (2 decimals, as in the
    /// KITTI distribution).
    pub fn to_line(&self) -> String {
        format!(
            "{} {:.2} {} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}",
            self.class_name.name(),
            self.truncated,
            self.occluded,
            self.alpha,
            self.box2d.left,
            self.box2d.top,
            self.box2d.right,
            self.box2d.bottom,
            self.dims3d.0,
            self.dims3d.1,
            self.dims3d.2,
            self.location.0,
            self.location.1,
            self.location.2,
            self.rotation_y,
        )
    }
}

/// Parses one 15-field label line. `line_no` is 1-based and only used for
/// error reporting. Distance is derived in the given mode.
pub fn parse_label_line(
    text: &str,
    line_no: usize,
    mode: DistanceMode,
) -> Result<LabelRecord, KittiError> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 15 {
        return Err(KittiError::FieldCount {
            line: line_no,
            count: fields.len(),
        });
    }
    let class_name = KittiClass::parse(fields[0]).ok_or_else(|| KittiError::UnknownClass {
        line: line_no,
        name: fields[0].to_string(),
    })?;
    let num = |idx: usize, field: &'static str| -> Result<f64, KittiError> {
        fields[idx].parse::<f64>().map_err(|_| KittiError::BadNumber {
            line: line_no,
            field,
            value: fields[idx].to_string(),
        })
    };
    let occluded = fields[2]
        .parse::<f64>()
        .map_err(|_| KittiError::BadNumber {
            line: line_no,
            field: "occluded",
            value: fields[2].to_string(),
        })? as i32;
    let location = (num(11, "x")?, num(12, "y")?, num(13, "z")?);
    Ok(LabelRecord {
        class_name,
        truncated: num(1, "truncated")?,
        occluded,
        alpha: num(3, "alpha")?,
        box2d: BBox::new(
            num(4, "left")?,
            num(5, "top")?,
            num(6, "right")?,
            num(7, "bottom")?,
        ),
        dims3d: (num(8, "height")?, num(9, "width")?, num(10, "length")?),
        location,
        rotation_y: num(14, "rotation_y")?,
        distance: derive_distance(location, mode),
    })
}

/// Parses a whole label file (one annotation per line, blank lines skipped).
pub fn parse_label_file(text: &str, mode: DistanceMode) -> Result<Vec<LabelRecord>, KittiError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_label_line(l, i + 1, mode))
        .collect()
}

pub fn load_label_file(path: &Path, mode: DistanceMode) -> Result<Vec<LabelRecord>, KittiError> {
    let text = fs::read_to_string(path).map_err(|source| KittiError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_label_file(&text, mode)
}

/// Applies the training preprocessing: drop DontCare, drop negative
/// distances, clip distance to 150 m. Order is preserved.
pub fn preprocess(records: Vec<LabelRecord>) -> Vec<LabelRecord> {
    records
        .into_iter()
        .filter(|r| r.class_name != KittiClass::DontCare && r.distance >= 0.0)
        .map(|mut r| {
            if r.distance > MAX_DISTANCE_M {
                r.distance = MAX_DISTANCE_M;
            }
            r
        })
        .collect()
}

/// One detector output row.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub image_id: String,
    pub class_name: KittiClass,
    pub confidence: f64,
    pub box2d: BBox,
}

pub const DETECTIONS_HEADER: &str = "image_id,class,confidence,left,top,right,bottom";

/// Parses the detections CSV, preserving file order.
pub fn parse_detections(text: &str) -> Result<Vec<DetectionRecord>, KittiError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| KittiError::BadHeader {
        expected: DETECTIONS_HEADER.to_string(),
        actual: String::new(),
    })?;
    if header.trim() != DETECTIONS_HEADER {
        return Err(KittiError::BadHeader {
            expected: DETECTIONS_HEADER.to_string(),
            actual: header.trim().to_string(),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let row = i; // 1-based data row number (header is line 0)
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(KittiError::BadDetectionRow {
                row,
                message: format!("expected 7 fields, got {}", fields.len()),
            });
        }
        let class_name = KittiClass::parse(fields[1]).ok_or_else(|| KittiError::BadDetectionRow {
            row,
            message: format!("unknown class {:?}", fields[1]),
        })?;
        if class_name == KittiClass::DontCare {
            return Err(KittiError::BadDetectionRow {
                row,
                message: "DontCare is not a detector class".into(),
            });
        }
        let num = |idx: usize, what: &str| -> Result<f64, KittiError> {
            fields[idx].parse::<f64>().map_err(|_| KittiError::BadDetectionRow {
                row,
                message: format!("unparseable {what}: {:?}", fields[idx]),
            })
        };
        let confidence = num(2, "confidence")?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(KittiError::BadDetectionRow {
                row,
                message: format!("confidence {confidence} outside [0, 1]"),
            });
        }
        let box2d = BBox::new(num(3, "left")?, num(4, "top")?, num(5, "right")?, num(6, "bottom")?);
        if !box2d.is_valid() {
            return Err(KittiError::BadDetectionRow {
                row,
                message: format!("degenerate box {box2d:?}"),
            });
        }
        out.push(DetectionRecord {
            image_id: fields[0].to_string(),
            class_name,
            confidence,
            box2d,
        });
    }
    Ok(out)
}

pub fn load_detections(path: &Path) -> Result<Vec<DetectionRecord>, KittiError> {
    let text = fs::read_to_string(path).map_err(|source| KittiError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_detections(&text)
}

pub fn detections_to_csv(records: &[DetectionRecord]) -> String {
    let mut out = String::from(DETECTIONS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{:.4},{:.2},{:.2},{:.2},{:.2}\n",
            r.image_id,
            r.class_name.name(),
            r.confidence,
            r.box2d.left,
            r.box2d.top,
            r.box2d.right,
            r.box2d.bottom
        ));
    }
    out
}

/// Image dimensions used as normalization denominators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageMeta {
    pub image_id: String,
    pub width_px: u32,
    pub height_px: u32,
}

pub const CROP_SIZE: usize = 32;

/// Clamps the box to the image, then bilinearly resizes the region to a
/// 3x32x32 crop (align-corners off). Input image is `[3, H, W]` in [0, 1].
pub fn extract_crop(image: &Tensor<f32>, box2d: &BBox) -> Result<Tensor<f32>, KittiError> {
    let shape = image.shape();
    assert_eq!(shape.len(), 3, "expected a [3, H, W] image tensor");
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let clamped = box2d.clamped(w as f64, h as f64);
    if clamped.area() <= 0.0 {
        return Err(KittiError::DegenerateBox);
    }
    let scale_x = clamped.width() / CROP_SIZE as f64;
    let scale_y = clamped.height() / CROP_SIZE as f64;
    let vals = image.values();
    let mut out = Tensor::zeros(&[c, CROP_SIZE, CROP_SIZE]);
    {
        let o = out.values_mut();
        for ci in 0..c {
            let chan = &vals[ci * h * w..(ci + 1) * h * w];
            for oy in 0..CROP_SIZE {
                let sy = clamped.top + (oy as f64 + 0.5) * scale_y - 0.5;
                let y0 = sy.floor();
                let fy = (sy - y0) as f32;
                let y0c = (y0 as i64).clamp(0, h as i64 - 1) as usize;
                let y1c = (y0 as i64 + 1).clamp(0, h as i64 - 1) as usize;
                for ox in 0..CROP_SIZE {
                    let sx = clamped.left + (ox as f64 + 0.5) * scale_x - 0.5;
                    let x0 = sx.floor();
                    let fx = (sx - x0) as f32;
                    let x0c = (x0 as i64).clamp(0, w as i64 - 1) as usize;
                    let x1c = (x0 as i64 + 1).clamp(0, w as i64 - 1) as usize;
                    let v00 = chan[y0c * w + x0c];
                    let v01 = chan[y0c * w + x1c];
                    let v10 = chan[y1c * w + x0c];
                    let v11 = chan[y1c * w + x1c];
                    let top = v00 + (v01 - v00) * fx;
                    let bot = v10 + (v11 - v10) * fx;
                    o[(ci * CROP_SIZE + oy) * CROP_SIZE + ox] = top + (bot - top) * fy;
                }
            }
        }
    }
    Ok(out)
}

/// Reads an 8-bit picture file into a `[3, H, W]` tensor normalized by 255.
pub fn load_image(path: &Path, image_id: &str) -> Result<(Tensor<f32>, ImageMeta), KittiError> {
    let img = image::open(path)
        .map_err(|e| KittiError::BadImage {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut t = Tensor::zeros(&[3, h as usize, w as usize]);
    {
        let vals = t.values_mut();
        let plane = (h * w) as usize;
        for (i, px) in img.pixels().enumerate() {
            vals[i] = f32::from(px.0[0]) / 255.0;
            vals[plane + i] = f32::from(px.0[1]) / 255.0;
            vals[2 * plane + i] = f32::from(px.0[2]) / 255.0;
        }
    }
    Ok((
        t,
        ImageMeta {
            image_id: image_id.to_string(),
            width_px: w,
            height_px: h,
        },
    ))
}

/// Writes a `[3, H, W]` tensor in [0, 1] as an 8-bit RGB PNG.
pub fn save_image(tensor: &Tensor<f32>, path: &Path) -> Result<(), KittiError> {
    let shape = tensor.shape();
    assert_eq!(shape.len(), 3, "expected a [3, H, W] image tensor");
    let (h, w) = (shape[1] as u32, shape[2] as u32);
    let plane = (h * w) as usize;
    let vals = tensor.values();
    let img = image::RgbImage::from_fn(w, h, |x, y| {
        let i = (y * w + x) as usize;
        let px = |c: usize| (vals[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    });
    img.save(path).map_err(|e| KittiError::BadImage {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Reads a newline-separated list of image ids.
pub fn load_split(path: &Path) -> Result<Vec<String>, KittiError> {
    let text = fs::read_to_string(path).map_err(|source| KittiError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAR_LINE: &str =
        "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59";
    const DONTCARE_LINE: &str =
        "DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10";

    #[test]
    fn parses_car_line() {
        let r = parse_label_line(CAR_LINE, 1, DistanceMode::ZAxis).unwrap();
        assert_eq!(r.class_name, KittiClass::Car);
        assert_eq!(r.alpha, -1.58);
        assert_eq!(r.location.2, 46.70);
        assert_eq!(r.distance, 46.70);
        assert_eq!(r.box2d, BBox::new(587.01, 173.33, 614.12, 200.12));
    }

    #[test]
    fn parses_dontcare_and_preprocess_drops_it() {
        let r = parse_label_line(DONTCARE_LINE, 1, DistanceMode::ZAxis).unwrap();
        assert_eq!(r.class_name, KittiClass::DontCare);
        assert!(preprocess(vec![r]).is_empty());
    }

    #[test]
    fn wrong_arity_is_error() {
        let short = CAR_LINE.rsplit_once(' ').unwrap().0;
        assert!(matches!(
            parse_label_line(short, 3, DistanceMode::ZAxis),
            Err(KittiError::FieldCount { line: 3, count: 14 })
        ));
    }

    #[test]
    fn unknown_class_is_error() {
        let bad = CAR_LINE.replacen("Car", "Bus", 1);
        assert!(matches!(
            parse_label_line(&bad, 1, DistanceMode::ZAxis),
            Err(KittiError::UnknownClass { .. })
        ));
    }

    #[test]
    fn distance_modes() {
        assert_eq!(derive_distance((0.0, 0.0, 10.0), DistanceMode::ZAxis), 10.0);
        assert_eq!(
            derive_distance((3.0, 4.0, 0.0), DistanceMode::Euclidean),
            5.0
        );
        assert_eq!(derive_distance((0.0, 0.0, -2.0), DistanceMode::ZAxis), -2.0);
    }

    #[test]
    fn preprocess_rules() {
        let mut neg = parse_label_line(CAR_LINE, 1, DistanceMode::ZAxis).unwrap();
        neg.distance = -1.0;
        let mut far = neg.clone();
        far.distance = 180.0;
        let keep = parse_label_line(CAR_LINE, 1, DistanceMode::ZAxis).unwrap();
        let out = preprocess(vec![neg, far, keep.clone()]);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].distance, 150.0);
        assert_eq!(out[1], keep);
        assert!(preprocess(vec![]).is_empty());
    }

    #[test]
    fn preprocess_idempotent() {
        let records = parse_label_file(
            &format!("{CAR_LINE}\n{DONTCARE_LINE}\n"),
            DistanceMode::ZAxis,
        )
        .unwrap();
        let once = preprocess(records);
        let twice = preprocess(once.clone());
        assert_eq!(once, twice);
    }

    #[test]
    fn label_line_round_trips() {
        let r = parse_label_line(CAR_LINE, 1, DistanceMode::ZAxis).unwrap();
        let again = parse_label_line(&r.to_line(), 1, DistanceMode::ZAxis).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn detections_csv() {
        let text = format!(
            "{DETECTIONS_HEADER}\n000123,Car,0.91,100.0,120.5,180.0,200.0\n"
        );
        let dets = parse_detections(&text).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].image_id, "000123");
        assert_eq!(dets[0].confidence, 0.91);

        let bad = format!("{DETECTIONS_HEADER}\n000123,Car,1.5,100,120,180,200\n");
        assert!(matches!(
            parse_detections(&bad),
            Err(KittiError::BadDetectionRow { row: 1, .. })
        ));

        let empty = format!("{DETECTIONS_HEADER}\n");
        assert!(parse_detections(&empty).unwrap().is_empty());
    }

    #[test]
    fn detections_round_trip() {
        let text = format!(
            "{DETECTIONS_HEADER}\n000001,Car,0.9000,10.00,20.00,30.00,40.00\n000002,Pedestrian,0.5500,5.00,5.00,9.00,19.00\n"
        );
        let dets = parse_detections(&text).unwrap();
        assert_eq!(detections_to_csv(&dets), text);
    }

    #[test]
    fn crop_constant_image() {
        let img = Tensor::filled(&[3, 40, 60], 0.7f32);
        let crop = extract_crop(&img, &BBox::new(5.0, 5.0, 25.0, 30.0)).unwrap();
        assert_eq!(crop.shape(), &[3, 32, 32]);
        assert!(crop.values().iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn crop_full_32_image_is_identity() {
        // Scale 1 maps output pixels exactly onto input pixels.
        let img = Tensor::from_fn(&[3, 32, 32], |i| (i % 97) as f32 / 97.0);
        let crop = extract_crop(&img, &BBox::new(0.0, 0.0, 32.0, 32.0)).unwrap();
        assert_eq!(crop.values(), img.values());
    }

    #[test]
    fn crop_clamps_out_of_bounds_box() {
        let img = Tensor::from_fn(&[3, 20, 20], |i| ((i * 31) % 113) as f32 / 113.0);
        let half_out = extract_crop(&img, &BBox::new(-10.0, 4.0, 10.0, 16.0)).unwrap();
        let pre_clamped = extract_crop(&img, &BBox::new(0.0, 4.0, 10.0, 16.0)).unwrap();
        assert_eq!(half_out.values(), pre_clamped.values());
    }

    #[test]
    fn crop_fully_outside_is_degenerate() {
        let img = Tensor::filled(&[3, 20, 20], 0.5f32);
        assert!(matches!(
            extract_crop(&img, &BBox::new(30.0, 30.0, 40.0, 40.0)),
            Err(KittiError::DegenerateBox)
        ));
    }

    #[test]
    fn crop_values_stay_in_unit_range() {
        let img = Tensor::from_fn(&[3, 16, 16], |i| ((i * 7) % 11) as f32 / 10.0);
        let crop = extract_crop(&img, &BBox::new(1.3, 2.7, 14.2, 15.9)).unwrap();
        assert!(crop.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
