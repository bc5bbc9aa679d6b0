//! Pose-keypoint ingestion and conversion of each frame into a binary
//! skeleton image: neck-centred rasterization onto a 480x480 canvas,
//! bilinear downscaling to 28x28, then thresholding.

mod parse;
mod raster;
mod topology;

pub use parse::{frame_to_json, parse_keypoint_record, parse_keypoint_stream, FrameRecord, ParseReport};
pub use raster::{
    binarize, rasterize_neck_centered, resize_bilinear, resize_canvas, GrayImage, RasterCanvas, CANVAS_CENTER,
    CANVAS_SIDE,
};
pub use topology::LimbTopology;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of body keypoints in the BODY_25 layout.
pub const KEYPOINT_COUNT: usize = 25;
/// Index of the neck keypoint in BODY_25.
pub const NECK: usize = 1;
/// Side length of a skeleton image.
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Zero marks an undetected keypoint whose position is meaningless.
    pub confidence: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Self { x, y, confidence }
    }

    pub fn detected(&self) -> bool {
        self.confidence > 0.0
    }
}

/// One frame's 25 keypoints for a single person.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointFrame {
    pub frame_index: u64,
    pub segment_id: String,
    pub keypoints: [Keypoint; KEYPOINT_COUNT],
}

impl KeypointFrame {
    pub fn neck(&self) -> Option<(f64, f64)> {
        let k = self.keypoints[NECK];
        k.detected().then_some((k.x, k.y))
    }

    /// Shifts every keypoint, detected or not, by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut out = self.clone();
        for k in &mut out.keypoints {
            k.x += dx;
            k.y += dy;
        }
        out
    }
}

/// A strictly binary 28x28 image (row-major, one byte per pixel, each 0 or 1).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SkeletonImage {
    pub frame_index: u64,
    pub segment_id: String,
    pixels: Vec<u8>,
}

impl SkeletonImage {
    pub fn new(segment_id: impl Into<String>, frame_index: u64, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != IMAGE_PIXELS {
            return Err(Error::Validation(format!(
                "skeleton image needs {IMAGE_PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|&&p| p > 1) {
            return Err(Error::Validation(format!("skeleton image pixel value {p} is not binary")));
        }
        Ok(Self {
            frame_index,
            segment_id: segment_id.into(),
            pixels,
        })
    }

    pub fn blank(segment_id: impl Into<String>, frame_index: u64) -> Self {
        Self {
            frame_index,
            segment_id: segment_id.into(),
            pixels: vec![0; IMAGE_PIXELS],
        }
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * IMAGE_SIDE + col]
    }

    pub fn count_ones(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 1).count()
    }
}

/// Why a frame produced no skeleton image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// The pose estimator found nobody.
    EmptyFrame,
    /// The neck was undetected and no earlier neck exists in the segment.
    MissingNeck,
}

/// Parameters of the keypoint-to-image chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Limb stroke width in canvas pixels.
    pub stroke_width: f64,
    /// Binarization threshold on the downscaled intensity.
    pub threshold: f64,
    /// Resolution of the frames the keypoints were detected in.
    pub source_width: u32,
    pub source_height: u32,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            stroke_width: 8.0,
            threshold: 0.2,
            source_width: 640,
            source_height: 480,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        if !(self.stroke_width > 0.0 && self.stroke_width.is_finite()) {
            return Err(Error::Config(format!("stroke width must be positive, got {}", self.stroke_width)));
        }
        if self.source_width == 0 || self.source_height == 0 {
            return Err(Error::Config("source resolution must be non-zero".into()));
        }
        Ok(())
    }
}

/// Runs rasterize, resize and binarize on one record. `fallback_neck` is used
/// when the neck itself is undetected.
pub fn preprocess_frame(
    record: &FrameRecord,
    config: &PreprocessConfig,
    topology: &LimbTopology,
    fallback_neck: Option<(f64, f64)>,
) -> std::result::Result<SkeletonImage, SkipReason> {
    let frame = match record {
        FrameRecord::Detected(frame) => frame,
        FrameRecord::Empty { .. } => return Err(SkipReason::EmptyFrame),
    };
    let canvas = rasterize_neck_centered(frame, topology, config.stroke_width, fallback_neck)?;
    let gray = resize_canvas(&canvas);
    Ok(SkeletonImage {
        frame_index: frame.frame_index,
        segment_id: frame.segment_id.clone(),
        pixels: binarize(&gray, config.threshold),
    })
}

/// A frame that was dropped during preprocessing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedFrame {
    pub segment_id: String,
    pub frame_index: u64,
    pub reason: SkipReason,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PreprocessReport {
    pub skipped: Vec<SkippedFrame>,
    /// Frames whose neck was undetected and replaced by the segment's last neck.
    pub reused_neck: usize,
}

/// Preprocesses records in order, applying the missing-neck policy: an
/// undetected neck is replaced by the most recent neck seen in the same
/// segment, and the frame is skipped when there is none.
pub fn preprocess_records(
    records: &[FrameRecord],
    config: &PreprocessConfig,
    topology: &LimbTopology,
) -> (Vec<SkeletonImage>, PreprocessReport) {
    let mut last_neck: HashMap<&str, (f64, f64)> = HashMap::new();
    let mut report = PreprocessReport::default();
    let mut images = Vec::with_capacity(records.len());
    for record in records {
        let fallback = match record {
            FrameRecord::Detected(f) => match f.neck() {
                Some(neck) => {
                    last_neck.insert(f.segment_id.as_str(), neck);
                    None
                }
                None => {
                    let prev = last_neck.get(f.segment_id.as_str()).copied();
                    if prev.is_some() {
                        report.reused_neck += 1;
                    }
                    prev
                }
            },
            FrameRecord::Empty { .. } => None,
        };
        match preprocess_frame(record, config, topology, fallback) {
            Ok(img) => images.push(img),
            Err(reason) => report.skipped.push(SkippedFrame {
                segment_id: record.segment_id().to_string(),
                frame_index: record.frame_index(),
                reason,
            }),
        }
    }
    (images, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn frame_with(points: &[(usize, f64, f64)]) -> KeypointFrame {
        let mut keypoints = [Keypoint::default(); KEYPOINT_COUNT];
        for &(i, x, y) in points {
            keypoints[i] = Keypoint::new(x, y, 0.9);
        }
        KeypointFrame {
            frame_index: 0,
            segment_id: "s".into(),
            keypoints,
        }
    }

    #[test]
    fn skeleton_image_rejects_non_binary() {
        assert!(SkeletonImage::new("s", 0, vec![0; IMAGE_PIXELS]).is_ok());
        let mut px = vec![0; IMAGE_PIXELS];
        px[3] = 2;
        assert!(SkeletonImage::new("s", 0, px).is_err());
        assert!(SkeletonImage::new("s", 0, vec![0; 10]).is_err());
    }

    #[test]
    fn empty_frame_is_skipped() {
        let rec = FrameRecord::Empty {
            frame_index: 4,
            segment_id: "a".into(),
        };
        let out = preprocess_frame(&rec, &PreprocessConfig::default(), &LimbTopology::body25(), None);
        assert_eq!(out, Err(SkipReason::EmptyFrame));
    }

    #[test]
    fn missing_neck_reuses_previous_then_skips_at_segment_start() {
        let topo = LimbTopology::body25();
        let cfg = PreprocessConfig::default();
        let mut with_neck = frame_with(&[(1, 300.0, 200.0), (8, 300.0, 290.0), (2, 280.0, 205.0), (3, 270.0, 250.0)]);
        let mut no_neck = with_neck.clone();
        no_neck.keypoints[NECK].confidence = 0.0;
        no_neck.frame_index = 1;
        let mut orphan = no_neck.clone();
        orphan.segment_id = "other".into();
        with_neck.frame_index = 0;
        let records = vec![
            FrameRecord::Detected(with_neck),
            FrameRecord::Detected(no_neck),
            FrameRecord::Detected(orphan),
        ];
        let (images, report) = preprocess_records(&records, &cfg, &topo);
        assert_eq!(images.len(), 2);
        assert_eq!(report.reused_neck, 1);
        assert_eq!(
            report.skipped,
            vec![SkippedFrame {
                segment_id: "other".into(),
                frame_index: 1,
                reason: SkipReason::MissingNeck
            }]
        );
        // limb (2,3) is still drawable around the reused neck
        assert!(images[1].count_ones() > 0);
    }

    #[test]
    fn config_validation() {
        assert!(PreprocessConfig::default().validate().is_ok());
        let bad = PreprocessConfig {
            threshold: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
