//! Sliding windows over skeleton images, window labels, and the bit-packed
//! dataset file format.
//!
//! File layout (little-endian throughout):
//!
//! ```text
//! magic "SSMAPv01" | T u32 | H u32 | W u32 | count u64 | flags u8
//! count x { segment_len u16 | segment utf-8 | start_frame u64 | [label u8] | T x 98 packed bytes }
//! crc32 u32 over every preceding byte
//! ```
//!
//! Flag bit 0 marks a labeled file, bit 1 a per-frame file (T = 1). Pixel `i`
//! of a frame is bit `i % 8` of byte `i / 8`.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::poseio::{SkeletonImage, IMAGE_PIXELS, IMAGE_SIDE};

pub const DATASET_MAGIC: &[u8; 8] = b"SSMAPv01";
/// Bytes per bit-packed 28x28 frame.
pub const PACKED_FRAME_BYTES: usize = IMAGE_PIXELS.div_ceil(8);

const FLAG_LABELED: u8 = 1;
const FLAG_FRAMES: u8 = 2;
const HEADER_BYTES: usize = 8 + 4 * 3 + 8 + 1;

/// Sliding-window geometry. The stride is fixed at one frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub length: usize,
}

impl WindowSpec {
    pub const STRIDE: usize = 1;

    pub fn new(length: usize) -> Result<Self> {
        let spec = Self { length };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::Config(format!("window length must be at least 2, got {}", self.length)));
        }
        Ok(())
    }
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { length: 30 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
        }
    }

    pub fn is_abnormal(self) -> bool {
        self == Label::Abnormal
    }
}

/// Inclusive range of abnormal frames within one segment.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbnormalRange {
    pub segment: String,
    pub first: u64,
    pub last: u64,
}

impl AbnormalRange {
    pub fn new(segment: impl Into<String>, first: u64, last: u64) -> Result<Self> {
        let r = Self {
            segment: segment.into(),
            first,
            last,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.first > self.last {
            return Err(Error::Validation(format!(
                "abnormal range {}..{} of segment {:?} is reversed",
                self.first, self.last, self.segment
            )));
        }
        Ok(())
    }

    pub fn contains(&self, segment: &str, frame: u64) -> bool {
        self.segment == segment && (self.first..=self.last).contains(&frame)
    }
}

/// Parses the JSON list `[{"segment": s, "first": int, "last": int}, ...]`.
pub fn parse_ranges(text: &str) -> Result<Vec<AbnormalRange>> {
    let ranges: Vec<AbnormalRange> = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: format!("abnormal ranges line {}, column {}", e.line(), e.column()),
        detail: e.to_string(),
    })?;
    for r in &ranges {
        r.validate()?;
    }
    Ok(ranges)
}

pub fn ranges_to_json(ranges: &[AbnormalRange]) -> String {
    serde_json::to_string_pretty(ranges).expect("ranges serialize")
}

/// `true` when `frame` of `segment` lies inside any range.
pub fn frame_is_abnormal(ranges: &[AbnormalRange], segment: &str, frame: u64) -> bool {
    ranges.iter().any(|r| r.contains(segment, frame))
}

/// `T` consecutive skeleton frames of one segment.
///
/// Windows built from one run share a single pixel buffer, so adjacent
/// windows cost no extra memory.
#[derive(Clone, Debug)]
pub struct SequentialSkeletonMap {
    segment_id: String,
    start_frame: u64,
    length: usize,
    buffer: Arc<[u8]>,
    offset: usize,
}

impl SequentialSkeletonMap {
    /// Builds a window from `length` frames laid out back to back in `pixels`.
    pub fn new(segment_id: impl Into<String>, start_frame: u64, length: usize, pixels: Vec<u8>) -> Result<Self> {
        if length == 0 || pixels.len() != length * IMAGE_PIXELS {
            return Err(Error::Validation(format!(
                "window of {length} frames needs {} pixels, got {}",
                length * IMAGE_PIXELS,
                pixels.len()
            )));
        }
        if pixels.iter().any(|&p| p > 1) {
            return Err(Error::Validation("window pixels must be binary".into()));
        }
        Ok(Self {
            segment_id: segment_id.into(),
            start_frame,
            length,
            buffer: pixels.into(),
            offset: 0,
        })
    }

    pub fn segment_id(&self) -> &str {
        &self.segment_id
    }

    pub fn start_frame(&self) -> u64 {
        self.start_frame
    }

    pub fn end_frame(&self) -> u64 {
        self.start_frame + self.length as u64 - 1
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    /// All frames back to back, `len() * 784` bytes.
    pub fn pixels(&self) -> &[u8] {
        &self.buffer[self.offset..self.offset + self.length * IMAGE_PIXELS]
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        &self.pixels()[t * IMAGE_PIXELS..(t + 1) * IMAGE_PIXELS]
    }

    pub fn to_images(&self) -> Vec<SkeletonImage> {
        (0..self.length)
            .map(|t| {
                SkeletonImage::new(self.segment_id.clone(), self.start_frame + t as u64, self.frame(t).to_vec())
                    .expect("window frames are binary")
            })
            .collect()
    }
}

impl PartialEq for SequentialSkeletonMap {
    fn eq(&self, other: &Self) -> bool {
        self.segment_id == other.segment_id
            && self.start_frame == other.start_frame
            && self.length == other.length
            && self.pixels() == other.pixels()
    }
}

impl Eq for SequentialSkeletonMap {}

/// Sorts images by `(segment, frame)` and splits them into maximal runs of
/// consecutive frames.
fn runs(images: &[SkeletonImage]) -> Vec<Vec<&SkeletonImage>> {
    let mut sorted: Vec<&SkeletonImage> = images.iter().collect();
    sorted.sort_by(|a, b| (&a.segment_id, a.frame_index).cmp(&(&b.segment_id, b.frame_index)));
    let mut out: Vec<Vec<&SkeletonImage>> = Vec::new();
    for img in sorted {
        match out.last_mut() {
            Some(run)
                if run.last().is_some_and(|p| {
                    p.segment_id == img.segment_id && p.frame_index.checked_add(1) == Some(img.frame_index)
                }) =>
            {
                run.push(img)
            }
            _ => out.push(vec![img]),
        }
    }
    out
}

/// Stride-1 windows within every maximal run of consecutive frames of one
/// segment. A run of `N` frames yields `max(0, N - T + 1)` windows; windows
/// never cross a segment boundary or a frame gap.
pub fn build_windows(images: &[SkeletonImage], spec: WindowSpec) -> Vec<SequentialSkeletonMap> {
    let t = spec.length.max(1);
    let mut windows = Vec::new();
    for run in runs(images) {
        if run.len() < t {
            continue;
        }
        let mut buf = Vec::with_capacity(run.len() * IMAGE_PIXELS);
        for img in &run {
            buf.extend_from_slice(img.pixels());
        }
        let buffer: Arc<[u8]> = buf.into();
        for (i, first) in run.iter().enumerate().take(run.len() - t + 1) {
            windows.push(SequentialSkeletonMap {
                segment_id: first.segment_id.clone(),
                start_frame: first.frame_index,
                length: t,
                buffer: Arc::clone(&buffer),
                offset: i * IMAGE_PIXELS,
            });
        }
    }
    windows
}

/// Single-frame windows, the input unit of the per-frame baselines.
pub fn frame_windows(images: &[SkeletonImage]) -> Vec<SequentialSkeletonMap> {
    let mut sorted: Vec<&SkeletonImage> = images.iter().collect();
    sorted.sort_by(|a, b| (&a.segment_id, a.frame_index).cmp(&(&b.segment_id, b.frame_index)));
    sorted
        .into_iter()
        .map(|img| SequentialSkeletonMap {
            segment_id: img.segment_id.clone(),
            start_frame: img.frame_index,
            length: 1,
            buffer: img.pixels().into(),
            offset: 0,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledWindow {
    pub window: SequentialSkeletonMap,
    pub label: Label,
}

/// Labels a window abnormal iff its last frame lies in an abnormal range of
/// its segment. Ranges naming a segment absent from `windows` are rejected.
pub fn label_windows(windows: &[SequentialSkeletonMap], ranges: &[AbnormalRange]) -> Result<Vec<LabeledWindow>> {
    let known: HashSet<&str> = windows.iter().map(|w| w.segment_id()).collect();
    for r in ranges {
        r.validate()?;
        if !known.contains(r.segment.as_str()) {
            return Err(Error::Validation(format!("abnormal range names unknown segment {:?}", r.segment)));
        }
    }
    Ok(windows
        .iter()
        .map(|w| LabeledWindow {
            window: w.clone(),
            label: if frame_is_abnormal(ranges, w.segment_id(), w.end_frame()) {
                Label::Abnormal
            } else {
                Label::Normal
            },
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    /// One skeleton image per record.
    Frames,
    /// One sequential skeleton map per record.
    Windows,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetRecord {
    pub window: SequentialSkeletonMap,
    pub label: Option<Label>,
}

/// A homogeneous collection of windows (or single frames), all labeled or
/// all unlabeled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    kind: DatasetKind,
    window_len: usize,
    records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn new(kind: DatasetKind, window_len: usize, records: Vec<DatasetRecord>) -> Result<Self> {
        if kind == DatasetKind::Frames && window_len != 1 {
            return Err(Error::Validation(format!("a frame dataset has window length 1, not {window_len}")));
        }
        if kind == DatasetKind::Windows && window_len < 2 {
            return Err(Error::Validation(format!("window length must be at least 2, got {window_len}")));
        }
        if let Some(r) = records.iter().find(|r| r.window.len() != window_len) {
            return Err(Error::Validation(format!(
                "record at {}:{} has {} frames, dataset expects {window_len}",
                r.window.segment_id(),
                r.window.start_frame(),
                r.window.len()
            )));
        }
        if let Some(first) = records.first() {
            let labeled = first.label.is_some();
            if records.iter().any(|r| r.label.is_some() != labeled) {
                return Err(Error::Validation("records must be all labeled or all unlabeled".into()));
            }
        }
        if let Some(r) = records.iter().find(|r| r.window.segment_id().len() > u16::MAX as usize) {
            return Err(Error::Validation(format!("segment id of {} bytes is too long", r.window.segment_id().len())));
        }
        Ok(Self {
            kind,
            window_len,
            records,
        })
    }

    pub fn from_windows(windows: Vec<SequentialSkeletonMap>, window_len: usize) -> Result<Self> {
        let records = windows.into_iter().map(|window| DatasetRecord { window, label: None }).collect();
        Self::new(DatasetKind::Windows, window_len, records)
    }

    pub fn from_labeled(windows: Vec<LabeledWindow>, window_len: usize) -> Result<Self> {
        let records = windows
            .into_iter()
            .map(|w| DatasetRecord {
                window: w.window,
                label: Some(w.label),
            })
            .collect();
        Self::new(DatasetKind::Windows, window_len, records)
    }

    /// A per-frame dataset, labeled from `ranges` when given.
    pub fn from_frames(images: &[SkeletonImage], ranges: Option<&[AbnormalRange]>) -> Result<Self> {
        let windows = frame_windows(images);
        let records = match ranges {
            Some(ranges) => label_windows(&windows, ranges)?
                .into_iter()
                .map(|w| DatasetRecord {
                    window: w.window,
                    label: Some(w.label),
                })
                .collect(),
            None => windows.into_iter().map(|window| DatasetRecord { window, label: None }).collect(),
        };
        Self::new(DatasetKind::Frames, 1, records)
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.records.first().is_some_and(|r| r.label.is_some())
    }

    pub fn windows(&self) -> impl Iterator<Item = &SequentialSkeletonMap> {
        self.records.iter().map(|r| &r.window)
    }

    /// Record count per segment, in segment order.
    pub fn segment_counts(&self) -> BTreeMap<&str, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.window.segment_id()).or_insert(0) += 1;
        }
        out
    }

    pub fn abnormal_count(&self) -> usize {
        self.records.iter().filter(|r| r.label == Some(Label::Abnormal)).count()
    }

    /// Keeps only the records labeled normal, or everything when unlabeled.
    pub fn normal_only(&self) -> Self {
        Self {
            kind: self.kind,
            window_len: self.window_len,
            records: self
                .records
                .iter()
                .filter(|r| r.label != Some(Label::Abnormal))
                .cloned()
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let labeled = self.is_labeled();
        let per_record = self.window_len * PACKED_FRAME_BYTES + 8 + 2 + 1;
        let mut out = Vec::with_capacity(HEADER_BYTES + self.records.len() * (per_record + 16) + 4);
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&(self.window_len as u32).to_le_bytes());
        out.extend_from_slice(&(IMAGE_SIDE as u32).to_le_bytes());
        out.extend_from_slice(&(IMAGE_SIDE as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        let mut flags = 0;
        if labeled {
            flags |= FLAG_LABELED;
        }
        if self.kind == DatasetKind::Frames {
            flags |= FLAG_FRAMES;
        }
        out.push(flags);
        for r in &self.records {
            let seg = r.window.segment_id().as_bytes();
            out.extend_from_slice(&(seg.len() as u16).to_le_bytes());
            out.extend_from_slice(seg);
            out.extend_from_slice(&r.window.start_frame().to_le_bytes());
            if let Some(label) = r.label {
                out.push(u8::from(label.is_abnormal()));
            }
            for t in 0..r.window.len() {
                pack_frame(r.window.frame(t), &mut out);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..5] != b"SSMAP" {
            return Err(Error::Format("not a skeleton-map dataset (bad magic)".into()));
        }
        if &bytes[..8] != DATASET_MAGIC {
            return Err(Error::Format(format!(
                "unsupported dataset version {:?}",
                String::from_utf8_lossy(&bytes[5..8])
            )));
        }
        if bytes.len() < HEADER_BYTES + 4 {
            return Err(Error::Format(format!("dataset truncated: {} bytes is shorter than the header", bytes.len())));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::Format(format!(
                "dataset checksum mismatch (stored {stored:08x}, computed {actual:08x}); file is truncated or corrupt"
            )));
        }
        let mut rd = Reader::new(body);
        rd.take(8)?;
        let t = rd.u32()? as usize;
        let (h, w) = (rd.u32()? as usize, rd.u32()? as usize);
        if (h, w) != (IMAGE_SIDE, IMAGE_SIDE) {
            return Err(Error::Format(format!("frames are {h}x{w}, expected {IMAGE_SIDE}x{IMAGE_SIDE}")));
        }
        let count = rd.u64()?;
        let flags = rd.u8()?;
        if flags & !(FLAG_LABELED | FLAG_FRAMES) != 0 {
            return Err(Error::Format(format!("unknown dataset flags {flags:#04x}")));
        }
        let labeled = flags & FLAG_LABELED != 0;
        let kind = if flags & FLAG_FRAMES != 0 {
            DatasetKind::Frames
        } else {
            DatasetKind::Windows
        };
        if t == 0 {
            return Err(Error::Format("window length 0".into()));
        }
        let min_record = 2 + 8 + usize::from(labeled) + t * PACKED_FRAME_BYTES;
        if count > (rd.remaining() / min_record) as u64 {
            return Err(Error::Format(format!("header claims {count} records but the file is too short")));
        }
        let mut records = Vec::with_capacity(count as usize);
        for i in 0..count {
            let seg_len = rd.u16()? as usize;
            let segment = std::str::from_utf8(rd.take(seg_len)?)
                .map_err(|_| Error::Format(format!("record {i}: segment id is not UTF-8")))?
                .to_string();
            let start = rd.u64()?;
            let label = if labeled {
                Some(match rd.u8()? {
                    0 => Label::Normal,
                    1 => Label::Abnormal,
                    v => return Err(Error::Format(format!("record {i}: label byte {v}"))),
                })
            } else {
                None
            };
            let mut pixels = Vec::with_capacity(t * IMAGE_PIXELS);
            for _ in 0..t {
                unpack_frame(rd.take(PACKED_FRAME_BYTES)?, &mut pixels);
            }
            records.push(DatasetRecord {
                window: SequentialSkeletonMap::new(segment, start, t, pixels)?,
                label,
            });
        }
        if rd.remaining() != 0 {
            return Err(Error::Format(format!("{} unexpected trailing bytes", rd.remaining())));
        }
        Self::new(kind, t, records).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = crate::io::read_bytes(path)?;
        Self::from_bytes(&bytes)
    }
}

fn pack_frame(pixels: &[u8], out: &mut Vec<u8>) {
    for chunk in pixels.chunks(8) {
        let mut byte = 0u8;
        for (bit, &p) in chunk.iter().enumerate() {
            byte |= (p & 1) << bit;
        }
        out.push(byte);
    }
}

fn unpack_frame(bytes: &[u8], out: &mut Vec<u8>) {
    for i in 0..IMAGE_PIXELS {
        out.push((bytes[i / 8] >> (i % 8)) & 1);
    }
}

/// Bounds-checked little-endian cursor.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format(format!(
                "unexpected end of data at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
