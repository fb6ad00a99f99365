//! Detection post-processing: keep the largest detected box, black out
//! everything else, and resize each frame with area averaging.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundingBox, Detection, Frame, VideoClip, BLACK};

pub const DEFAULT_TARGET_SIZE: (usize, usize) = (224, 224);

/// What to do with a frame for which the detector reported nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoDetectionPolicy {
    /// Resize the unmasked frame.
    #[default]
    Passthrough,
    /// Emit an all-black frame.
    Blackout,
    /// Drop the frame from the output clip.
    SkipFrame,
}

impl FromStr for NoDetectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "passthrough" => Ok(Self::Passthrough),
            "blackout" => Ok(Self::Blackout),
            "skip_frame" | "skip-frame" => Ok(Self::SkipFrame),
            other => Err(Error::arg(format!(
                "unknown no-detection policy `{other}` (expected passthrough, blackout or skip_frame)"
            ))),
        }
    }
}

impl fmt::Display for NoDetectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Passthrough => "passthrough",
            Self::Blackout => "blackout",
            Self::SkipFrame => "skip_frame",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskingConfig {
    target_size: (usize, usize),
    pub on_no_detection: NoDetectionPolicy,
}

impl MaskingConfig {
    pub fn new(target_size: (usize, usize), on_no_detection: NoDetectionPolicy) -> Result<Self> {
        if target_size.0 == 0 || target_size.1 == 0 {
            return Err(Error::arg(format!(
                "target size must be at least 1x1, got {}x{}",
                target_size.0, target_size.1
            )));
        }
        Ok(MaskingConfig {
            target_size,
            on_no_detection,
        })
    }

    /// `(width, height)` of every output frame.
    pub fn target_size(&self) -> (usize, usize) {
        self.target_size
    }
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig {
            target_size: DEFAULT_TARGET_SIZE,
            on_no_detection: NoDetectionPolicy::default(),
        }
    }
}

/// Per-pixel keep mask holding only 0 or 255.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        BinaryMask::from_values(width, height, vec![0; width * height])
    }

    pub fn from_values(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::arg(format!(
                "mask of {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|&&v| v != 0 && v != 255) {
            return Err(Error::arg(format!("mask value {v} is neither 0 nor 255")));
        }
        Ok(BinaryMask {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.values[i * self.width + j]
    }

    pub fn count_set(&self) -> usize {
        self.values.iter().filter(|&&v| v == 255).count()
    }
}

pub fn box_area(bbox: &BoundingBox) -> u64 {
    u64::from(bbox.x2() - bbox.x1()) * u64::from(bbox.y2() - bbox.y1())
}

/// Index of the detection with the largest box. A later box only replaces
/// the incumbent when strictly larger, so the earliest of equal-area boxes
/// wins.
pub fn select_largest_index(detections: &[Detection]) -> Option<usize> {
    let mut max_area = 0;
    let mut best = None;
    for (k, d) in detections.iter().enumerate() {
        let area = box_area(&d.bbox());
        if area > max_area {
            max_area = area;
            best = Some(k);
        }
    }
    best
}

pub fn select_largest(detections: &[Detection]) -> Option<BoundingBox> {
    select_largest_index(detections).map(|k| detections[k].bbox())
}

/// Filled rectangle mask: 255 inside the box (clamped to the frame), 0 elsewhere.
pub fn build_mask(width: usize, height: usize, bbox: &BoundingBox) -> Result<BinaryMask> {
    let mut mask = BinaryMask::zeros(width, height)?;
    if let Some(b) = bbox.clamp_to(width, height) {
        for i in b.y1() as usize..b.y2() as usize {
            let row = &mut mask.values[i * width..(i + 1) * width];
            row[b.x1() as usize..b.x2() as usize].fill(255);
        }
    }
    Ok(mask)
}

pub fn apply_mask(frame: &Frame, mask: &BinaryMask) -> Result<Frame> {
    if frame.dims() != (mask.width, mask.height) {
        return Err(Error::arg(format!(
            "mask is {}x{} but frame is {}x{}",
            mask.width,
            mask.height,
            frame.width(),
            frame.height()
        )));
    }
    let pixels = frame
        .pixels()
        .iter()
        .zip(&mask.values)
        .map(|(&px, &m)| if m == 255 { px } else { BLACK })
        .collect();
    Frame::new(frame.width(), frame.height(), pixels)
}

/// Sub-frame covered by `bbox` after clamping it to the frame.
pub fn crop(frame: &Frame, bbox: &BoundingBox) -> Result<Frame> {
    let b = bbox.clamp_to(frame.width(), frame.height()).ok_or_else(|| {
        Error::arg(format!(
            "box {:?} does not intersect the {}x{} frame",
            bbox.coords(),
            frame.width(),
            frame.height()
        ))
    })?;
    let (x1, y1) = (b.x1() as usize, b.y1() as usize);
    let (w, h) = ((b.x2() - b.x1()) as usize, (b.y2() - b.y1()) as usize);
    Ok(Frame::from_fn(w, h, |i, j| frame.at(y1 + i, x1 + j)))
}

/// Overlap weights of one output cell against the source cells along an
/// axis. Coordinates are scaled by `dst_len` so every overlap is an integer;
/// the weights of one output cell sum to `src_len`.
fn area_weights(src_len: usize, dst_len: usize) -> Vec<Vec<(usize, u64)>> {
    (0..dst_len)
        .map(|d| {
            let lo = d * src_len;
            let hi = (d + 1) * src_len;
            let first = lo / dst_len;
            let last = (hi - 1) / dst_len;
            (first..=last)
                .filter_map(|s| {
                    let s_lo = s * dst_len;
                    let s_hi = (s + 1) * dst_len;
                    let w = hi.min(s_hi).saturating_sub(lo.max(s_lo));
                    (w > 0).then_some((s, w as u64))
                })
                .collect()
        })
        .collect()
}

/// Area-averaging resize. Each output pixel is the overlap-weighted mean of
/// the source pixels under it, rounded half-up. All weights are exact
/// integers, so integer reductions yield exact block means.
pub fn resize_area(frame: &Frame, target: (usize, usize)) -> Result<Frame> {
    let (tw, th) = target;
    if tw == 0 || th == 0 {
        return Err(Error::arg(format!("resize target must be at least 1x1, got {tw}x{th}")));
    }
    if frame.dims() == target {
        return Ok(frame.clone());
    }
    let (sw, sh) = frame.dims();
    let wx = area_weights(sw, tw);
    let wy = area_weights(sh, th);
    let denom = (sw as u128) * (sh as u128);
    Ok(Frame::from_fn(tw, th, |i, j| {
        let mut acc = [0u128; 3];
        for &(si, wi) in &wy[i] {
            for &(sj, wj) in &wx[j] {
                let w = u128::from(wi * wj);
                let px = frame.at(si, sj);
                for c in 0..3 {
                    acc[c] += w * u128::from(px[c]);
                }
            }
        }
        acc.map(|a| ((2 * a + denom) / (2 * denom)).min(255) as u8)
    }))
}

/// What happened to one input frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReport {
    pub frame_index: usize,
    pub detections: usize,
    pub chosen: Option<[u32; 4]>,
    pub area: Option<u64>,
    pub conf: Option<f64>,
    pub cls: Option<i64>,
    /// Set when the no-detection policy was applied to this frame.
    pub policy: Option<NoDetectionPolicy>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcessReport {
    pub clip_id: String,
    pub frames: Vec<FrameReport>,
    pub passthrough: usize,
    pub blackout: usize,
    pub skipped: usize,
}

fn process_frame(
    frame: &Frame,
    detections: &[Detection],
    config: &MaskingConfig,
) -> Result<(Option<Frame>, Option<Detection>)> {
    let target = config.target_size();
    match select_largest_index(detections).map(|k| detections[k]) {
        Some(det) => {
            let mask = build_mask(frame.width(), frame.height(), &det.bbox())?;
            let masked = apply_mask(frame, &mask)?;
            Ok((Some(resize_area(&masked, target)?), Some(det)))
        }
        None => {
            let out = match config.on_no_detection {
                NoDetectionPolicy::Passthrough => Some(resize_area(frame, target)?),
                NoDetectionPolicy::Blackout => Some(Frame::filled(target.0, target.1, BLACK)?),
                NoDetectionPolicy::SkipFrame => None,
            };
            Ok((out, None))
        }
    }
}

/// Runs select-largest, mask, and resize over every frame of a clip.
/// `detections[k]` holds the detector output for frame `k`.
pub fn process_clip(
    clip: &VideoClip,
    detections: &[Vec<Detection>],
    config: &MaskingConfig,
) -> Result<(VideoClip, ProcessReport)> {
    if detections.len() != clip.frame_count() {
        return Err(Error::arg(format!(
            "clip {}: {} detection lists for {} frames",
            clip.clip_id(),
            detections.len(),
            clip.frame_count()
        )));
    }
    let results = clip
        .frames()
        .par_iter()
        .zip(detections.par_iter())
        .map(|(f, d)| process_frame(f, d, config))
        .collect::<Result<Vec<_>>>()?;

    let mut frames = Vec::with_capacity(results.len());
    let mut report = ProcessReport {
        clip_id: clip.clip_id().to_string(),
        frames: Vec::with_capacity(results.len()),
        passthrough: 0,
        blackout: 0,
        skipped: 0,
    };
    for (k, (out, chosen)) in results.into_iter().enumerate() {
        let policy = chosen.is_none().then_some(config.on_no_detection);
        match policy {
            Some(NoDetectionPolicy::Passthrough) => report.passthrough += 1,
            Some(NoDetectionPolicy::Blackout) => report.blackout += 1,
            Some(NoDetectionPolicy::SkipFrame) => report.skipped += 1,
            None => {}
        }
        report.frames.push(FrameReport {
            frame_index: k,
            detections: detections[k].len(),
            chosen: chosen.map(|d| d.bbox().coords()),
            area: chosen.map(|d| box_area(&d.bbox())),
            conf: chosen.map(|d| d.conf()),
            cls: chosen.map(|d| d.cls()),
            policy,
        });
        frames.extend(out);
    }
    if frames.is_empty() {
        return Err(Error::EmptyOutput);
    }
    let out = VideoClip::new(clip.clip_id(), clip.label(), clip.fps(), frames)?;
    Ok((out, report))
}

#[derive(Debug, Deserialize)]
struct RawDetection {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    conf: f64,
    cls: i64,
}

#[derive(Debug, Deserialize)]
struct RawFrameDetections {
    frame_index: usize,
    #[serde(default)]
    detections: Vec<RawDetection>,
}

/// Detector output for one clip, indexed by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionTrack {
    pub per_frame: Vec<Vec<Detection>>,
    /// Boxes that collapsed to zero area after clamping and rounding.
    pub dropped: usize,
}

/// Parses the line-per-frame JSON detection format. Frames missing from the
/// input get an empty detection list; repeated frame indices accumulate.
pub fn parse_detections(text: &str, frame_count: usize) -> Result<DetectionTrack> {
    let mut per_frame = vec![Vec::new(); frame_count];
    let mut dropped = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let raw: RawFrameDetections = serde_json::from_str(line)
            .map_err(|e| Error::arg(format!("detections line {}: {e}", lineno + 1)))?;
        let slot = per_frame.get_mut(raw.frame_index).ok_or_else(|| {
            Error::arg(format!(
                "detections line {}: frame_index {} beyond clip length {frame_count}",
                lineno + 1,
                raw.frame_index
            ))
        })?;
        for d in raw.detections {
            match BoundingBox::from_raw(d.x1, d.y1, d.x2, d.y2) {
                Ok(bbox) => slot.push(
                    Detection::new(bbox, d.conf, d.cls)
                        .map_err(|e| Error::arg(format!("detections line {}: {e}", lineno + 1)))?,
                ),
                Err(_) => dropped += 1,
            }
        }
    }
    Ok(DetectionTrack { per_frame, dropped })
}
