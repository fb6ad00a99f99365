//! Shared domain types: frames, clips, class labels and detector output.
//!
//! Pixel coordinates are 0-based with row `i` growing downward and column `j`
//! growing rightward. Channels are stored as R, G, B.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One pixel, channels in R, G, B order.
pub type Rgb = [u8; 3];

pub const BLACK: Rgb = [0, 0, 0];

/// A single RGB image stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg(format!(
                "frame dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::arg(format!(
                "expected {} pixels for a {width}x{height} frame, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            pixels,
        })
    }

    /// Builds a frame from wide integer channel values, rejecting anything
    /// outside `[0, 255]`.
    pub fn from_values(width: usize, height: usize, values: &[[i64; 3]]) -> Result<Self> {
        let pixels = values
            .iter()
            .enumerate()
            .map(|(k, px)| {
                let mut out = [0u8; 3];
                for (c, &v) in px.iter().enumerate() {
                    out[c] = u8::try_from(v).map_err(|_| {
                        Error::arg(format!("channel value {v} at pixel {k} is outside [0, 255]"))
                    })?;
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Frame::new(width, height, pixels)
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Result<Self> {
        Frame::new(width, height, vec![color; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<Rgb> {
        self.pixels
    }

    /// Pixel at row `i`, column `j`.
    pub fn get(&self, i: usize, j: usize) -> Result<Rgb> {
        if i >= self.height || j >= self.width {
            return Err(Error::Index {
                row: i,
                col: j,
                height: self.height,
                width: self.width,
            });
        }
        Ok(self.pixels[i * self.width + j])
    }

    /// Mean of each channel over all pixels.
    pub fn channel_means(&self) -> [f64; 3] {
        let mut acc = [0u64; 3];
        for px in &self.pixels {
            for c in 0..3 {
                acc[c] += u64::from(px[c]);
            }
        }
        acc.map(|a| a as f64 / self.pixels.len() as f64)
    }

    /// Unchecked-by-`Result` accessor for hot loops; panics on out-of-range.
    #[inline]
    pub(crate) fn at(&self, i: usize, j: usize) -> Rgb {
        self.pixels[i * self.width + j]
    }

    /// Builds a frame by evaluating `f(i, j)` at every position.
    pub(crate) fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        debug_assert!(width > 0 && height > 0);
        let mut pixels = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                pixels.push(f(i, j));
            }
        }
        Frame {
            width,
            height,
            pixels,
        }
    }
}

/// The three behaviour classes, encoded as 0, 1, 2 in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    ArmFlapping,
    HeadBanging,
    Spinning,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [
        ClassLabel::ArmFlapping,
        ClassLabel::HeadBanging,
        ClassLabel::Spinning,
    ];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::UnknownClass(index.to_string()))
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::ArmFlapping => "ArmFlapping",
            ClassLabel::HeadBanging => "HeadBanging",
            ClassLabel::Spinning => "Spinning",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    /// Accepts either the class name or its integer encoding.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(idx) = s.parse::<usize>() {
            return ClassLabel::from_index(idx);
        }
        ClassLabel::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::UnknownClass(s.to_string()))
    }
}

/// An ordered run of equally sized frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<Frame>,
    fps: f64,
    label: ClassLabel,
    clip_id: String,
}

impl VideoClip {
    pub fn new(
        clip_id: impl Into<String>,
        label: ClassLabel,
        fps: f64,
        frames: Vec<Frame>,
    ) -> Result<Self> {
        let clip_id = clip_id.into();
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::arg(format!("clip {clip_id}: fps must be positive, got {fps}")));
        }
        let Some(first) = frames.first() else {
            return Err(Error::arg(format!("clip {clip_id}: a clip needs at least one frame")));
        };
        let dims = first.dims();
        if let Some((k, f)) = frames.iter().enumerate().find(|(_, f)| f.dims() != dims) {
            return Err(Error::arg(format!(
                "clip {clip_id}: frame {k} is {}x{}, expected {}x{}",
                f.width(),
                f.height(),
                dims.0,
                dims.1
            )));
        }
        Ok(VideoClip {
            frames,
            fps,
            label,
            clip_id,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn label(&self) -> ClassLabel {
        self.label
    }

    pub fn clip_id(&self) -> &str {
        &self.clip_id
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn with_id(mut self, clip_id: impl Into<String>) -> Self {
        self.clip_id = clip_id.into();
        self
    }
}

/// Axis-aligned box given by its top-left `(x1, y1)` and bottom-right
/// `(x2, y2)` corners. The covered pixels are columns `x1..x2` and rows
/// `y1..y2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct BoundingBox {
    x1: u32,
    y1: u32,
    x2: u32,
    y2: u32,
}

impl BoundingBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Result<Self> {
        if x2 <= x1 || y2 <= y1 {
            return Err(Error::arg(format!(
                "bounding box ({x1},{y1},{x2},{y2}) has non-positive area"
            )));
        }
        Ok(BoundingBox { x1, y1, x2, y2 })
    }

    /// Builds a box from raw detector coordinates. Negative values are
    /// clamped to zero and coordinates are rounded to the nearest pixel.
    pub fn from_raw(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let conv = |v: f64| -> Result<u32> {
            if !v.is_finite() {
                return Err(Error::arg(format!("non-finite box coordinate {v}")));
            }
            Ok(v.max(0.0).round().min(u32::MAX as f64) as u32)
        };
        BoundingBox::new(conv(x1)?, conv(y1)?, conv(x2)?, conv(y2)?)
    }

    pub fn x1(&self) -> u32 {
        self.x1
    }
    pub fn y1(&self) -> u32 {
        self.y1
    }
    pub fn x2(&self) -> u32 {
        self.x2
    }
    pub fn y2(&self) -> u32 {
        self.y2
    }

    pub fn coords(&self) -> [u32; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Intersection with a `width` x `height` frame, or `None` if disjoint.
    pub fn clamp_to(&self, width: usize, height: usize) -> Option<BoundingBox> {
        let x2 = (self.x2 as usize).min(width);
        let y2 = (self.y2 as usize).min(height);
        if (self.x1 as usize) >= x2 || (self.y1 as usize) >= y2 {
            return None;
        }
        Some(BoundingBox {
            x1: self.x1,
            y1: self.y1,
            x2: x2 as u32,
            y2: y2 as u32,
        })
    }
}

/// One detector hit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detection {
    bbox: BoundingBox,
    conf: f64,
    cls: i64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, conf: f64, cls: i64) -> Result<Self> {
        if !(0.0..=1.0).contains(&conf) {
            return Err(Error::arg(format!("confidence {conf} is outside [0, 1]")));
        }
        Ok(Detection { bbox, conf, cls })
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    pub fn conf(&self) -> f64 {
        self.conf
    }

    pub fn cls(&self) -> i64 {
        self.cls
    }
}
