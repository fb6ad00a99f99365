//! Frame-directory clip storage.
//!
//! A clip lives in its own directory holding `frame_000000.png`,
//! `frame_000001.png`, ... and a `clip.json` descriptor.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassLabel, Frame, Rgb, VideoClip};

pub const DESCRIPTOR_FILE: &str = "clip.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipDescriptor {
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub label: ClassLabel,
}

impl ClipDescriptor {
    pub fn of(clip: &VideoClip) -> Self {
        ClipDescriptor {
            fps: clip.fps(),
            width: clip.width(),
            height: clip.height(),
            frame_count: clip.frame_count(),
            label: clip.label(),
        }
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(bad(format!("fps must be positive, got {}", self.fps)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(bad(format!("bad frame size {}x{}", self.width, self.height)));
        }
        if self.frame_count == 0 {
            return Err(bad("frame_count must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

pub fn read_descriptor(dir: &Path) -> Result<ClipDescriptor> {
    let path = dir.join(DESCRIPTOR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let desc: ClipDescriptor =
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
    desc.validate(&path)?;
    Ok(desc)
}

fn read_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<Rgb> = img.pixels().map(|p| p.0).collect();
    Frame::new(w, h, pixels)
}

/// Loads a clip directory, checking every frame against the descriptor.
pub fn read_clip(dir: &Path, clip_id: &str) -> Result<VideoClip> {
    let desc = read_descriptor(dir)?;
    let frames = (0..desc.frame_count)
        .into_par_iter()
        .map(|k| {
            let path = dir.join(frame_file_name(k));
            let frame = read_frame(&path)?;
            if frame.dims() != (desc.width, desc.height) {
                return Err(Error::Format {
                    path,
                    message: format!(
                        "frame is {}x{}, descriptor says {}x{}",
                        frame.width(),
                        frame.height(),
                        desc.width,
                        desc.height
                    ),
                });
            }
            Ok(frame)
        })
        .collect::<Result<Vec<_>>>()?;
    VideoClip::new(clip_id, desc.label, desc.fps, frames)
}

fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let raw: Vec<u8> = frame.pixels().iter().flatten().copied().collect();
    let img = RgbImage::from_raw(frame.width() as u32, frame.height() as u32, raw)
        .expect("frame buffer length matches its dimensions");
    PngEncoder::new(&mut out)
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn staging_dir(dir: &Path) -> PathBuf {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    dir.with_file_name(format!(".{name}.partial"))
}

/// Writes a clip into `dir`, replacing whatever was there. The frames are
/// staged in a sibling directory and moved into place once complete.
pub fn write_clip(dir: &Path, clip: &VideoClip) -> Result<()> {
    let stage = staging_dir(dir);
    if stage.exists() {
        fs::remove_dir_all(&stage).map_err(|e| Error::io(&stage, e))?;
    }
    fs::create_dir_all(&stage).map_err(|e| Error::io(&stage, e))?;
    clip.frames()
        .par_iter()
        .enumerate()
        .try_for_each(|(k, f)| write_frame(&stage.join(frame_file_name(k)), f))?;
    let desc = serde_json::to_string_pretty(&ClipDescriptor::of(clip)).expect("descriptor serializes");
    let desc_path = stage.join(DESCRIPTOR_FILE);
    fs::write(&desc_path, desc + "\n").map_err(|e| Error::io(&desc_path, e))?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&stage, dir).map_err(|e| Error::io(dir, e))
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
