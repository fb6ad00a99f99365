//! The six clip augmentations and the 7x dataset expansion built on them.
//!
//! Flip index maps are the 0-based forms of `F(i, W - j + 1)` and
//! `F(H - i + 1, j)`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::clip_io;
use crate::dataset::{self, DatasetManifest, ManifestEntry, Provenance};
use crate::error::{Error, Result};
use crate::model::{Frame, Rgb, VideoClip};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    alpha: f64,
    theta_deg: f64,
    beta: usize,
}

impl AugmentParams {
    pub fn new(alpha: f64, theta_deg: f64, beta: usize) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 1.0) {
            return Err(Error::arg(format!("upsample factor must be > 1, got {alpha}")));
        }
        if !(theta_deg > -360.0 && theta_deg < 360.0) {
            return Err(Error::arg(format!(
                "rotation angle must lie in (-360, 360), got {theta_deg}"
            )));
        }
        if beta == 0 {
            return Err(Error::arg("temporal downsample factor must be >= 1"));
        }
        Ok(AugmentParams {
            alpha,
            theta_deg,
            beta,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta_deg
    }

    pub fn beta(&self) -> usize {
        self.beta
    }
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            alpha: 1.5,
            theta_deg: 25.0,
            beta: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum TransformKind {
    HFlip,
    VFlip,
    Upsample,
    Rotate,
    InvertColor,
    DownsampleTemporal,
}

impl TransformKind {
    pub const ALL: [TransformKind; 6] = [
        TransformKind::HFlip,
        TransformKind::VFlip,
        TransformKind::Upsample,
        TransformKind::Rotate,
        TransformKind::InvertColor,
        TransformKind::DownsampleTemporal,
    ];

    /// Original plus one copy per transform.
    pub const EXPANSION_FACTOR: usize = 1 + Self::ALL.len();

    /// Short name used in clip ids and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            TransformKind::HFlip => "hflip",
            TransformKind::VFlip => "vflip",
            TransformKind::Upsample => "upsample",
            TransformKind::Rotate => "rotate",
            TransformKind::InvertColor => "invert",
            TransformKind::DownsampleTemporal => "downsample",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown transform `{s}`")))
    }
}

pub fn hflip(frame: &Frame) -> Frame {
    let w = frame.width();
    Frame::from_fn(w, frame.height(), |i, j| frame.at(i, w - 1 - j))
}

pub fn vflip(frame: &Frame) -> Frame {
    let h = frame.height();
    Frame::from_fn(frame.width(), h, |i, j| frame.at(h - 1 - i, j))
}

pub fn invert_color(frame: &Frame) -> Frame {
    Frame::from_fn(frame.width(), frame.height(), |i, j| {
        frame.at(i, j).map(|c| 255 - c)
    })
}

/// Mirror index into `[0, n)` without repeating the edge sample
/// (`... 2 1 | 0 1 2 ... n-1 | n-2 ...`).
pub(crate) fn reflect101(p: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = p.rem_euclid(period);
    (if m >= n as i64 { period - m } else { m }) as usize
}

#[inline]
fn round_channel(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Snaps coordinates that are integral up to floating-point noise.
#[inline]
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Rotates about the frame center `((W-1)/2, (H-1)/2)`; positive angles turn
/// the content counter-clockwise as displayed. Each output pixel is sampled
/// bilinearly at its inverse-rotated position, with reflect-101 borders.
pub fn rotate(frame: &Frame, theta_deg: f64) -> Frame {
    let (w, h) = frame.dims();
    let t = theta_deg.to_radians();
    let (sin, cos) = t.sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    Frame::from_fn(w, h, |i, j| {
        let dx = j as f64 - cx;
        let dy = i as f64 - cy;
        let sx = snap(cos * dx - sin * dy + cx);
        let sy = snap(sin * dx + cos * dy + cy);
        bilinear_reflect(frame, sx, sy)
    })
}

fn bilinear_reflect(frame: &Frame, x: f64, y: f64) -> Rgb {
    let (w, h) = frame.dims();
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let xa = reflect101(x0, w);
    let xb = reflect101(x0 + 1, w);
    let ya = reflect101(y0, h);
    let yb = reflect101(y0 + 1, h);
    let (p00, p01, p10, p11) = (frame.at(ya, xa), frame.at(ya, xb), frame.at(yb, xa), frame.at(yb, xb));
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - fx) + p01[c] as f64 * fx;
        let bottom = p10[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = round_channel(top * (1.0 - fy) + bottom * fy);
    }
    out
}

/// Catmull-Rom cubic convolution kernel (a = -0.5).
fn cubic_weight(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Four taps and weights for sampling position `pos` on an axis of `len`
/// samples. Positions past the last sample are clamped to it and tap
/// indices replicate the edge.
fn cubic_taps(pos: f64, len: usize) -> [(usize, f64); 4] {
    let pos = snap(pos.clamp(0.0, (len - 1) as f64));
    let base = pos.floor();
    let frac = pos - base;
    let base = base as i64;
    let mut taps = [(0usize, 0.0); 4];
    for (k, tap) in taps.iter_mut().enumerate() {
        let offset = k as i64 - 1;
        let idx = (base + offset).clamp(0, len as i64 - 1) as usize;
        *tap = (idx, cubic_weight(frac - offset as f64));
    }
    taps
}

/// `round(alpha * n)` with halves rounded up.
pub fn scaled_len(n: usize, alpha: f64) -> usize {
    ((alpha * n as f64) + 0.5).floor().max(1.0) as usize
}

/// Bicubic upscale by `alpha`. Output pixel `(i, j)` samples the source at
/// `(i / alpha, j / alpha)`.
pub fn upsample(frame: &Frame, alpha: f64) -> Result<Frame> {
    if !(alpha.is_finite() && alpha > 1.0) {
        return Err(Error::arg(format!("upsample factor must be > 1, got {alpha}")));
    }
    let (w, h) = frame.dims();
    let (ow, oh) = (scaled_len(w, alpha), scaled_len(h, alpha));
    let xt: Vec<_> = (0..ow).map(|j| cubic_taps(j as f64 / alpha, w)).collect();
    let yt: Vec<_> = (0..oh).map(|i| cubic_taps(i as f64 / alpha, h)).collect();
    Ok(Frame::from_fn(ow, oh, |i, j| {
        let mut acc = [0.0f64; 3];
        for &(sy, wy) in &yt[i] {
            if wy == 0.0 {
                continue;
            }
            let mut row = [0.0f64; 3];
            for &(sx, wx) in &xt[j] {
                let px = frame.at(sy, sx);
                for c in 0..3 {
                    row[c] += wx * px[c] as f64;
                }
            }
            for c in 0..3 {
                acc[c] += wy * row[c];
            }
        }
        acc.map(round_channel)
    }))
}

/// Keeps frames `0, beta, 2*beta, ...` and divides the frame rate by `beta`.
pub fn downsample_temporal(clip: &VideoClip, beta: usize) -> Result<VideoClip> {
    if beta == 0 {
        return Err(Error::arg("temporal downsample factor must be >= 1"));
    }
    let frames = clip.frames().iter().step_by(beta).cloned().collect();
    VideoClip::new(clip.clip_id(), clip.label(), clip.fps() / beta as f64, frames)
}

fn map_frames(clip: &VideoClip, f: impl Fn(&Frame) -> Result<Frame> + Send + Sync) -> Result<VideoClip> {
    let frames = clip.frames().par_iter().map(f).collect::<Result<Vec<_>>>()?;
    VideoClip::new(clip.clip_id(), clip.label(), clip.fps(), frames)
}

/// Id of the copy of `source` produced by `kind` (`None` for the original).
pub fn derived_id(source: &str, kind: Option<TransformKind>) -> String {
    format!("{source}_{}", kind.map_or("orig", TransformKind::name))
}

/// Applies one transform to a whole clip. Spatial transforms act per frame;
/// the temporal downsample acts on the frame sequence. The result keeps the
/// source id.
pub fn apply_transform(clip: &VideoClip, kind: TransformKind, params: &AugmentParams) -> Result<VideoClip> {
    match kind {
        TransformKind::HFlip => map_frames(clip, |f| Ok(hflip(f))),
        TransformKind::VFlip => map_frames(clip, |f| Ok(vflip(f))),
        TransformKind::InvertColor => map_frames(clip, |f| Ok(invert_color(f))),
        TransformKind::Rotate => map_frames(clip, |f| Ok(rotate(f, params.theta_deg))),
        TransformKind::Upsample => map_frames(clip, |f| upsample(f, params.alpha)),
        TransformKind::DownsampleTemporal => downsample_temporal(clip, params.beta),
    }
}

/// Result of expanding a manifest; failed clips are listed rather than
/// aborting the run.
#[derive(Debug)]
pub struct Expansion {
    pub manifest: DatasetManifest,
    pub failures: Vec<(String, Error)>,
}

fn expand_one(
    entry: &ManifestEntry,
    src_base: &Path,
    out_dir: &Path,
    params: &AugmentParams,
    kinds: &[TransformKind],
    include_original: bool,
) -> Result<Vec<ManifestEntry>> {
    let clip = clip_io::read_clip(&dataset::clip_dir(src_base, entry), &entry.clip_id)?;
    let variants = include_original
        .then_some(None)
        .into_iter()
        .chain(kinds.iter().copied().map(Some));
    let mut out = Vec::new();
    for kind in variants {
        let id = derived_id(&entry.clip_id, kind);
        let derived = match kind {
            Some(k) => apply_transform(&clip, k, params)?,
            None => clip.clone(),
        }
        .with_id(id.clone());
        let rel = format!("{}/{id}", entry.label.name());
        clip_io::write_clip(&out_dir.join(&rel), &derived)?;
        let mut e = ManifestEntry::for_clip(&derived, rel);
        e.split = entry.split;
        e.provenance = Some(Provenance::transform(
            &entry.clip_id,
            kind.map_or("original", TransformKind::name),
        ));
        out.push(e);
    }
    Ok(out)
}

/// Writes the original plus every transform in `kinds` for each clip of
/// `manifest` under `out_dir/<Class>/<derived id>/`. Entry paths of the
/// returned manifest are relative to `out_dir`; entries are ordered by
/// source id, then original first, then `kinds` order.
pub fn expand_selected(
    manifest: &DatasetManifest,
    src_base: &Path,
    out_dir: &Path,
    params: &AugmentParams,
    kinds: &[TransformKind],
    include_original: bool,
) -> Result<Expansion> {
    let mut sources: Vec<&ManifestEntry> = manifest.entries().iter().collect();
    sources.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    let results: Vec<_> = sources
        .par_iter()
        .map(|e| expand_one(e, src_base, out_dir, params, kinds, include_original))
        .collect();
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (src, r) in sources.iter().zip(results) {
        match r {
            Ok(es) => entries.extend(es),
            Err(e) => failures.push((src.clip_id.clone(), e)),
        }
    }
    Ok(Expansion {
        manifest: DatasetManifest::new(entries)?,
        failures,
    })
}

/// Original plus all six transforms per clip.
pub fn expand_dataset(
    manifest: &DatasetManifest,
    src_base: &Path,
    out_dir: &Path,
    params: &AugmentParams,
) -> Result<Expansion> {
    expand_selected(manifest, src_base, out_dir, params, &TransformKind::ALL, true)
}
