//! Batch preprocessing for gesture-video datasets.
//!
//! The pipeline stages are independent modules over shared types in
//! [`model`]:
//!
//! - [`masking`]: largest-detection masking and area-averaging resize
//! - [`augment`]: flips, upsample, rotation, color inversion, temporal
//!   downsampling and 7x dataset expansion
//! - [`dataset`]: manifests, trimming, stratified splits, statistics
//! - [`metrics`]: accuracy, precision/recall/F1, confusion, cross-entropy
//! - [`tubemask`]: token geometry and tube masks for masked video autoencoders
//! - [`clip_io`]: frame-directory clip storage

pub mod augment;
pub mod clip_io;
pub mod dataset;
pub mod error;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod tubemask;

pub use error::{Error, Result};
pub use model::{BoundingBox, ClassLabel, Detection, Frame, Rgb, VideoClip};
