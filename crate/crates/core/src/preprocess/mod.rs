//! Raw profile image + ear annotation → canonical 224×224 ear crop.
//!
//! The chain is fixed: mask, principal-axis orientation, rotate and crop,
//! mirror right ears, stretch to 224×224, then CLAHE on luma. Nothing here
//! draws random numbers, so the same inputs always yield the same bytes.

mod clahe;
pub mod color;
mod geometry;
mod orientation;

use std::path::{Path, PathBuf};

use image::RgbImage;

pub use clahe::{clahe, clahe_luma, clip_histogram, equalization_map, ClaheParams};
pub use geometry::{
    align_and_crop, apply_mask, crop_to_foreground, foreground_bounds, foreground_centroid,
    normalize_side, resize_bilinear, rotate_about,
};
pub use orientation::{
    estimate_orientation, orientation_from_points, OrientationEstimate, DEGENERACY_RATIO,
};

use crate::dataset::{load_annotation, BinaryMask, ImageRecord, Manifest, Side};
use crate::error::{Error, Result};

/// Side length of the canonical ear crop.
pub const EAR_SIZE: u32 = 224;

/// Canonical preprocessed ear crop.
#[derive(Debug, Clone, PartialEq)]
pub struct EarImage {
    pixels: RgbImage,
    /// Record key of the originating image.
    pub source: String,
    pub applied_rotation_deg: f64,
    pub flipped: bool,
}

impl EarImage {
    pub fn new(
        pixels: RgbImage,
        source: impl Into<String>,
        applied_rotation_deg: f64,
        flipped: bool,
    ) -> Result<Self> {
        if pixels.dimensions() != (EAR_SIZE, EAR_SIZE) {
            return Err(Error::DimensionMismatch(format!(
                "ear image must be {EAR_SIZE}x{EAR_SIZE}, got {}x{}",
                pixels.width(),
                pixels.height()
            )));
        }
        Ok(EarImage {
            pixels,
            source: source.into(),
            applied_rotation_deg,
            flipped,
        })
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    /// Writes `<out_dir>/<subject_id>/<session>/<basename>.png`.
    pub fn save_png(&self, out_dir: &Path, record: &ImageRecord) -> Result<PathBuf> {
        let dir = out_dir
            .join(&record.subject_id)
            .join(record.session.to_string());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("{}.png", record.basename()));
        std::fs::write(&path, crate::dataset::synth::encode_png(&self.pixels))
            .map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Runs the full chain on an in-memory image and mask.
pub fn preprocess_image(
    image: &RgbImage,
    mask: &BinaryMask,
    side: Side,
    params: &ClaheParams,
    source: impl Into<String>,
) -> Result<EarImage> {
    params.validate()?;
    let masked = apply_mask(image, mask)?;
    let est = estimate_orientation(mask)?;
    let aligned = align_and_crop(&masked, &est)?;
    let sided = normalize_side(&aligned, side);
    let resized = resize_bilinear(&sided, EAR_SIZE, EAR_SIZE);
    let enhanced = clahe(&resized, params)?;
    let rotation = if est.degenerate { 0.0 } else { -est.angle_deg };
    EarImage::new(enhanced, source, rotation, side == Side::R)
}

/// Loads a record's image and annotation and runs the full chain.
pub fn preprocess_record(
    manifest: &Manifest,
    record: &ImageRecord,
    params: &ClaheParams,
) -> Result<EarImage> {
    let image_path = manifest.image_path(record);
    let image = image::open(&image_path)
        .map_err(|e| Error::image(&image_path, e))?
        .to_rgb8();
    let mask = load_annotation(
        &manifest.annotation_path(record),
        image.width(),
        image.height(),
    )?;
    preprocess_image(&image, &mask, record.side, params, record.key())
}
