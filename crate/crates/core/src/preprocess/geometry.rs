//! Masking, rotation, cropping, mirroring and resizing of RGB images.

use image::{Rgb, RgbImage};

use super::orientation::OrientationEstimate;
use crate::dataset::{BinaryMask, Side};
use crate::error::{Error, Result};

/// Keeps pixels under the mask and blacks out everything else.
pub fn apply_mask(image: &RgbImage, mask: &BinaryMask) -> Result<RgbImage> {
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(Error::DimensionMismatch(format!(
            "mask {}x{} vs image {}x{}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let mut out = image.clone();
    for (pixel, &keep) in out.pixels_mut().zip(mask.bits()) {
        if !keep {
            *pixel = Rgb([0, 0, 0]);
        }
    }
    Ok(out)
}

fn is_foreground(p: &Rgb<u8>) -> bool {
    p.0.iter().any(|&c| c > 0)
}

/// Tight bounding box `(x0, y0, x1, y1)` (exclusive ends) of non-black pixels.
pub fn foreground_bounds(image: &RgbImage) -> Option<(u32, u32, u32, u32)> {
    let mut bounds: Option<(u32, u32, u32, u32)> = None;
    for (x, y, p) in image.enumerate_pixels() {
        if is_foreground(p) {
            bounds = Some(match bounds {
                None => (x, y, x + 1, y + 1),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
            });
        }
    }
    bounds
}

pub fn crop_to_foreground(image: &RgbImage) -> Result<RgbImage> {
    let (x0, y0, x1, y1) = foreground_bounds(image)
        .ok_or_else(|| Error::input("image is black everywhere"))?;
    Ok(image::imageops::crop_imm(image, x0, y0, x1 - x0, y1 - y0).to_image())
}

/// Bilinear sample at a continuous position where pixel `(i, j)` has its
/// center at `(i + 0.5, j + 0.5)`. Outside the image reads as black.
fn sample_bilinear(image: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let fx = x - 0.5;
    let fy = y - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let (w, h) = (image.width() as i64, image.height() as i64);
    let fetch = |xi: i64, yi: i64| -> [f64; 3] {
        if xi < 0 || yi < 0 || xi >= w || yi >= h {
            [0.0; 3]
        } else {
            image.get_pixel(xi as u32, yi as u32).0.map(f64::from)
        }
    };
    let (xi, yi) = (x0 as i64, y0 as i64);
    let (a, b, c, d) = (fetch(xi, yi), fetch(xi + 1, yi), fetch(xi, yi + 1), fetch(xi + 1, yi + 1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = a[k] * (1.0 - tx) + b[k] * tx;
        let bottom = c[k] * (1.0 - tx) + d[k] * tx;
        out[k] = top * (1.0 - ty) + bottom * ty;
    }
    out
}

/// Rotates clockwise by `angle_deg` about `center` (image coordinates, y
/// down). The canvas grows to hold every rotated foreground pixel; uncovered
/// area is black.
pub fn rotate_about(image: &RgbImage, center: (f64, f64), angle_deg: f64) -> RgbImage {
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let (cx, cy) = center;
    let (x0, y0, x1, y1) = foreground_bounds(image).unwrap_or((0, 0, image.width(), image.height()));
    // Forward-map the foreground box corners to size the canvas.
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for (px, py) in [(x0, y0), (x1, y0), (x0, y1), (x1, y1)] {
        let (dx, dy) = (px as f64 - cx, py as f64 - cy);
        let qx = cx + cos * dx - sin * dy;
        let qy = cy + sin * dx + cos * dy;
        min_x = min_x.min(qx);
        min_y = min_y.min(qy);
        max_x = max_x.max(qx);
        max_y = max_y.max(qy);
    }
    let origin_x = min_x.floor() - 1.0;
    let origin_y = min_y.floor() - 1.0;
    let width = (max_x.ceil() + 1.0 - origin_x).max(1.0) as u32;
    let height = (max_y.ceil() + 1.0 - origin_y).max(1.0) as u32;

    RgbImage::from_fn(width, height, |ox, oy| {
        // Inverse map: rotate the output position counter-clockwise.
        let qx = origin_x + ox as f64 + 0.5 - cx;
        let qy = origin_y + oy as f64 + 0.5 - cy;
        let sx = cx + cos * qx + sin * qy;
        let sy = cy - sin * qx + cos * qy;
        Rgb(sample_bilinear(image, sx, sy).map(|v| v.round().clamp(0.0, 255.0) as u8))
    })
}

/// Centroid of non-black pixel centers.
pub fn foreground_centroid(image: &RgbImage) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (x, y, p) in image.enumerate_pixels() {
        if is_foreground(p) {
            sx += x as f64 + 0.5;
            sy += y as f64 + 0.5;
            n += 1;
        }
    }
    (n > 0).then(|| (sx / n as f64, sy / n as f64))
}

/// Rotates the principal axis to vertical about the foreground centroid, then
/// crops to the non-black bounding box. Degenerate estimates only crop.
pub fn align_and_crop(masked: &RgbImage, est: &OrientationEstimate) -> Result<RgbImage> {
    let centroid =
        foreground_centroid(masked).ok_or_else(|| Error::input("image is black everywhere"))?;
    if est.degenerate || est.angle_deg == 0.0 {
        return crop_to_foreground(masked);
    }
    let rotated = rotate_about(masked, centroid, -est.angle_deg);
    crop_to_foreground(&rotated)
}

/// Mirrors right ears so every output looks like a left ear.
pub fn normalize_side(image: &RgbImage, side: Side) -> RgbImage {
    match side {
        Side::L => image.clone(),
        Side::R => image::imageops::flip_horizontal(image),
    }
}

/// Bilinear resize with corner-aligned sampling (output corners land exactly
/// on input corners). Aspect ratio is not preserved.
pub fn resize_bilinear(image: &RgbImage, width: u32, height: u32) -> RgbImage {
    let (in_w, in_h) = (image.width(), image.height());
    if in_w == width && in_h == height {
        return image.clone();
    }
    let scale = |input: u32, output: u32| {
        if output > 1 {
            (input - 1) as f64 / (output - 1) as f64
        } else {
            0.0
        }
    };
    let (sx, sy) = (scale(in_w, width), scale(in_h, height));
    RgbImage::from_fn(width, height, |ox, oy| {
        let fx = ox as f64 * sx;
        let fy = oy as f64 * sy;
        let x0 = (fx.floor() as u32).min(in_w - 1);
        let y0 = (fy.floor() as u32).min(in_h - 1);
        let x1 = (x0 + 1).min(in_w - 1);
        let y1 = (y0 + 1).min(in_h - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let (a, b) = (image.get_pixel(x0, y0).0, image.get_pixel(x1, y0).0);
        let (c, d) = (image.get_pixel(x0, y1).0, image.get_pixel(x1, y1).0);
        let mut out = [0u8; 3];
        for k in 0..3 {
            let top = a[k] as f64 * (1.0 - tx) + b[k] as f64 * tx;
            let bottom = c[k] as f64 * (1.0 - tx) + d[k] as f64 * tx;
            out[k] = (top * (1.0 - ty) + bottom * ty).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(out)
    })
}
