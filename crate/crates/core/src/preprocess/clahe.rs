//! Contrast limited adaptive histogram equalization on the luma plane.

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::color::{rgb_to_ycbcr, ycbcr_to_rgb};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClaheParams {
    /// Bin ceiling as a multiple of the uniform bin height `tile_pixels / 256`.
    pub clip_limit: f64,
    pub tiles_x: u32,
    pub tiles_y: u32,
}

impl Default for ClaheParams {
    fn default() -> Self {
        ClaheParams {
            clip_limit: 2.0,
            tiles_x: 8,
            tiles_y: 8,
        }
    }
}

impl ClaheParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_limit >= 1.0 && self.clip_limit.is_finite()) {
            return Err(Error::param(format!(
                "clip_limit must be >= 1, got {}",
                self.clip_limit
            )));
        }
        if self.tiles_x == 0 || self.tiles_y == 0 {
            return Err(Error::param("tile counts must be positive"));
        }
        Ok(())
    }
}

/// Start offsets of `tiles` near-equal spans covering `len`, plus the end.
fn tile_edges(len: u32, tiles: u32) -> Vec<u32> {
    (0..=tiles)
        .map(|i| (i as u64 * len as u64 / tiles as u64) as u32)
        .collect()
}

/// Clips the histogram at `clip_count` and spreads the excess over all bins:
/// an equal share each, then the remainder one count per bin at a fixed stride.
pub fn clip_histogram(hist: &mut [u32; 256], clip_count: u32) {
    let mut excess = 0u32;
    for bin in hist.iter_mut() {
        if *bin > clip_count {
            excess += *bin - clip_count;
            *bin = clip_count;
        }
    }
    let share = excess / 256;
    let remainder = excess % 256;
    for bin in hist.iter_mut() {
        *bin += share;
    }
    if remainder > 0 {
        let stride = (256 / remainder).max(1) as usize;
        for bin in hist.iter_mut().step_by(stride).take(remainder as usize) {
            *bin += 1;
        }
    }
}

/// Equalization map from a histogram of `total` samples:
/// `round((cdf(v) - cdf_min) / (total - cdf_min) * 255)`, identity when every
/// sample shares one value.
pub fn equalization_map(hist: &[u32; 256]) -> [u8; 256] {
    let total: u64 = hist.iter().map(|&h| h as u64).sum();
    let mut cdf = [0u64; 256];
    let mut acc = 0u64;
    for (c, &h) in cdf.iter_mut().zip(hist) {
        acc += h as u64;
        *c = acc;
    }
    let cdf_min = hist
        .iter()
        .zip(&cdf)
        .find(|(&h, _)| h > 0)
        .map(|(_, &c)| c)
        .unwrap_or(0);
    let mut map = [0u8; 256];
    if cdf_min == total {
        for (v, m) in map.iter_mut().enumerate() {
            *m = v as u8;
        }
        return map;
    }
    let denom = total - cdf_min;
    for (m, &c) in map.iter_mut().zip(&cdf) {
        let num = c.saturating_sub(cdf_min);
        // Exact round-half-up of num * 255 / denom.
        *m = ((num * 510 + denom) / (2 * denom)) as u8;
    }
    map
}

/// CLAHE over a single 8-bit plane.
pub fn clahe_luma(plane: &GrayImage, params: &ClaheParams) -> Result<GrayImage> {
    params.validate()?;
    let (w, h) = plane.dimensions();
    if w < 2 * params.tiles_x || h < 2 * params.tiles_y {
        return Err(Error::param(format!(
            "tile smaller than 2x2 pixels: {w}x{h} image with {}x{} tiles",
            params.tiles_x, params.tiles_y
        )));
    }
    let xs = tile_edges(w, params.tiles_x);
    let ys = tile_edges(h, params.tiles_y);
    let (tx, ty) = (params.tiles_x as usize, params.tiles_y as usize);

    let mut maps = vec![[0u8; 256]; tx * ty];
    for j in 0..ty {
        for i in 0..tx {
            let mut hist = [0u32; 256];
            for y in ys[j]..ys[j + 1] {
                for x in xs[i]..xs[i + 1] {
                    hist[plane.get_pixel(x, y).0[0] as usize] += 1;
                }
            }
            let pixels = (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j]);
            // A single-valued tile keeps the identity map; clipping first
            // would smear its one bin across the range.
            if hist.iter().filter(|&&c| c > 0).count() <= 1 {
                maps[j * tx + i] = equalization_map(&hist);
                continue;
            }
            let clip_count = ((params.clip_limit * pixels as f64 / 256.0).floor() as u32).max(1);
            if clip_count < pixels {
                clip_histogram(&mut hist, clip_count);
            }
            maps[j * tx + i] = equalization_map(&hist);
        }
    }

    let centers = |edges: &[u32]| -> Vec<f64> {
        edges
            .windows(2)
            .map(|e| (e[0] as f64 + e[1] as f64) / 2.0)
            .collect()
    };
    let (cx, cy) = (centers(&xs), centers(&ys));
    // Neighboring tile indices and blend weight for a pixel-center coordinate.
    let locate = |centers: &[f64], p: f64| -> (usize, usize, f64) {
        let last = centers.len() - 1;
        if p <= centers[0] {
            return (0, 0, 0.0);
        }
        if p >= centers[last] {
            return (last, last, 0.0);
        }
        let i = centers.partition_point(|&c| c <= p) - 1;
        (i, i + 1, (p - centers[i]) / (centers[i + 1] - centers[i]))
    };
    let col: Vec<_> = (0..w).map(|x| locate(&cx, x as f64 + 0.5)).collect();

    let mut out = GrayImage::new(w, h);
    for y in 0..h {
        let (j0, j1, wy) = locate(&cy, y as f64 + 0.5);
        for x in 0..w {
            let (i0, i1, wx) = col[x as usize];
            let v = plane.get_pixel(x, y).0[0] as usize;
            let m = |i: usize, j: usize| maps[j * tx + i][v] as f64;
            let top = m(i0, j0) * (1.0 - wx) + m(i1, j0) * wx;
            let bottom = m(i0, j1) * (1.0 - wx) + m(i1, j1) * wx;
            let value = top * (1.0 - wy) + bottom * wy;
            out.put_pixel(x, y, Luma([value.round().clamp(0.0, 255.0) as u8]));
        }
    }
    Ok(out)
}

/// CLAHE on the luma channel of an RGB image; chroma passes through.
pub fn clahe(image: &RgbImage, params: &ClaheParams) -> Result<RgbImage> {
    let ycc: Vec<[u8; 3]> = image.pixels().map(|p| rgb_to_ycbcr(p.0)).collect();
    let luma = GrayImage::from_raw(
        image.width(),
        image.height(),
        ycc.iter().map(|p| p[0]).collect(),
    )
    .expect("plane matches dimensions");
    let equalized = clahe_luma(&luma, params)?;
    let mut out = RgbImage::new(image.width(), image.height());
    for ((pixel, src), y) in out.pixels_mut().zip(&ycc).zip(equalized.as_raw()) {
        *pixel = Rgb(ycbcr_to_rgb([*y, src[1], src[2]]));
    }
    Ok(out)
}
