//! Model-free gradient-orientation descriptor.

use std::f64::consts::PI;

use image::GrayImage;

use crate::preprocess::{color::luma_plane, EarImage};

pub const CELL_SIZE: usize = 16;
pub const ORIENTATION_BINS: usize = 8;
/// 14 x 14 cells of 16 px over a 224 px crop, 8 bins each.
pub const BUILTIN_DIM: usize = 14 * 14 * ORIENTATION_BINS;

pub fn builtin_descriptor(img: &EarImage) -> Vec<f32> {
    descriptor_from_luma(&luma_plane(img.pixels()))
}

/// Per-cell unsigned orientation histograms of central-difference gradients
/// (replicated borders), weighted by magnitude, L2-normalized globally.
pub fn descriptor_from_luma(plane: &GrayImage) -> Vec<f32> {
    let (w, h) = (plane.width() as usize, plane.height() as usize);
    let cells_x = w / CELL_SIZE;
    let cells_y = h / CELL_SIZE;
    let raw = plane.as_raw();
    let at = |x: usize, y: usize| raw[y * w + x] as f64;
    let mut hist = vec![0.0f64; cells_x * cells_y * ORIENTATION_BINS];
    let bin_width = PI / ORIENTATION_BINS as f64;

    for y in 0..cells_y * CELL_SIZE {
        let (up, down) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..cells_x * CELL_SIZE {
            let (left, right) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let gx = at(right, y) - at(left, y);
            let gy = at(x, down) - at(x, up);
            let magnitude = (gx * gx + gy * gy).sqrt();
            if magnitude == 0.0 {
                continue;
            }
            let theta = gy.atan2(gx).rem_euclid(PI);
            let bin = ((theta / bin_width) as usize).min(ORIENTATION_BINS - 1);
            let cell = (y / CELL_SIZE) * cells_x + x / CELL_SIZE;
            hist[cell * ORIENTATION_BINS + bin] += magnitude;
        }
    }

    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        hist.iter().map(|v| (v / norm) as f32).collect()
    } else {
        hist.into_iter().map(|v| v as f32).collect()
    }
}
