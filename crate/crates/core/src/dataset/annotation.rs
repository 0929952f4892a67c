//! Ear-region annotations: polygon JSON and binary masks.

use std::path::Path;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polygon outline of the ear in pixel coordinates (origin top-left, y down).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonAnnotation {
    pub label: String,
    pub points: Vec<[f64; 2]>,
}

impl PolygonAnnotation {
    pub fn new(label: impl Into<String>, points: Vec<[f64; 2]>) -> Self {
        PolygonAnnotation {
            label: label.into(),
            points,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("polygon serializes")
    }

    /// Full validation: at least three vertices, nonzero area, simple, inside
    /// the `width` x `height` image.
    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        check_shape(&self.points)?;
        for (i, &[x, y]) in self.points.iter().enumerate() {
            if !(x.is_finite() && y.is_finite()) {
                return Err(Error::Annotation(format!("vertex {i} is not finite")));
            }
            if x < 0.0 || y < 0.0 || x > width as f64 || y > height as f64 {
                return Err(Error::Annotation(format!(
                    "vertex {i} ({x}, {y}) outside {width}x{height} image"
                )));
            }
        }
        if !is_simple(&self.points) {
            return Err(Error::Annotation("polygon is self-intersecting".into()));
        }
        Ok(())
    }
}

fn check_shape(points: &[[f64; 2]]) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::Annotation(format!(
            "polygon needs at least 3 points, got {}",
            points.len()
        )));
    }
    let [x0, y0] = points[0];
    let Some(&[x1, y1]) = points.iter().find(|p| p[0] != x0 || p[1] != y0) else {
        return Err(Error::Annotation("all points collinear (zero-area polygon)".into()));
    };
    let collinear = points
        .iter()
        .all(|&[x, y]| (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) == 0.0);
    if collinear {
        return Err(Error::Annotation("all points collinear (zero-area polygon)".into()));
    }
    Ok(())
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// True when no two non-adjacent edges touch. Quadratic in vertex count.
pub fn is_simple(points: &[[f64; 2]]) -> bool {
    let n = points.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (points[i], points[(i + 1) % n]);
        if a == b {
            return false;
        }
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (c, d) = (points[j], points[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Row-major boolean grid, same size as the image it annotates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::input("mask dimensions must be positive"));
        }
        if bits.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(BinaryMask { width, height, bits })
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let bits = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        BinaryMask { width, height, bits }
    }

    /// Nonzero pixels of an 8-bit grayscale image are foreground.
    pub fn from_gray(img: &GrayImage) -> Self {
        BinaryMask {
            width: img.width(),
            height: img.height(),
            bits: img.as_raw().iter().map(|&v| v != 0).collect(),
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_raw(
            self.width,
            self.height,
            self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        )
        .expect("mask buffer matches dimensions")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Pixel-center coordinates of every foreground pixel.
    pub fn foreground_points(&self) -> Vec<(f64, f64)> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| {
                let x = (i % self.width as usize) as f64 + 0.5;
                let y = (i / self.width as usize) as f64 + 0.5;
                (x, y)
            })
            .collect()
    }
}

/// Fills the polygon with the even-odd rule, testing each pixel center
/// `(x + 0.5, y + 0.5)`.
pub fn rasterize_polygon(poly: &PolygonAnnotation, width: u32, height: u32) -> Result<BinaryMask> {
    if width == 0 || height == 0 {
        return Err(Error::input("raster dimensions must be positive"));
    }
    check_shape(&poly.points)?;
    let pts = &poly.points;
    let n = pts.len();
    let mut bits = vec![false; width as usize * height as usize];
    let mut crossings = Vec::with_capacity(n);
    for row in 0..height {
        let py = row as f64 + 0.5;
        crossings.clear();
        for i in 0..n {
            let [xi, yi] = pts[i];
            let [xj, yj] = pts[(i + n - 1) % n];
            if (yi > py) != (yj > py) {
                crossings.push((xj - xi) * (py - yi) / (yj - yi) + xi);
            }
        }
        if crossings.is_empty() {
            continue;
        }
        crossings.sort_by(f64::total_cmp);
        // Pixel is inside iff an odd number of crossings lie strictly right of it.
        let line = &mut bits[row as usize * width as usize..(row as usize + 1) * width as usize];
        let mut at_or_left = 0usize;
        for (col, bit) in line.iter_mut().enumerate() {
            let px = col as f64 + 0.5;
            while at_or_left < crossings.len() && crossings[at_or_left] <= px {
                at_or_left += 1;
            }
            *bit = (crossings.len() - at_or_left) % 2 == 1;
        }
    }
    let mask = BinaryMask { width, height, bits };
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(mask)
}

/// Loads an annotation for a `width` x `height` image. `.json` files are
/// polygons; anything else is read as a grayscale mask image.
pub fn load_annotation(path: &Path, width: u32, height: u32) -> Result<BinaryMask> {
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let mask = if is_json {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let poly = PolygonAnnotation::from_json(&text)?;
        poly.validate(width, height)?;
        rasterize_polygon(&poly, width, height)?
    } else {
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        let mask = BinaryMask::from_gray(&img.to_luma8());
        if mask.width != width || mask.height != height {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} vs image {width}x{height}",
                mask.width, mask.height
            )));
        }
        mask
    };
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(mask)
}
