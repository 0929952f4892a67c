//! Seeded synthetic longitudinal ear datasets.
//!
//! Each subject gets an ear phantom: a filled ellipse carrying a helix rim,
//! a concha bowl, a canal dot and a handful of curved ridges, all placed by
//! the subject's own random stream. Every collection re-renders the phantom
//! with its shape parameters scaled by `1 + drift * (session - 1)`, and every
//! sample adds pose, illumination and sensor noise on top.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use chrono::{Months, NaiveDate};
use image::{ImageEncoder, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::annotation::PolygonAnnotation;
use super::manifest::{ImageRecord, Manifest, Sex, Side, DEFAULT_SESSION_SPACING_MONTHS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub n_collections: u32,
    pub samples_per_subject_per_collection: usize,
    /// Fractional shape-parameter change per session, in `[0, 1]`.
    pub drift_per_collection: f64,
    pub image_size: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 20,
            n_collections: 6,
            samples_per_subject_per_collection: 2,
            drift_per_collection: 0.0,
            image_size: 256,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::param("n_subjects must be positive"));
        }
        if self.n_collections == 0 {
            return Err(Error::param("n_collections must be at least 1"));
        }
        if self.samples_per_subject_per_collection == 0 {
            return Err(Error::param("samples_per_subject_per_collection must be positive"));
        }
        if !(0.0..=1.0).contains(&self.drift_per_collection) {
            return Err(Error::param("drift_per_collection must lie in [0, 1]"));
        }
        if self.image_size < 32 {
            return Err(Error::param("image_size must be at least 32 px"));
        }
        Ok(())
    }
}

/// Quadratic Bezier ridge in normalized ear coordinates.
#[derive(Debug, Clone, Copy)]
struct Ridge {
    ctrl: [[f64; 2]; 3],
    width: f64,
    depth: f64,
}

/// Subject-specific phantom parameters, in normalized ear coordinates where
/// the ear outline is the unit circle (x across, y along the long axis).
#[derive(Debug, Clone)]
pub struct EarShape {
    axis_ratio: f64,
    orientation_deg: f64,
    helix_radius: f64,
    helix_width: f64,
    helix_start: f64,
    helix_span: f64,
    concha_center: [f64; 2],
    concha_radii: [f64; 2],
    canal_radius: f64,
    ridges: Vec<Ridge>,
    tone: [f64; 3],
}

impl EarShape {
    pub fn random(rng: &mut impl Rng) -> Self {
        let n_ridges = rng.random_range(3..=5);
        let ridges = (0..n_ridges)
            .map(|_| {
                let mut point = || {
                    let r = 0.75 * rng.random::<f64>().sqrt();
                    let t = rng.random_range(0.0..2.0 * PI);
                    [r * t.cos(), r * t.sin()]
                };
                let ctrl = [point(), point(), point()];
                Ridge {
                    ctrl,
                    width: rng.random_range(0.04..0.08),
                    depth: rng.random_range(0.35..0.6),
                }
            })
            .collect();
        let base = rng.random_range(150.0..200.0);
        EarShape {
            axis_ratio: rng.random_range(1.5..1.9),
            orientation_deg: rng.random_range(-25.0..25.0),
            helix_radius: rng.random_range(0.68..0.82),
            helix_width: rng.random_range(0.05..0.09),
            helix_start: rng.random_range(-0.4 * PI..0.3 * PI),
            helix_span: rng.random_range(0.9 * PI..1.5 * PI),
            concha_center: [rng.random_range(-0.3..0.3), rng.random_range(-0.25..0.3)],
            concha_radii: [rng.random_range(0.15..0.3), rng.random_range(0.18..0.35)],
            canal_radius: rng.random_range(0.05..0.09),
            ridges,
            tone: [
                base,
                base * rng.random_range(0.8..0.9),
                base * rng.random_range(0.65..0.8),
            ],
        }
    }

    /// Scales every shape parameter by `factor`, keeping features inside the outline.
    pub fn drifted(&self, factor: f64) -> Self {
        let clamp_disk = |p: [f64; 2], limit: f64| {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            if r > limit {
                [p[0] * limit / r, p[1] * limit / r]
            } else {
                p
            }
        };
        let scale = |p: [f64; 2]| clamp_disk([p[0] * factor, p[1] * factor], 0.9);
        EarShape {
            axis_ratio: self.axis_ratio * factor,
            orientation_deg: self.orientation_deg,
            helix_radius: (self.helix_radius * factor).min(0.92),
            helix_width: (self.helix_width * factor).min(0.15),
            helix_start: self.helix_start,
            helix_span: (self.helix_span * factor).min(1.9 * PI),
            concha_center: clamp_disk(
                [self.concha_center[0] * factor, self.concha_center[1] * factor],
                0.55,
            ),
            concha_radii: [
                (self.concha_radii[0] * factor).min(0.45),
                (self.concha_radii[1] * factor).min(0.5),
            ],
            canal_radius: (self.canal_radius * factor).min(0.15),
            ridges: self
                .ridges
                .iter()
                .map(|r| Ridge {
                    ctrl: r.ctrl.map(scale),
                    width: (r.width * factor).min(0.14),
                    depth: r.depth,
                })
                .collect(),
            tone: self.tone,
        }
    }

    /// Darkening factor in `(0, 1]` at normalized point `(u, v)`.
    fn shade(&self, u: f64, v: f64) -> f64 {
        let mut shade = 1.0 - 0.12 * v;
        let rho = (u * u + v * v).sqrt();
        let phi = v.atan2(u);
        let along = (phi - self.helix_start).rem_euclid(2.0 * PI);
        if along <= self.helix_span {
            let d = (rho - self.helix_radius).abs();
            shade *= 1.0 - 0.5 * bump(d, self.helix_width);
        }
        let [cx, cy] = self.concha_center;
        let [rx, ry] = self.concha_radii;
        let e = ((u - cx) / rx).powi(2) + ((v - cy) / ry).powi(2);
        shade *= 1.0 - 0.35 * smoothstep(1.15, 0.85, e);
        let dc = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
        shade *= 1.0 - 0.6 * bump(dc, self.canal_radius);
        for ridge in &self.ridges {
            let d = bezier_distance(&ridge.ctrl, u, v);
            shade *= 1.0 - ridge.depth * bump(d, ridge.width);
        }
        shade
    }
}

fn bump(d: f64, width: f64) -> f64 {
    if d >= width {
        0.0
    } else {
        let t = d / width;
        (1.0 - t * t).powi(2)
    }
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn bezier_distance(ctrl: &[[f64; 2]; 3], u: f64, v: f64) -> f64 {
    const SEGMENTS: usize = 16;
    let at = |t: f64| {
        let s = 1.0 - t;
        [
            s * s * ctrl[0][0] + 2.0 * s * t * ctrl[1][0] + t * t * ctrl[2][0],
            s * s * ctrl[0][1] + 2.0 * s * t * ctrl[1][1] + t * t * ctrl[2][1],
        ]
    };
    let mut best = f64::INFINITY;
    let mut prev = at(0.0);
    for k in 1..=SEGMENTS {
        let next = at(k as f64 / SEGMENTS as f64);
        best = best.min(segment_distance(prev, next, u, v));
        prev = next;
    }
    best
}

fn segment_distance(a: [f64; 2], b: [f64; 2], u: f64, v: f64) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((u - a[0]) * dx + (v - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (px, py) = (a[0] + t * dx - u, a[1] + t * dy - v);
    (px * px + py * py).sqrt()
}

/// Pose and capture conditions for one rendered sample.
#[derive(Debug, Clone, Copy)]
pub struct Capture {
    /// Clockwise in-plane rotation added to the subject's orientation.
    pub rotation_deg: f64,
    pub offset: [f64; 2],
    pub scale: f64,
    pub gain: f64,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl Capture {
    pub fn neutral() -> Self {
        Capture {
            rotation_deg: 0.0,
            offset: [0.0, 0.0],
            scale: 1.0,
            gain: 1.0,
            noise_sigma: 0.0,
            noise_seed: 0,
        }
    }

    fn random(rng: &mut impl Rng) -> Self {
        Capture {
            rotation_deg: rng.random_range(-4.0..4.0),
            offset: [rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04)],
            scale: rng.random_range(0.95..1.05),
            gain: rng.random_range(0.9..1.1),
            noise_sigma: 3.0,
            noise_seed: rng.random(),
        }
    }
}

/// Renders one sample of `shape` on a `size` x `size` canvas and returns the
/// image with its polygon outline. Right ears are mirror images of left ones.
pub fn render_sample(
    shape: &EarShape,
    side: Side,
    size: u32,
    capture: &Capture,
) -> (RgbImage, PolygonAnnotation) {
    let s = size as f64;
    let semi_major = 0.36 * s * capture.scale;
    let semi_minor = semi_major / shape.axis_ratio;
    let center = [
        s / 2.0 + capture.offset[0] * s,
        s / 2.0 + capture.offset[1] * s,
    ];
    let theta = (shape.orientation_deg + capture.rotation_deg).to_radians();
    let (sin, cos) = theta.sin_cos();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(capture.noise_seed);
    let noise = Normal::new(0.0, capture.noise_sigma.max(0.0)).expect("valid sigma");
    let phase = (capture.noise_seed % 1000) as f64 / 1000.0 * 2.0 * PI;

    let mut img = RgbImage::new(size, size);
    for (px, py, pixel) in img.enumerate_pixels_mut() {
        let dx = px as f64 + 0.5 - center[0];
        let dy = py as f64 + 0.5 - center[1];
        // Undo the clockwise rotation (y axis points down).
        let ex = cos * dx + sin * dy;
        let ey = -sin * dx + cos * dy;
        let (u, v) = (ex / semi_minor, ey / semi_major);
        let inside = u * u + v * v <= 1.0;
        let rgb = if inside {
            let shade = shape.shade(u, v) * capture.gain;
            shape.tone.map(|t| t * shade)
        } else {
            let clutter = 90.0
                + 35.0 * (px as f64 * 0.045 + phase).sin() * (py as f64 * 0.037).cos();
            [clutter, clutter * 0.85, clutter * 0.7]
        };
        let floor = if inside { 16.0 } else { 0.0 };
        let n = if capture.noise_sigma > 0.0 {
            noise.sample(&mut noise_rng)
        } else {
            0.0
        };
        *pixel = image::Rgb(rgb.map(|c| (c + n).round().clamp(floor, 255.0) as u8));
    }

    const OUTLINE_VERTICES: usize = 48;
    let points = (0..OUTLINE_VERTICES)
        .map(|k| {
            let t = k as f64 / OUTLINE_VERTICES as f64 * 2.0 * PI;
            let (ex, ey) = (semi_minor * t.cos(), semi_major * t.sin());
            let x = center[0] + cos * ex - sin * ey;
            let y = center[1] + sin * ex + cos * ey;
            [round2(x.clamp(0.0, s)), round2(y.clamp(0.0, s))]
        })
        .collect();
    let mut poly = PolygonAnnotation::new("ear", points);

    if side == Side::R {
        image::imageops::flip_horizontal_in_place(&mut img);
        for p in &mut poly.points {
            p[0] = round2(s - p[0]);
        }
    }
    (img, poly)
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

pub(crate) fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut bytes = Vec::new();
    image::codecs::png::PngEncoder::new(&mut bytes)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .expect("png encoding into memory");
    bytes
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes images, polygon annotations and `manifest.csv` under `out_dir`, and
/// returns the manifest. Output bytes depend only on `cfg`.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    for dir in [out_dir.to_path_buf(), out_dir.join("images"), out_dir.join("annotations")] {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let enrollment = NaiveDate::from_ymd_opt(2021, 9, 1).expect("valid date");

    let per_subject: Vec<Vec<ImageRecord>> = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|index| -> Result<Vec<ImageRecord>> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(index as u64);
            let subject_id = format!("S{:03}", index + 1);
            let shape = EarShape::random(&mut rng);
            let sex = if rng.random_bool(0.5) { Sex::F } else { Sex::M };
            let side = if rng.random_bool(0.5) { Side::L } else { Side::R };
            let base_age_tenths = (rng.random_range(4.0..14.0f64) * 10.0).round();
            let day_offset = rng.random_range(0..28u64);

            let mut records = Vec::new();
            for session in 1..=cfg.n_collections {
                let factor = 1.0 + cfg.drift_per_collection * (session - 1) as f64;
                let drifted = shape.drifted(factor);
                let months = DEFAULT_SESSION_SPACING_MONTHS * (session - 1);
                let date = enrollment
                    .checked_add_months(Months::new(months))
                    .and_then(|d| d.checked_add_days(chrono::Days::new(day_offset)))
                    .expect("date in range");
                let age = (base_age_tenths + 5.0 * (session - 1) as f64) / 10.0;
                for sample in 0..cfg.samples_per_subject_per_collection {
                    let capture = Capture::random(&mut rng);
                    let (img, poly) = render_sample(&drifted, side, cfg.image_size, &capture);
                    let stem = format!("{subject_id}_c{session}_s{sample}");
                    let image_path = PathBuf::from(format!("images/{stem}.png"));
                    let annotation_path = PathBuf::from(format!("annotations/{stem}.json"));
                    write_file(&out_dir.join(&image_path), &encode_png(&img))?;
                    write_file(&out_dir.join(&annotation_path), poly.to_json().as_bytes())?;
                    records.push(ImageRecord {
                        subject_id: subject_id.clone(),
                        session,
                        capture_date: date,
                        age_years: Some(age),
                        sex,
                        side,
                        image_path,
                        annotation_path,
                    });
                }
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;

    let mut records: Vec<ImageRecord> = per_subject.into_iter().flatten().collect();
    // Collection-major order; stable within a subject keeps sample order.
    records.sort_by(|a, b| (a.session, &a.subject_id).cmp(&(b.session, &b.subject_id)));
    let manifest = Manifest::new(records, out_dir);
    manifest.write_csv(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
