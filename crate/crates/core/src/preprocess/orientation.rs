use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::dataset::BinaryMask;
use crate::error::{Error, Result};

/// Eigenvalue ratio below which a foreground is treated as isotropic.
pub const DEGENERACY_RATIO: f64 = 1.05;

/// Major principal axis of a foreground region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientationEstimate {
    /// Clockwise from image-vertical, in `(-90, 90]`.
    pub angle_deg: f64,
    /// Set when the covariance is nearly isotropic; the angle is then 0.
    pub degenerate: bool,
}

pub fn estimate_orientation(mask: &BinaryMask) -> Result<OrientationEstimate> {
    let points = mask.foreground_points();
    if points.len() < 2 {
        return Err(Error::input(format!(
            "orientation needs at least 2 foreground pixels, got {}",
            points.len()
        )));
    }
    orientation_from_points(&points)
}

/// Principal-axis angle of a point cloud in image coordinates (y down).
pub fn orientation_from_points(points: &[(f64, f64)]) -> Result<OrientationEstimate> {
    if points.len() < 2 {
        return Err(Error::input("orientation needs at least 2 points"));
    }
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x, sy + y));
    let (mx, my) = (mx / n, my / n);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let (sxx, syy, sxy) = (sxx / n, syy / n, sxy / n);

    let mean = 0.5 * (sxx + syy);
    let spread = (0.25 * (sxx - syy).powi(2) + sxy * sxy).sqrt();
    let (lambda_max, lambda_min) = (mean + spread, mean - spread);
    if lambda_max <= 0.0 || lambda_max < DEGENERACY_RATIO * lambda_min {
        return Ok(OrientationEstimate {
            angle_deg: 0.0,
            degenerate: true,
        });
    }

    // Major-axis angle from +x; with y pointing down this is clockwise.
    let from_x = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    // Vertical sits at -90 degrees from +x.
    let mut from_vertical = from_x + FRAC_PI_2;
    if from_vertical > FRAC_PI_2 {
        from_vertical -= PI;
    }
    Ok(OrientationEstimate {
        angle_deg: from_vertical.to_degrees(),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_points(w: u32, h: u32) -> Vec<(f64, f64)> {
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (x as f64 + 0.5, y as f64 + 0.5)))
            .collect()
    }

    /// Independent 2x2 symmetric eigen-decomposition via the characteristic
    /// polynomial and the `(A - lambda_min I)` column trick.
    fn oracle_angle(points: &[(f64, f64)]) -> f64 {
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let a = points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>() / n;
        let d = points.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>() / n;
        let b = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / n;
        let tr = a + d;
        let det = a * d - b * b;
        let lmax = tr / 2.0 + (tr * tr / 4.0 - det).sqrt();
        // Eigenvector for lmax: (b, lmax - a) or (lmax - d, b).
        let (ex, ey) = if b.abs() > 1e-12 { (b, lmax - a) } else if a >= d { (1.0, 0.0) } else { (0.0, 1.0) };
        // Clockwise angle from up (0, -1) for a screen vector (ex, ey).
        let mut deg = ex.atan2(-ey).to_degrees();
        while deg > 90.0 {
            deg -= 180.0;
        }
        while deg <= -90.0 {
            deg += 180.0;
        }
        deg
    }

    #[test]
    fn vertical_rectangle_is_zero() {
        let est = orientation_from_points(&rect_points(10, 40)).unwrap();
        assert_eq!(est.angle_deg, 0.0);
        assert!(!est.degenerate);
    }

    #[test]
    fn horizontal_rectangle_is_ninety() {
        let est = orientation_from_points(&rect_points(40, 10)).unwrap();
        assert!((est.angle_deg - 90.0).abs() < 1e-9, "{}", est.angle_deg);
    }

    #[test]
    fn rotated_rectangle_matches_oracle() {
        let pts = rect_points(10, 40);
        let (cx, cy) = (5.0, 20.0);
        for deg in [30.0f64, -30.0, 60.0, -75.0, 5.0] {
            let (s, c) = deg.to_radians().sin_cos();
            let rotated: Vec<_> = pts
                .iter()
                .map(|&(x, y)| {
                    let (dx, dy) = (x - cx, y - cy);
                    (cx + c * dx - s * dy, cy + s * dx + c * dy)
                })
                .collect();
            let est = orientation_from_points(&rotated).unwrap();
            assert!((est.angle_deg - deg).abs() <= 0.5, "{deg}: {}", est.angle_deg);
            assert!((est.angle_deg - oracle_angle(&rotated)).abs() < 1e-6);
        }
    }

    #[test]
    fn disk_is_degenerate() {
        let mask = BinaryMask::from_fn(41, 41, |x, y| {
            let (dx, dy) = (x as f64 - 20.0, y as f64 - 20.0);
            dx * dx + dy * dy <= 400.0
        });
        let est = estimate_orientation(&mask).unwrap();
        assert!(est.degenerate);
        assert_eq!(est.angle_deg, 0.0);
    }

    #[test]
    fn needs_two_pixels() {
        let mask = BinaryMask::from_fn(5, 5, |x, y| x == 2 && y == 2);
        assert!(estimate_orientation(&mask).is_err());
    }
}
