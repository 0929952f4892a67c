use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ScoreSet;
use crate::error::{Error, Result};

/// Accept when `distance <= tau`, or accept nothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Accept(f64),
    RejectAll,
}

impl Threshold {
    pub fn accepts(self, distance: f64) -> bool {
        match self {
            Threshold::Accept(tau) => distance <= tau,
            Threshold::RejectAll => false,
        }
    }
}

const REJECT_ALL: &str = "reject_all";

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Accept(t) => s.serialize_f64(*t),
            Threshold::RejectAll => s.serialize_str(REJECT_ALL),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Value(f64),
            Marker(String),
        }
        match Raw::deserialize(d)? {
            Raw::Value(t) => Ok(Threshold::Accept(t)),
            Raw::Marker(m) if m == REJECT_ALL => Ok(Threshold::RejectAll),
            Raw::Marker(m) => Err(serde::de::Error::custom(format!("unknown threshold marker {m:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub ta: usize,
    pub fr: usize,
    pub fa: usize,
    pub tr: usize,
}

impl Counts {
    pub fn genuine(&self) -> usize {
        self.ta + self.fr
    }

    pub fn impostor(&self) -> usize {
        self.fa + self.tr
    }

    /// `None` without genuine trials.
    pub fn tar(&self) -> Option<f64> {
        (self.genuine() > 0).then(|| self.ta as f64 / self.genuine() as f64)
    }

    /// `None` without impostor trials.
    pub fn far(&self) -> Option<f64> {
        (self.impostor() > 0).then(|| self.fa as f64 / self.impostor() as f64)
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts {
            ta: self.ta + o.ta,
            fr: self.fr + o.fr,
            fa: self.fa + o.fa,
            tr: self.tr + o.tr,
        }
    }
}

/// Largest `c` with `c / n_impostor <= target_far`, i.e. `floor(target * n)`.
/// Compared as a quotient because the product can land just under an
/// integer (`0.29 * 100` is `28.999...`).
pub fn impostor_budget(n_impostor: usize, target_far: f64) -> usize {
    if n_impostor == 0 {
        return 0;
    }
    let n = n_impostor as f64;
    let fits = |c: usize| c as f64 / n <= target_far;
    let mut c = ((target_far * n).floor().max(0.0) as usize).min(n_impostor);
    while c < n_impostor && fits(c + 1) {
        c += 1;
    }
    while c > 0 && !fits(c) {
        c -= 1;
    }
    c
}

/// Largest impostor distance `tau` whose acceptance count stays within
/// `floor(target_far * n_impostor)`; `RejectAll` when the budget is zero or
/// ties at the smallest distance already exceed it.
pub fn calibrate_threshold(scores: &ScoreSet, target_far: f64) -> Result<Threshold> {
    if !(0.0..=1.0).contains(&target_far) {
        return Err(Error::param(format!("target_far {target_far} outside [0, 1]")));
    }
    let mut imp = scores.impostor_distances();
    if imp.is_empty() {
        return Err(Error::input("threshold calibration needs impostor trials"));
    }
    imp.sort_by(f64::total_cmp);
    let budget = impostor_budget(imp.len(), target_far);
    if budget == imp.len() {
        return Ok(Threshold::Accept(imp[imp.len() - 1]));
    }
    // Every accepted value must lie strictly below the first rejected one.
    let first_over = imp[budget];
    let below = imp.partition_point(|&d| d < first_over);
    Ok(match below {
        0 => Threshold::RejectAll,
        n => Threshold::Accept(imp[n - 1]),
    })
}

pub fn compute_rates(scores: &ScoreSet, threshold: Threshold) -> Counts {
    let mut c = Counts::default();
    for (t, d) in scores.iter() {
        match (t.genuine, threshold.accepts(d)) {
            (true, true) => c.ta += 1,
            (true, false) => c.fr += 1,
            (false, true) => c.fa += 1,
            (false, false) => c.tr += 1,
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub far: f64,
    pub tar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub eer: f64,
}

impl RocCurve {
    /// TAR where the sweep first reaches the largest FAR not above `far`.
    /// Thresholds are impostor distances, so this is the operating point
    /// `calibrate_threshold` picks.
    pub fn tar_at(&self, far: f64) -> f64 {
        let best = self
            .points
            .iter()
            .map(|p| p.far)
            .filter(|&f| f <= far)
            .fold(0.0, f64::max);
        self.points
            .iter()
            .find(|p| p.far == best)
            .map_or(0.0, |p| p.tar)
    }
}

/// Sweeps `tau` over `-inf`, every distinct distance ascending, and `+inf`.
pub fn roc_curve(scores: &ScoreSet) -> Result<RocCurve> {
    let n_gen = scores.genuine_count();
    let n_imp = scores.impostor_count();
    if n_gen == 0 || n_imp == 0 {
        return Err(Error::input("ROC needs both genuine and impostor trials"));
    }
    let mut sorted: Vec<(f64, bool)> = scores.iter().map(|(t, d)| (d, t.genuine)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut points = vec![RocPoint { far: 0.0, tar: 0.0 }];
    let (mut ta, mut fa) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let d = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == d {
            if sorted[i].1 {
                ta += 1;
            } else {
                fa += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            far: fa as f64 / n_imp as f64,
            tar: ta as f64 / n_gen as f64,
        });
    }
    points.push(RocPoint { far: 1.0, tar: 1.0 });
    let eer = equal_error_rate(&points);
    Ok(RocCurve { points, eer })
}

/// FAR where `far - frr` changes sign, interpolated linearly between the
/// bracketing sweep points. `far - frr = far + tar - 1` is non-decreasing
/// along the sweep and runs from -1 to 1.
fn equal_error_rate(points: &[RocPoint]) -> f64 {
    let diff = |p: &RocPoint| p.far + p.tar - 1.0;
    let i = points
        .iter()
        .position(|p| diff(p) >= 0.0)
        .expect("sweep ends at (1, 1)");
    let hi = points[i];
    if i == 0 || diff(&hi) == 0.0 {
        return hi.far;
    }
    let lo = points[i - 1];
    let (dl, dh) = (diff(&lo), diff(&hi));
    lo.far + (hi.far - lo.far) * (-dl / (dh - dl))
}
