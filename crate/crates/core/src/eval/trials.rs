use std::fmt;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::{ImageRecord, Manifest};
use crate::error::{Error, Result};

/// Probe ages at or below this many years fall in the younger group.
pub const AGE_SPLIT_YEARS: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeGroup {
    Le8,
    Gt8,
    Unknown,
}

impl AgeGroup {
    pub fn from_age(age: Option<f64>) -> AgeGroup {
        match age {
            Some(a) if a <= AGE_SPLIT_YEARS => AgeGroup::Le8,
            Some(_) => AgeGroup::Gt8,
            None => AgeGroup::Unknown,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgeGroup::Le8 => "le8",
            AgeGroup::Gt8 => "gt8",
            AgeGroup::Unknown => "unknown",
        }
    }
}

impl fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Protocol {
    /// All unordered pairs inside one session.
    Within { session: u32 },
    /// All ordered (enroll, probe) pairs across two sessions.
    Cross { enroll: u32, probe: u32 },
}

impl Protocol {
    /// Short file-name friendly label, e.g. `within_s1` or `cross_s1_s4`.
    pub fn label(&self) -> String {
        match self {
            Protocol::Within { session } => format!("within_s{session}"),
            Protocol::Cross { enroll, probe } => format!("cross_s{enroll}_s{probe}"),
        }
    }

    pub fn sessions(&self) -> Vec<u32> {
        match *self {
            Protocol::Within { session } => vec![session],
            Protocol::Cross { enroll, probe } => vec![enroll, probe],
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub enroll_key: String,
    pub probe_key: String,
    pub genuine: bool,
    pub gap_months: u32,
    pub probe_age_years: Option<f64>,
    pub age_group: AgeGroup,
}

/// Trials plus parallel distances.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    trials: Vec<Trial>,
    distances: Vec<f64>,
}

impl ScoreSet {
    pub fn new(trials: Vec<Trial>, distances: Vec<f64>) -> Result<ScoreSet> {
        if trials.len() != distances.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} trials vs {} distances",
                trials.len(),
                distances.len()
            )));
        }
        if let Some(d) = distances.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::input(format!("distance {d} is not finite and nonnegative")));
        }
        Ok(ScoreSet { trials, distances })
    }

    /// Score set carrying only genuine flags; handy for metric work.
    pub fn from_labeled(genuine: &[bool], distances: Vec<f64>) -> Result<ScoreSet> {
        let trials = genuine
            .iter()
            .enumerate()
            .map(|(i, &g)| Trial {
                enroll_key: format!("e{i}"),
                probe_key: format!("p{i}"),
                genuine: g,
                gap_months: 0,
                probe_age_years: None,
                age_group: AgeGroup::Unknown,
            })
            .collect();
        ScoreSet::new(trials, distances)
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Trial, f64)> {
        self.trials.iter().zip(self.distances.iter().copied())
    }

    pub fn genuine_count(&self) -> usize {
        self.trials.iter().filter(|t| t.genuine).count()
    }

    pub fn impostor_count(&self) -> usize {
        self.len() - self.genuine_count()
    }

    pub fn impostor_distances(&self) -> Vec<f64> {
        self.iter().filter(|(t, _)| !t.genuine).map(|(_, d)| d).collect()
    }

    pub fn filter(&self, keep: impl Fn(&Trial) -> bool) -> ScoreSet {
        let (trials, distances) = self
            .iter()
            .filter(|(t, _)| keep(t))
            .map(|(t, d)| (t.clone(), d))
            .unzip();
        ScoreSet { trials, distances }
    }

    /// Writes `enroll_key,probe_key,genuine,gap_months,age_group,distance`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::input(format!("writing scores: {e}"));
        w.write_record(["enroll_key", "probe_key", "genuine", "gap_months", "age_group", "distance"])
            .map_err(csv_err)?;
        for (t, d) in self.iter() {
            w.write_record([
                t.enroll_key.as_str(),
                t.probe_key.as_str(),
                if t.genuine { "true" } else { "false" },
                &t.gap_months.to_string(),
                t.age_group.as_str(),
                &d.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::input(format!("writing scores: {e}")))?;
        Ok(())
    }
}

/// Euclidean distances between all rows. Each pair is computed once and
/// mirrored, so the result is exactly symmetric.
pub fn pairwise_distances(x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("distance input".into()));
    }
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[[i, j]] = s.sqrt();
            d[[j, i]] = d[[i, j]];
        }
    }
    Ok(d)
}

fn session_records(manifest: &Manifest, session: u32) -> Result<Vec<&ImageRecord>> {
    let recs: Vec<&ImageRecord> = manifest.records.iter().filter(|r| r.session == session).collect();
    if recs.is_empty() {
        return Err(Error::input(format!("session {session} has no records")));
    }
    Ok(recs)
}

fn trial(manifest: &Manifest, enroll: &ImageRecord, probe: &ImageRecord) -> Trial {
    Trial {
        enroll_key: enroll.key(),
        probe_key: probe.key(),
        genuine: enroll.subject_id == probe.subject_id,
        gap_months: manifest.session_spacing_months * probe.session.abs_diff(enroll.session),
        probe_age_years: probe.age_years,
        age_group: AgeGroup::from_age(probe.age_years),
    }
}

/// Records taking part in `protocol`, enrollment session first, in manifest order.
pub fn protocol_records<'a>(manifest: &'a Manifest, protocol: &Protocol) -> Result<Vec<&'a ImageRecord>> {
    match *protocol {
        Protocol::Within { session } => session_records(manifest, session),
        Protocol::Cross { enroll, probe } => {
            if enroll == probe {
                return Err(Error::param(format!(
                    "cross protocol needs two different sessions, got {enroll} twice"
                )));
            }
            let mut recs = session_records(manifest, enroll)?;
            recs.extend(session_records(manifest, probe)?);
            Ok(recs)
        }
    }
}

pub fn build_trials(manifest: &Manifest, protocol: &Protocol) -> Result<Vec<Trial>> {
    match *protocol {
        Protocol::Within { session } => {
            let recs = session_records(manifest, session)?;
            let mut out = Vec::with_capacity(recs.len() * recs.len().saturating_sub(1) / 2);
            for (i, a) in recs.iter().enumerate() {
                for b in &recs[i + 1..] {
                    out.push(trial(manifest, a, b));
                }
            }
            Ok(out)
        }
        Protocol::Cross { enroll, probe } => {
            if enroll == probe {
                return Err(Error::param(format!(
                    "cross protocol needs two different sessions, got {enroll} twice"
                )));
            }
            let enrolls = session_records(manifest, enroll)?;
            let probes = session_records(manifest, probe)?;
            Ok(enrolls
                .iter()
                .flat_map(|e| probes.iter().map(move |p| (*e, *p)))
                .map(|(e, p)| trial(manifest, e, p))
                .collect())
        }
    }
}

/// Within-session experiments for every session, then `anchor -> j` for
/// every other session.
pub fn enumerate_experiments(manifest: &Manifest, anchor: u32, within: bool, cross: bool) -> Vec<Protocol> {
    let sessions = manifest.sessions();
    let mut out = Vec::new();
    if within {
        out.extend(sessions.iter().map(|&s| Protocol::Within { session: s }));
    }
    if cross && sessions.contains(&anchor) {
        out.extend(
            sessions
                .iter()
                .filter(|&&s| s != anchor)
                .map(|&s| Protocol::Cross { enroll: anchor, probe: s }),
        );
    }
    out
}
