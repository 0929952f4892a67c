use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{calibrate_threshold, compute_rates, roc_curve, Counts, RocPoint, Threshold};
use super::{AgeGroup, Protocol, ScoreSet};
use crate::error::{Error, Result};

/// Rates for one slice of trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    /// Absent for pooled tables, which sum counts from separately calibrated slices.
    pub threshold: Option<Threshold>,
    pub counts: Counts,
    pub tar: Option<f64>,
    pub far: Option<f64>,
    pub n_genuine: usize,
    pub n_impostor: usize,
}

impl GroupStats {
    pub fn from_counts(threshold: Option<Threshold>, counts: Counts) -> GroupStats {
        GroupStats {
            threshold,
            counts,
            tar: counts.tar(),
            far: counts.far(),
            n_genuine: counts.genuine(),
            n_impostor: counts.impostor(),
        }
    }

    /// Calibrates on this slice's impostors; without impostors the slice is
    /// left uncalibrated and every trial counts as rejected.
    fn calibrated(scores: &ScoreSet, target_far: f64) -> Result<GroupStats> {
        if scores.impostor_count() == 0 {
            return Ok(GroupStats::from_counts(None, compute_rates(scores, Threshold::RejectAll)));
        }
        let t = calibrate_threshold(scores, target_far)?;
        Ok(GroupStats::from_counts(Some(t), compute_rates(scores, t)))
    }

    pub fn populated(&self) -> bool {
        self.n_genuine > 0 && self.n_impostor > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub protocol: Protocol,
    /// Why the experiment could not be scored, if it could not.
    pub flagged: Option<String>,
    pub threshold: Option<Threshold>,
    pub counts: Counts,
    pub tar: Option<f64>,
    pub far: Option<f64>,
    pub eer: Option<f64>,
    pub roc: Vec<RocPoint>,
    pub per_gap: BTreeMap<u32, GroupStats>,
    pub per_age_group: BTreeMap<AgeGroup, GroupStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub target_far: f64,
    pub experiments: Vec<ExperimentReport>,
    /// Counts summed over experiments sharing a gap.
    pub per_gap: BTreeMap<u32, GroupStats>,
    /// Counts summed over experiments per probe age group.
    pub per_age_group: BTreeMap<AgeGroup, GroupStats>,
}

fn by_key<K: Ord + Copy>(
    scores: &ScoreSet,
    key: impl Fn(&super::Trial) -> K,
    target_far: f64,
) -> Result<BTreeMap<K, GroupStats>> {
    let mut keys: Vec<K> = scores.trials().iter().map(&key).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|k| Ok((k, GroupStats::calibrated(&scores.filter(|t| key(t) == k), target_far)?)))
        .collect()
}

pub fn evaluate_experiment(protocol: Protocol, scores: &ScoreSet, target_far: f64) -> Result<ExperimentReport> {
    let flagged = match (scores.genuine_count(), scores.impostor_count()) {
        (0, 0) => Some("no trials".to_string()),
        (0, _) => Some("no genuine trials".to_string()),
        (_, 0) => Some("no impostor trials".to_string()),
        _ => None,
    };
    if let Some(reason) = flagged {
        log::warn!("experiment {protocol} flagged: {reason}");
        return Ok(ExperimentReport {
            protocol,
            flagged: Some(reason),
            threshold: None,
            counts: Counts::default(),
            tar: None,
            far: None,
            eer: None,
            roc: Vec::new(),
            per_gap: BTreeMap::new(),
            per_age_group: BTreeMap::new(),
        });
    }
    let threshold = calibrate_threshold(scores, target_far)?;
    let counts = compute_rates(scores, threshold);
    let roc = roc_curve(scores)?;
    Ok(ExperimentReport {
        protocol,
        flagged: None,
        threshold: Some(threshold),
        counts,
        tar: counts.tar(),
        far: counts.far(),
        eer: Some(roc.eer),
        roc: roc.points,
        per_gap: by_key(scores, |t| t.gap_months, target_far)?,
        // Each age group is filtered first and calibrated on its own impostors.
        per_age_group: by_key(scores, |t| t.age_group, target_far)?,
    })
}

fn pooled<K: Ord + Copy>(tables: impl Iterator<Item = (K, Counts)>) -> BTreeMap<K, GroupStats> {
    let mut sums: BTreeMap<K, Counts> = BTreeMap::new();
    for (k, c) in tables {
        let e = sums.entry(k).or_default();
        *e = *e + c;
    }
    sums.into_iter()
        .map(|(k, c)| (k, GroupStats::from_counts(None, c)))
        .collect()
}

/// Calibrates and scores every experiment independently, then pools counts
/// per gap and per age group.
pub fn run_protocol(experiments: Vec<(Protocol, ScoreSet)>, target_far: f64) -> Result<EvalReport> {
    if !(target_far > 0.0 && target_far <= 1.0) {
        return Err(Error::param(format!("target_far {target_far} outside (0, 1]")));
    }
    let reports: Vec<ExperimentReport> = experiments
        .par_iter()
        .map(|(p, s)| evaluate_experiment(*p, s, target_far))
        .collect::<Result<_>>()?;
    let scored = || reports.iter().filter(|r| r.flagged.is_none());
    let per_gap = pooled(scored().flat_map(|r| r.per_gap.iter().map(|(k, g)| (*k, g.counts))));
    let per_age_group = pooled(scored().flat_map(|r| r.per_age_group.iter().map(|(k, g)| (*k, g.counts))));
    Ok(EvalReport {
        target_far,
        experiments: reports,
        per_gap,
        per_age_group,
    })
}
