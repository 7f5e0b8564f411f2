//! Matching an estimated inventory against ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::Point3;
use crate::pipeline::{FilterRun, FrameReport, StageTimes};
use crate::sim::GroundTruthTree;
use crate::tracker::{TreeDescriptor, TreeId};

pub const DEFAULT_MATCH_RADIUS: f64 = 1.0;
/// Errors farther than this many interquartile ranges outside the
/// quartiles are outliers.
pub const OUTLIER_IQR_FACTOR: f64 = 3.0;

/// The part of a tree estimate that evaluation looks at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub id: TreeId,
    pub base: Option<Point3>,
    pub dbh: Option<f64>,
}

impl From<&TreeDescriptor> for Estimate {
    fn from(d: &TreeDescriptor) -> Self {
        Self {
            id: d.id,
            base: d.base,
            dbh: d.dbh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub estimate_id: TreeId,
    pub truth_id: u64,
    /// Horizontal distance between the two bases, meters.
    pub distance: f64,
    pub true_dbh: f64,
    pub estimated_dbh: Option<f64>,
    /// Estimated minus true DBH, when an estimate exists.
    pub error: Option<f64>,
    pub outlier: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingStat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl TimingStat {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self::default();
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
        Self {
            mean,
            std: var.sqrt(),
            count: n,
        }
    }
}

/// Per-stage statistics over frames, seconds. The elevation filter is
/// summarized per run rather than per frame.
pub fn timing_summary(reports: &[FrameReport], filter_runs: &[FilterRun]) -> BTreeMap<String, TimingStat> {
    let mut out = BTreeMap::new();
    for (k, name) in StageTimes::NAMES.iter().enumerate() {
        let samples: Vec<f64> = reports.iter().map(|r| r.times.values()[k]).collect();
        out.insert(name.to_string(), TimingStat::from_samples(&samples));
    }
    let filter: Vec<f64> = filter_runs.iter().map(|r| r.seconds).collect();
    out.insert("elevation_filter".into(), TimingStat::from_samples(&filter));
    out
}

/// Timing written by a pipeline run and folded into evaluation reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub frames: usize,
    pub stages: BTreeMap<String, TimingStat>,
}

impl TimingReport {
    pub fn new(reports: &[FrameReport], filter_runs: &[FilterRun]) -> Self {
        Self {
            frames: reports.len(),
            stages: timing_summary(reports, filter_runs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub match_radius: f64,
    pub truth_count: usize,
    pub estimate_count: usize,
    /// Truth trees matched to an estimate.
    pub detected: usize,
    /// Matched truth trees whose estimate carries a DBH.
    pub measured: usize,
    pub pairs: Vec<MatchedPair>,
    pub missed: Vec<u64>,
    pub unmatched_estimates: Vec<TreeId>,
    /// `None` when no matched pair has a DBH.
    pub rmse: Option<f64>,
    pub rmse_without_outliers: Option<f64>,
    pub outlier_count: usize,
    pub timing: BTreeMap<String, TimingStat>,
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn rmse(errors: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = errors.fold((0.0, 0usize), |(s, n), e| (s + e * e, n + 1));
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// Greedy one-to-one matching on horizontal base distance: candidate pairs
/// within `match_radius` are taken closest first. Estimates without a base
/// cannot match.
pub fn evaluate(estimates: &[Estimate], truth: &[GroundTruthTree], match_radius: f64) -> EvaluationReport {
    let mut candidates = Vec::new();
    for (ei, e) in estimates.iter().enumerate() {
        let Some(base) = e.base else { continue };
        for (ti, t) in truth.iter().enumerate() {
            let d = (base.xy() - t.base.xy()).norm();
            if d <= match_radius {
                candidates.push((d, ei, ti));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut est_used = vec![false; estimates.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut pairs = Vec::new();
    for (d, ei, ti) in candidates {
        if est_used[ei] || truth_used[ti] {
            continue;
        }
        est_used[ei] = true;
        truth_used[ti] = true;
        let (e, t) = (&estimates[ei], &truth[ti]);
        pairs.push(MatchedPair {
            estimate_id: e.id,
            truth_id: t.id,
            distance: d,
            true_dbh: t.dbh,
            estimated_dbh: e.dbh,
            error: e.dbh.map(|v| v - t.dbh),
            outlier: false,
        });
    }
    pairs.sort_by_key(|p| p.truth_id);

    let mut errors: Vec<f64> = pairs.iter().filter_map(|p| p.error).collect();
    errors.sort_by(f64::total_cmp);
    if !errors.is_empty() {
        let (q1, q3) = (quantile(&errors, 0.25), quantile(&errors, 0.75));
        let iqr = q3 - q1;
        let (lo, hi) = (q1 - OUTLIER_IQR_FACTOR * iqr, q3 + OUTLIER_IQR_FACTOR * iqr);
        for p in &mut pairs {
            p.outlier = p.error.is_some_and(|e| e < lo || e > hi);
        }
    }
    let measured = pairs.iter().filter(|p| p.error.is_some()).count();
    EvaluationReport {
        match_radius,
        truth_count: truth.len(),
        estimate_count: estimates.len(),
        detected: pairs.len(),
        measured,
        missed: truth
            .iter()
            .zip(&truth_used)
            .filter(|(_, u)| !**u)
            .map(|(t, _)| t.id)
            .collect(),
        unmatched_estimates: estimates
            .iter()
            .zip(&est_used)
            .filter(|(_, u)| !**u)
            .map(|(e, _)| e.id)
            .collect(),
        rmse: rmse(pairs.iter().filter_map(|p| p.error)),
        rmse_without_outliers: rmse(pairs.iter().filter(|p| !p.outlier).filter_map(|p| p.error)),
        outlier_count: pairs.iter().filter(|p| p.outlier).count(),
        pairs,
        timing: BTreeMap::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn truth(n: usize) -> Vec<GroundTruthTree> {
        (0..n)
            .map(|i| GroundTruthTree {
                id: i as u64,
                base: Point3::new(4.0 * i as f64, 1.0, 0.2),
                dbh: 0.2 + 0.03 * i as f64,
                axis: Vec3::z(),
            })
            .collect()
    }

    fn perfect(truth: &[GroundTruthTree]) -> Vec<Estimate> {
        truth
            .iter()
            .map(|t| Estimate {
                id: 100 + t.id,
                base: Some(t.base),
                dbh: Some(t.dbh),
            })
            .collect()
    }

    #[test]
    fn perfect_inventory() {
        let t = truth(8);
        let r = evaluate(&perfect(&t), &t, DEFAULT_MATCH_RADIUS);
        assert_eq!((r.detected, r.measured, r.truth_count), (8, 8, 8));
        assert_eq!(r.rmse, Some(0.0));
        assert!(r.missed.is_empty() && r.unmatched_estimates.is_empty());
    }

    #[test]
    fn empty_inventory() {
        let t = truth(5);
        let r = evaluate(&[], &t, DEFAULT_MATCH_RADIUS);
        assert_eq!(r.detected, 0);
        assert_eq!(r.rmse, None);
        assert_eq!(r.missed, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn one_error_among_ten() {
        let t = truth(10);
        let mut e = perfect(&t);
        e[3].dbh = Some(e[3].dbh.unwrap() + 0.10);
        let r = evaluate(&e, &t, DEFAULT_MATCH_RADIUS);
        assert!((r.rmse.unwrap() - 0.10 / 10f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.outlier_count, 1);
        assert!(r.rmse_without_outliers.unwrap() < 1e-12);
    }

    #[test]
    fn matching_is_one_to_one_and_closest_first() {
        let t = truth(2);
        let near = |id, dx: f64| Estimate {
            id,
            base: Some(t[0].base + Vec3::new(dx, 0.0, 0.0)),
            dbh: None,
        };
        let r = evaluate(&[near(1, 0.5), near(2, 0.1)], &t, DEFAULT_MATCH_RADIUS);
        assert_eq!(r.detected, 1);
        assert_eq!(r.pairs[0].estimate_id, 2);
        assert_eq!(r.unmatched_estimates, vec![1]);
        assert_eq!(r.measured, 0);
        assert_eq!(r.rmse, None);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.75), 3.25);
        assert_eq!(quantile(&[5.0], 0.5), 5.0);
    }

    #[test]
    fn timing_stats() {
        let s = TimingStat::from_samples(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std, s.count), (2.0, 1.0, 2));
    }
}
