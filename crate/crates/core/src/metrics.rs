//! Scoring of detections against ground truth.

use serde::Serialize;

use crate::config::{pq_to_range, wrap_angle, DigitalFreqPair, RadarConfig};
use crate::error::{Error, Result};
use crate::nomp::{Detection, DetectionSet};
use crate::scene::Target;

/// Greedy one-to-one matching: all pairs within `tol = (δp, δq)` are sorted
/// by normalised wrapped distance and taken nearest first. Returns
/// `(truth index, estimate index)` pairs.
pub fn match_frequencies(truth: &[DigitalFreqPair], est: &[DigitalFreqPair], tol: (f64, f64)) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, t) in truth.iter().enumerate() {
        for (j, e) in est.iter().enumerate() {
            let dp = wrap_angle(t.p - e.p).abs();
            let dq = wrap_angle(t.q - e.q).abs();
            if dp <= tol.0 && dq <= tol.1 {
                pairs.push(((dp / tol.0).hypot(dq / tol.1), i, j));
            }
        }
    }
    greedy(pairs, truth.len(), est.len())
}

fn greedy(mut pairs: Vec<(f64, usize, usize)>, nt: usize, ne: usize) -> Vec<(usize, usize)> {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_t, mut used_e) = (vec![false; nt], vec![false; ne]);
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !used_t[i] && !used_e[j] {
            used_t[i] = true;
            used_e[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Fraction of truths matched within half a grid cell on each axis.
pub fn hit_rate(truth: &[DigitalFreqPair], est: &[DigitalFreqPair], config: &RadarConfig) -> Result<f64> {
    hit_rate_with(truth, est, config.half_cell())
}

pub fn hit_rate_with(truth: &[DigitalFreqPair], est: &[DigitalFreqPair], tol: (f64, f64)) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::NoTruth);
    }
    Ok(match_frequencies(truth, est, tol).len() as f64 / truth.len() as f64)
}

/// Model order exact and every truth hit.
pub fn success_rate_trial(truth: &[DigitalFreqPair], result: &DetectionSet, config: &RadarConfig) -> bool {
    success_with(truth, result, config.half_cell())
}

pub fn success_with(truth: &[DigitalFreqPair], result: &DetectionSet, tol: (f64, f64)) -> bool {
    let est: Vec<DigitalFreqPair> = result.detections.iter().map(|d| d.pq).collect();
    result.len() == truth.len() && hit_rate_with(truth, &est, tol).is_ok_and(|h| h == 1.0)
}

pub fn rmse(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return f64::NAN;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RangeVelocityError {
    pub matched: usize,
    pub range_rmse: f64,
    pub velocity_rmse: f64,
}

/// Matches detections to targets in physical units (nearest first, distance
/// normalised by `R_u` and `v_u`) and reports the RMSEs over the matches.
pub fn range_velocity_rmse(truth: &[Target], detections: &[Detection], config: &RadarConfig) -> RangeVelocityError {
    range_velocity_rmse_within(truth, detections, config, (f64::INFINITY, f64::INFINITY))
}

/// As [`range_velocity_rmse`], but a pair only matches when the range and
/// velocity errors are within `gate` (m, m/s).
pub fn range_velocity_rmse_within(
    truth: &[Target],
    detections: &[Detection],
    config: &RadarConfig,
    gate: (f64, f64),
) -> RangeVelocityError {
    let m = match_range_velocity(truth, detections, config, gate);
    let dr: Vec<f64> = m.iter().map(|x| x.range_error).collect();
    let dv: Vec<f64> = m.iter().map(|x| x.velocity_error).collect();
    RangeVelocityError {
        matched: m.len(),
        range_rmse: rmse(&dr),
        velocity_rmse: rmse(&dv),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhysicalMatch {
    pub truth: usize,
    pub detection: usize,
    /// Truth minus estimate, m.
    pub range_error: f64,
    /// Truth minus estimate, m/s.
    pub velocity_error: f64,
}

/// The matching behind [`range_velocity_rmse_within`].
pub fn match_range_velocity(
    truth: &[Target],
    detections: &[Detection],
    config: &RadarConfig,
    gate: (f64, f64),
) -> Vec<PhysicalMatch> {
    let est: Vec<(f64, f64)> = detections.iter().map(|d| pq_to_range(d.pq, d.bin_l, config)).collect();
    let (ru, vu) = (config.unambiguous_range(), config.unambiguous_velocity());
    let mut pairs = Vec::new();
    for (i, t) in truth.iter().enumerate() {
        for (j, e) in est.iter().enumerate() {
            let (dr, dv) = (t.range - e.0, t.velocity - e.1);
            if dr.abs() <= gate.0 && dv.abs() <= gate.1 {
                pairs.push(((dr / ru).hypot(dv / vu), i, j));
            }
        }
    }
    greedy(pairs, truth.len(), est.len())
        .into_iter()
        .map(|(i, j)| PhysicalMatch {
            truth: i,
            detection: j,
            range_error: truth[i].range - est[j].0,
            velocity_error: truth[i].velocity - est[j].1,
        })
        .collect()
}

/// Normal-approximation 95% interval of a proportion.
pub fn proportion_ci(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let p = successes as f64 / trials as f64;
    let h = 1.96 * (p * (1.0 - p) / trials as f64).sqrt();
    ((p - h).max(0.0), (p + h).min(1.0))
}
