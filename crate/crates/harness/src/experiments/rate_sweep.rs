//! Hit-rate and success-rate versus received SNR for the three estimators.
//!
//! Each method is scored twice: with the half-cell tolerance of its own grid
//! and with the common tolerance of the configured (oversampled) grid.

use anyhow::Result;
use rayon::prelude::*;
use serde::Serialize;

use nomp_far_core::config::coarse_bin_index;
use nomp_far_core::metrics::{hit_rate_with, proportion_ci, success_with};
use nomp_far_core::scene::refinement_scenario;
use nomp_far_core::DigitalFreqPair;

use super::{synth_one, to_value, truth_pq, Estimator, Outcome};
use crate::context::RunContext;
use crate::output::CsvFile;

pub const DEFAULT_TRIALS: usize = 200;

pub fn default_snrs() -> Vec<f64> {
    (0..8).map(|i| -40.0 + 5.0 * i as f64).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub seed: u64,
    pub config_hash: String,
    pub snr_r_db: f64,
    pub method: &'static str,
    /// `own` or `common`.
    pub tolerance: &'static str,
    pub tol_p: f64,
    pub tol_q: f64,
    pub trials: usize,
    pub hit_rate: f64,
    pub success_rate: f64,
    pub success_ci_low: f64,
    pub success_ci_high: f64,
    pub mean_k_hat: f64,
}

pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn row(&self, snr_r_db: f64, method: &str, tolerance: &str) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.snr_r_db == snr_r_db && r.method == method && r.tolerance == tolerance)
    }

    pub fn into_outcome(self) -> Outcome {
        Outcome {
            summary: to_value(&self.rows),
            files: vec![CsvFile::new("rate_sweep.csv", self.rows)],
        }
    }
}

pub fn run(ctx: &mut RunContext) -> Result<SweepReport> {
    run_at(ctx, &default_snrs())
}

struct Score {
    k_hat: usize,
    hit: [f64; 2],
    success: [bool; 2],
}

pub fn run_at(ctx: &mut RunContext, snrs: &[f64]) -> Result<SweepReport> {
    let trials = ctx.trials_or(DEFAULT_TRIALS);
    let config = ctx.config.clone();
    let code = ctx.code();
    let estimators = Estimator::all(ctx)?;
    let targets = refinement_scenario(&config).targets(ctx.seed);
    let bin_l = coarse_bin_index(targets[0].range, &config);
    let truth = truth_pq(&targets, bin_l, &config);
    let common = config.half_cell();

    let mut rows = Vec::new();
    for (si, &snr) in snrs.iter().enumerate() {
        let scores: Vec<Vec<Score>> = (0..trials)
            .into_par_iter()
            .map(|i| -> Result<Vec<Score>> {
                // trial streams are disjoint across SNR points
                let s = ctx.trial_seed(si * trials + i);
                let y = synth_one(&targets, &code, &config, snr, s, bin_l)?;
                estimators
                    .iter()
                    .map(|e| {
                        let set = e.extract(&y, &code);
                        let est: Vec<DigitalFreqPair> = set.detections.iter().map(|d| d.pq).collect();
                        let tols = [e.tolerance(), common];
                        Ok(Score {
                            k_hat: set.len(),
                            hit: [hit_rate_with(&truth, &est, tols[0])?, hit_rate_with(&truth, &est, tols[1])?],
                            success: [success_with(&truth, &set, tols[0]), success_with(&truth, &set, tols[1])],
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (m, e) in estimators.iter().enumerate() {
            for (t, (label, tol)) in [("own", e.tolerance()), ("common", common)].into_iter().enumerate() {
                let wins = scores.iter().filter(|s| s[m].success[t]).count();
                let (lo, hi) = proportion_ci(wins, trials);
                rows.push(SweepRow {
                    seed: ctx.seed,
                    config_hash: ctx.config_hash.clone(),
                    snr_r_db: snr,
                    method: e.method.name(),
                    tolerance: label,
                    tol_p: tol.0,
                    tol_q: tol.1,
                    trials,
                    hit_rate: super::mean(scores.iter().map(|s| s[m].hit[t])),
                    success_rate: wins as f64 / trials.max(1) as f64,
                    success_ci_low: lo,
                    success_ci_high: hi,
                    mean_k_hat: super::mean(scores.iter().map(|s| s[m].k_hat as f64)),
                });
            }
        }
    }
    Ok(SweepReport { rows })
}
