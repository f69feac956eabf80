//! Grid-only pursuit at two grid densities against the Newton-refined
//! pursuit on the four-target refinement scene.

use std::collections::BTreeMap;

use anyhow::Result;
use rayon::prelude::*;
use serde::Serialize;

use nomp_far_core::config::coarse_bin_index;
use nomp_far_core::metrics::{hit_rate_with, match_frequencies, proportion_ci, success_with};
use nomp_far_core::scene::refinement_scenario;
use nomp_far_core::DigitalFreqPair;

use super::{mean, synth_one, to_value, truth_pq, Estimator, Method, Outcome};
use crate::context::RunContext;
use crate::output::CsvFile;

pub const DEFAULT_TRIALS: usize = 200;

/// One detection of the single-realization table.
#[derive(Debug, Clone, Serialize)]
pub struct DetectionRow {
    pub seed: u64,
    pub config_hash: String,
    pub method: &'static str,
    pub index: usize,
    pub p: f64,
    pub q: f64,
    pub abs_gamma: f64,
    pub range_m: f64,
    pub velocity_mps: f64,
    /// Index of the matched truth, if any.
    pub truth: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialRow {
    pub seed: u64,
    pub config_hash: String,
    pub trial: usize,
    pub method: &'static str,
    pub k_hat: usize,
    pub hit_rate: f64,
    pub success: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub tau_db: f64,
    pub single_k_hat: usize,
    pub success_rate: f64,
    pub success_ci: (f64, f64),
    pub mean_hit_rate: f64,
    /// Estimated model order → number of trials.
    pub k_hat_counts: BTreeMap<usize, usize>,
    pub k_hat_mode: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RefineSummary {
    pub snr_r_db: f64,
    pub bin_l: usize,
    pub truth: Vec<DigitalFreqPair>,
    pub trials: usize,
    pub methods: Vec<MethodSummary>,
}

pub struct RefineReport {
    pub summary: RefineSummary,
    pub single: Vec<DetectionRow>,
    pub trials: Vec<TrialRow>,
}

impl RefineReport {
    pub fn method(&self, m: Method) -> &MethodSummary {
        self.summary.methods.iter().find(|s| s.method == m).expect("all methods are run")
    }

    pub fn into_outcome(self) -> Outcome {
        Outcome {
            summary: to_value(&self.summary),
            files: vec![
                CsvFile::new("refine_single.csv", self.single),
                CsvFile::new("refine_trials.csv", self.trials),
            ],
        }
    }
}

pub fn run(ctx: &mut RunContext) -> Result<RefineReport> {
    let scenario = refinement_scenario(&ctx.config);
    run_at(ctx, scenario.snr_r_db)
}

/// As [`run`] at an explicit received SNR.
pub fn run_at(ctx: &mut RunContext, snr_r_db: f64) -> Result<RefineReport> {
    let trials = ctx.trials_or(DEFAULT_TRIALS);
    let config = ctx.config.clone();
    let code = ctx.code();
    let estimators = Estimator::all(ctx)?;
    let targets = refinement_scenario(&config).targets(ctx.seed);
    let bin_l = coarse_bin_index(targets[0].range, &config);
    let truth = truth_pq(&targets, bin_l, &config);

    let y0 = synth_one(&targets, &code, &config, snr_r_db, ctx.trial_seed(0), bin_l)?;
    let mut single = Vec::new();
    let mut single_k = Vec::new();
    for e in &estimators {
        let set = e.extract(&y0, &code);
        let est: Vec<DigitalFreqPair> = set.detections.iter().map(|d| d.pq).collect();
        let matches = match_frequencies(&truth, &est, e.tolerance());
        single_k.push(set.len());
        for (j, d) in set.detections.iter().enumerate() {
            let (range_m, velocity_mps) = d.range_velocity(&config);
            single.push(DetectionRow {
                seed: ctx.seed,
                config_hash: ctx.config_hash.clone(),
                method: e.method.name(),
                index: j,
                p: d.pq.p,
                q: d.pq.q,
                abs_gamma: d.gamma.norm(),
                range_m,
                velocity_mps,
                truth: matches.iter().find(|m| m.1 == j).map(|m| m.0),
            });
        }
    }

    let per_trial: Vec<Vec<TrialRow>> = (0..trials)
        .into_par_iter()
        .map(|i| -> Result<Vec<TrialRow>> {
            let y = synth_one(&targets, &code, &config, snr_r_db, ctx.trial_seed(i), bin_l)?;
            estimators
                .iter()
                .map(|e| {
                    let set = e.extract(&y, &code);
                    let est: Vec<DigitalFreqPair> = set.detections.iter().map(|d| d.pq).collect();
                    Ok(TrialRow {
                        seed: ctx.seed,
                        config_hash: ctx.config_hash.clone(),
                        trial: i,
                        method: e.method.name(),
                        k_hat: set.len(),
                        hit_rate: hit_rate_with(&truth, &est, e.tolerance())?,
                        success: success_with(&truth, &set, e.tolerance()),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<TrialRow> = per_trial.into_iter().flatten().collect();

    let methods = estimators
        .iter()
        .zip(&single_k)
        .map(|(e, &k)| {
            let mine: Vec<&TrialRow> = rows.iter().filter(|r| r.method == e.method.name()).collect();
            let wins = mine.iter().filter(|r| r.success).count();
            let mut counts = BTreeMap::new();
            for r in &mine {
                *counts.entry(r.k_hat).or_insert(0) += 1;
            }
            let mode = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map_or(0, |(k, _)| *k);
            MethodSummary {
                method: e.method,
                tau_db: nomp_far_core::cfar::to_db(e.tau),
                single_k_hat: k,
                success_rate: wins as f64 / trials.max(1) as f64,
                success_ci: proportion_ci(wins, trials),
                mean_hit_rate: mean(mine.iter().map(|r| r.hit_rate)),
                k_hat_counts: counts,
                k_hat_mode: mode,
            }
        })
        .collect();

    Ok(RefineReport {
        summary: RefineSummary {
            snr_r_db,
            bin_l,
            truth,
            trials,
            methods,
        },
        single,
        trials: rows,
    })
}
