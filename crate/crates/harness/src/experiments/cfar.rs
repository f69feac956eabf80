//! Nominal versus measured false-alarm rate of the stopping rule.
//!
//! The four-target refinement scene is synthesized with the full ambiguity
//! model; a false alarm is any trial in which more detections than targets
//! are returned (for the target-free scene, any detection at all).

use anyhow::Result;
use rayon::prelude::*;
use serde::Serialize;

use nomp_far_core::config::coarse_bin_index;
use nomp_far_core::metrics::proportion_ci;
use nomp_far_core::nomp::Extractor;
use nomp_far_core::scene::refinement_scenario;

use super::{synth_one, to_value, Outcome};
use crate::context::{RunContext, STANDARD_PFAS};
use crate::output::CsvFile;

pub const DEFAULT_TRIALS: usize = 1000;

/// `None` is the target-free scene.
pub const SCENE_SNRS_DB: [Option<f64>; 4] = [None, Some(-10.0), Some(-4.0), Some(2.0)];

#[derive(Debug, Clone, Serialize)]
pub struct CfarRow {
    pub seed: u64,
    pub config_hash: String,
    pub pfa_nominal: f64,
    pub scene: String,
    pub snr_r_db: Option<f64>,
    pub targets: usize,
    pub tau_db: f64,
    pub trials: usize,
    pub false_alarms: usize,
    pub pfa_measured: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Measured over nominal.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CfarReport {
    pub bin_l: usize,
    pub rows: Vec<CfarRow>,
}

impl CfarReport {
    pub fn row(&self, pfa: f64, snr_r_db: Option<f64>) -> Option<&CfarRow> {
        self.rows.iter().find(|r| r.pfa_nominal == pfa && r.snr_r_db == snr_r_db)
    }

    pub fn into_outcome(self) -> Outcome {
        Outcome {
            summary: to_value(&self),
            files: vec![CsvFile::new("cfar_pfa.csv", self.rows)],
        }
    }
}

pub fn run(ctx: &mut RunContext) -> Result<CfarReport> {
    let trials = ctx.trials_or(DEFAULT_TRIALS);
    let config = ctx.config.clone();
    let code = ctx.code();
    let scenario = refinement_scenario(&config);
    let all_targets = scenario.targets(ctx.seed);
    let bin_l = coarse_bin_index(all_targets[0].range, &config);

    let mut rows = Vec::new();
    for pfa in STANDARD_PFAS {
        let report = ctx.threshold(&config, pfa)?;
        for snr in SCENE_SNRS_DB {
            let targets = if snr.is_some() { all_targets.clone() } else { Vec::new() };
            let k = targets.len();
            let seeds: Vec<u64> = (0..trials).map(|i| ctx.trial_seed(i)).collect();
            let over: Vec<bool> = seeds
                .par_iter()
                .map(|&s| -> Result<bool> {
                    let y = synth_one(&targets, &code, &config, snr.unwrap_or(0.0), s, bin_l)?;
                    Ok(Extractor::new(&code, &config).extract(&y, report.tau_linear).len() > k)
                })
                .collect::<Result<_>>()?;
            let false_alarms = over.iter().filter(|&&b| b).count();
            let measured = false_alarms as f64 / trials as f64;
            let (ci_low, ci_high) = proportion_ci(false_alarms, trials);
            rows.push(CfarRow {
                seed: ctx.seed,
                config_hash: ctx.config_hash.clone(),
                pfa_nominal: pfa,
                scene: snr.map_or_else(|| "absent".to_owned(), |s| format!("{s} dB")),
                snr_r_db: snr,
                targets: k,
                tau_db: report.tau_db,
                trials,
                false_alarms,
                pfa_measured: measured,
                ci_low,
                ci_high,
                ratio: measured / pfa,
            });
        }
    }
    Ok(CfarReport { bin_l, rows })
}
