//! Six targets over the configured range window, processed bin by bin with
//! and without ghost suppression.

use anyhow::Result;
use rayon::prelude::*;
use serde::Serialize;

use nomp_far_core::ghost::{suppress_ghosts_audited, AuditRow, Branch, GhostRule};
use nomp_far_core::metrics::{match_range_velocity, range_velocity_rmse_within, rmse, RangeVelocityError};
use nomp_far_core::nomp::Extractor;
use nomp_far_core::scene::{full_range_scenario, synth_full_range};
use nomp_far_core::{Detection, DetectionSet, RadarConfig, Target};

use super::{mean, to_value, Outcome};
use crate::context::RunContext;
use crate::output::CsvFile;

pub const DEFAULT_TRIALS: usize = 20;

/// Multiples of the rule's `(eps_p, eps_q)` re-evaluated on the same raw
/// detections for the sensitivity table.
pub const TOLERANCE_SCALES: [f64; 3] = [1.0, 2.0, 3.0];

#[derive(Debug, Clone, Serialize)]
pub struct TrialRow {
    pub seed: u64,
    pub config_hash: String,
    pub trial: usize,
    pub raw: usize,
    pub kept: usize,
    /// Exactly the true targets survive.
    pub exact: bool,
    /// Truths without a surviving detection inside the match gate.
    pub missed: usize,
    pub raw_range_rmse: f64,
    pub range_rmse: f64,
    pub velocity_rmse: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectionRow {
    pub seed: u64,
    pub config_hash: String,
    pub trial: usize,
    pub bin_l: usize,
    pub p: f64,
    pub q: f64,
    pub abs_gamma: f64,
    pub range_m: f64,
    pub velocity_mps: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditCsvRow {
    pub seed: u64,
    pub config_hash: String,
    pub trial: usize,
    pub anchor_bin: usize,
    pub anchor_p: f64,
    pub anchor_q: f64,
    pub anchor_abs_gamma: f64,
    pub deleted_bin: usize,
    pub deleted_p: f64,
    pub deleted_q: f64,
    pub deleted_abs_gamma: f64,
    pub bin_offset: i64,
    pub ratio_db: f64,
    pub branch: Branch,
}

#[derive(Debug, Clone, Serialize)]
pub struct FullRangeSummary {
    pub snr_r_db: f64,
    pub bins: usize,
    pub tau_db: f64,
    pub trials: usize,
    pub rule: GhostRule,
    pub mean_raw: f64,
    pub mean_kept: f64,
    pub exact_fraction: f64,
    /// Pooled over every gated match of every trial.
    pub range_rmse: f64,
    pub velocity_rmse: f64,
    pub tolerance_sensitivity: Vec<Sensitivity>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Sensitivity {
    pub scale: f64,
    pub exact_fraction: f64,
    pub mean_kept: f64,
    pub mean_missed: f64,
}

pub struct FullRangeReport {
    pub summary: FullRangeSummary,
    pub trials: Vec<TrialRow>,
    pub detections: Vec<DetectionRow>,
    pub audit: Vec<AuditCsvRow>,
}

impl FullRangeReport {
    pub fn into_outcome(self) -> Outcome {
        Outcome {
            summary: to_value(&self.summary),
            files: vec![
                CsvFile::new("full_range_trials.csv", self.trials),
                CsvFile::new("full_range_detections.csv", self.detections),
                CsvFile::new("full_range_audit.csv", self.audit),
            ],
        }
    }
}

struct Trial {
    targets: Vec<Target>,
    sets: Vec<DetectionSet>,
    row: TrialRow,
    errors: (Vec<f64>, Vec<f64>),
    detections: Vec<DetectionRow>,
    audit: Vec<AuditCsvRow>,
}

/// Association gate: half a Nyquist resolution cell, `R_u/(2M)` and
/// `v_u/(2N)`. Ghosts sit at least a coarse bin or a velocity cell away.
pub fn gate(config: &RadarConfig) -> (f64, f64) {
    (
        0.5 * config.unambiguous_range() / config.num_freqs as f64,
        0.5 * config.unambiguous_velocity() / config.num_pulses as f64,
    )
}

fn flatten(sets: &[DetectionSet]) -> Vec<Detection> {
    sets.iter().flat_map(|s| s.detections.iter().copied()).collect()
}

/// Gated matching: the summary statistics plus the individual errors.
fn match_errors(truth: &[Target], dets: &[Detection], ctx: &RunContext) -> (RangeVelocityError, Vec<f64>, Vec<f64>) {
    let g = gate(&ctx.config);
    let m = match_range_velocity(truth, dets, &ctx.config, g);
    (
        range_velocity_rmse_within(truth, dets, &ctx.config, g),
        m.iter().map(|x| x.range_error).collect(),
        m.iter().map(|x| x.velocity_error).collect(),
    )
}

pub fn run(ctx: &mut RunContext) -> Result<FullRangeReport> {
    run_with(ctx, GhostRule::from_config(&ctx.config))
}

pub fn run_with(ctx: &mut RunContext, rule: GhostRule) -> Result<FullRangeReport> {
    rule.validate()?;
    let trials = ctx.trials_or(DEFAULT_TRIALS);
    let config = ctx.config.clone();
    let code = ctx.code();
    let tau = ctx.threshold(&config, config.pfa)?;
    let scenario = full_range_scenario();
    let bins = config.window_bins().count();
    let ctx_ref: &RunContext = ctx;

    let results: Vec<Trial> = (0..trials)
        .map(|i| -> Result<Trial> {
            let s = ctx_ref.trial_seed(i);
            let targets = scenario.targets(s);
            let measured = synth_full_range(&targets, &code, &config, scenario.snr_r_db, s)?;
            let sets: Vec<DetectionSet> = measured
                .par_iter()
                .map(|y| Extractor::new(&code, &config).extract(y, tau.tau_linear))
                .collect();
            let sup = suppress_ghosts_audited(&sets, &rule, &config);
            let raw = flatten(&sets);
            let kept = flatten(&sup.sets);
            let (e_raw, _, _) = match_errors(&targets, &raw, ctx_ref);
            let (e, dr, dv) = match_errors(&targets, &kept, ctx_ref);
            let kept_flags: Vec<bool> = {
                let mut it = sup.sets.iter().flat_map(|s| s.detections.iter()).peekable();
                raw.iter()
                    .map(|d| {
                        let hit = it.peek().is_some_and(|k| *k == d);
                        if hit {
                            it.next();
                        }
                        hit
                    })
                    .collect()
            };
            let detections = raw
                .iter()
                .zip(&kept_flags)
                .map(|(d, &k)| {
                    let (range_m, velocity_mps) = d.range_velocity(&config);
                    DetectionRow {
                        seed: ctx_ref.seed,
                        config_hash: ctx_ref.config_hash.clone(),
                        trial: i,
                        bin_l: d.bin_l,
                        p: d.pq.p,
                        q: d.pq.q,
                        abs_gamma: d.gamma.norm(),
                        range_m,
                        velocity_mps,
                        kept: k,
                    }
                })
                .collect();
            let audit = sup.audit.iter().map(|a| audit_row(ctx_ref, i, a)).collect();
            let row = TrialRow {
                seed: ctx_ref.seed,
                config_hash: ctx_ref.config_hash.clone(),
                trial: i,
                raw: raw.len(),
                kept: kept.len(),
                exact: is_exact(&targets, &kept, &e),
                missed: targets.len() - e.matched,
                raw_range_rmse: e_raw.range_rmse,
                range_rmse: e.range_rmse,
                velocity_rmse: e.velocity_rmse,
            };
            Ok(Trial {
                targets,
                sets,
                row,
                errors: (dr, dv),
                detections,
                audit,
            })
        })
        .collect::<Result<_>>()?;

    let tolerance_sensitivity = TOLERANCE_SCALES
        .iter()
        .map(|&scale| {
            let r = GhostRule {
                eps_p: rule.eps_p * scale,
                eps_q: rule.eps_q * scale,
                ..rule
            };
            let outcomes: Vec<(bool, usize, usize)> = results
                .iter()
                .map(|t| {
                    let kept = flatten(&suppress_ghosts_audited(&t.sets, &r, &config).sets);
                    let e = range_velocity_rmse_within(&t.targets, &kept, &config, gate(&config));
                    (is_exact(&t.targets, &kept, &e), kept.len(), t.targets.len() - e.matched)
                })
                .collect();
            Sensitivity {
                scale,
                exact_fraction: outcomes.iter().filter(|o| o.0).count() as f64 / trials.max(1) as f64,
                mean_kept: mean(outcomes.iter().map(|o| o.1 as f64)),
                mean_missed: mean(outcomes.iter().map(|o| o.2 as f64)),
            }
        })
        .collect();
    let all_dr: Vec<f64> = results.iter().flat_map(|t| t.errors.0.iter().copied()).collect();
    let all_dv: Vec<f64> = results.iter().flat_map(|t| t.errors.1.iter().copied()).collect();
    let summary = FullRangeSummary {
        snr_r_db: scenario.snr_r_db,
        bins,
        tau_db: tau.tau_db,
        trials,
        rule,
        mean_raw: mean(results.iter().map(|t| t.row.raw as f64)),
        mean_kept: mean(results.iter().map(|t| t.row.kept as f64)),
        exact_fraction: results.iter().filter(|t| t.row.exact).count() as f64 / trials.max(1) as f64,
        range_rmse: rmse(&all_dr),
        velocity_rmse: rmse(&all_dv),
        tolerance_sensitivity,
    };
    let mut report = FullRangeReport {
        summary,
        trials: Vec::new(),
        detections: Vec::new(),
        audit: Vec::new(),
    };
    for t in results {
        report.trials.push(t.row);
        report.detections.extend(t.detections);
        report.audit.extend(t.audit);
    }
    Ok(report)
}

fn is_exact(targets: &[Target], kept: &[Detection], e: &RangeVelocityError) -> bool {
    kept.len() == targets.len() && e.matched == targets.len()
}

fn audit_row(ctx: &RunContext, trial: usize, a: &AuditRow) -> AuditCsvRow {
    AuditCsvRow {
        seed: ctx.seed,
        config_hash: ctx.config_hash.clone(),
        trial,
        anchor_bin: a.anchor_bin,
        anchor_p: a.anchor_p,
        anchor_q: a.anchor_q,
        anchor_abs_gamma: a.anchor_abs_gamma,
        deleted_bin: a.deleted_bin,
        deleted_p: a.deleted_p,
        deleted_q: a.deleted_q,
        deleted_abs_gamma: a.deleted_abs_gamma,
        bin_offset: a.bin_offset,
        ratio_db: a.ratio_db,
        branch: a.branch,
    }
}
