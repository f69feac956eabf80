//! The five experiments. Each `run` returns a typed report; [`run_experiment`]
//! turns it into CSV files plus a JSON summary.

pub mod cfar;
pub mod full_range;
pub mod rate_sweep;
pub mod refine_compare;
pub mod snr;

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Result};
use serde::Serialize;

use nomp_far_core::config::{range_to_pq, DigitalFreqPair};
use nomp_far_core::nomp::{extract_targets, extract_targets_omp};
use nomp_far_core::scene::synth_bins;
use nomp_far_core::{BinMeasurement, DetectionSet, FrequencyHopCode, RadarConfig, Target};

use crate::context::RunContext;
use crate::output::{write_json, CsvFile, ExperimentResult};

pub const EXPERIMENT_IDS: [&str; 5] = ["cfar", "snr", "refine-compare", "rate-sweep", "full-range"];

/// What a finished experiment hands to the writer.
pub struct Outcome {
    pub summary: serde_json::Value,
    pub files: Vec<CsvFile>,
}

pub fn run_by_id(id: &str, ctx: &mut RunContext) -> Result<Outcome> {
    Ok(match id {
        "cfar" => cfar::run(ctx)?.into_outcome(),
        "snr" => snr::run(ctx)?.into_outcome(),
        "refine-compare" => refine_compare::run(ctx)?.into_outcome(),
        "rate-sweep" => rate_sweep::run(ctx)?.into_outcome(),
        "full-range" => full_range::run(ctx)?.into_outcome(),
        other => bail!("unknown experiment '{other}' (expected one of {})", EXPERIMENT_IDS.join(", ")),
    })
}

/// Runs `id` and writes `<id>_*.csv` and `<id>_summary.json` into `out_dir`.
pub fn run_experiment(id: &str, ctx: &mut RunContext, out_dir: &Path) -> Result<ExperimentResult> {
    std::fs::create_dir_all(out_dir)?;
    let start = Instant::now();
    let outcome = run_by_id(id, ctx)?;
    let runtime_s = start.elapsed().as_secs_f64();
    let mut files = Vec::new();
    for f in &outcome.files {
        f.write_to(out_dir)?;
        files.push(f.name.clone());
    }
    let result = ExperimentResult {
        experiment_id: id.to_owned(),
        config_hash: ctx.config_hash.clone(),
        seed: ctx.seed,
        runtime_s,
        summary: outcome.summary,
        files,
    };
    write_json(&out_dir.join(format!("{id}_summary.json")), &result)?;
    Ok(result)
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("summaries are plain data")
}

/// The estimators compared in the refinement experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Grid-only pursuit on the Nyquist grid.
    OmpG1,
    /// Grid-only pursuit on the configured oversampled grid.
    OmpG4,
    /// Newton-refined pursuit on the configured grid.
    NompG4,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::OmpG1, Method::OmpG4, Method::NompG4];

    pub fn name(self) -> &'static str {
        match self {
            Method::OmpG1 => "omp_g1",
            Method::OmpG4 => "omp_g4",
            Method::NompG4 => "nomp_g4",
        }
    }

    pub fn config(self, base: &RadarConfig) -> RadarConfig {
        match self {
            Method::OmpG1 => base.clone().with_oversampling(1.0, 1.0),
            _ => base.clone(),
        }
    }
}

/// A method with its grid configuration and calibrated threshold.
#[derive(Debug, Clone)]
pub struct Estimator {
    pub method: Method,
    pub config: RadarConfig,
    pub tau: f64,
}

impl Estimator {
    pub fn all(ctx: &mut RunContext) -> Result<Vec<Estimator>> {
        let pfa = ctx.config.pfa;
        Method::ALL
            .iter()
            .map(|&method| {
                let config = method.config(&ctx.config);
                let tau = ctx.threshold(&config, pfa)?.tau_linear;
                Ok(Estimator { method, config, tau })
            })
            .collect()
    }

    pub fn extract(&self, y: &BinMeasurement, code: &FrequencyHopCode) -> DetectionSet {
        match self.method {
            Method::NompG4 => extract_targets(y, code, &self.config, self.tau),
            _ => extract_targets_omp(y, code, &self.config, self.tau),
        }
    }

    /// Half-cell hit tolerance of this method's own grid.
    pub fn tolerance(&self) -> (f64, f64) {
        self.config.half_cell()
    }
}

/// Full-fidelity synthesis of a single bin.
pub fn synth_one(
    targets: &[Target],
    code: &FrequencyHopCode,
    config: &RadarConfig,
    snr_r_db: f64,
    seed: u64,
    bin_l: usize,
) -> Result<BinMeasurement> {
    Ok(synth_bins(targets, code, config, snr_r_db, seed, &[bin_l])?.remove(0))
}

pub fn truth_pq(targets: &[Target], bin_l: usize, config: &RadarConfig) -> Vec<DigitalFreqPair> {
    targets.iter().map(|t| range_to_pq(t.range, t.velocity, bin_l, config)).collect()
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}
