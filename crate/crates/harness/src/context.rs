//! Per-run state shared by the experiments: configuration, seed, trial
//! counts and threshold calibrations.

use anyhow::Result;
use sha2::{Digest, Sha256};

use nomp_far_core::cfar::{noise_maxima, report_from_maxima, ThresholdCache, ThresholdReport};
use nomp_far_core::config::draw_code;
use nomp_far_core::nomp::CoarseGrid;
use nomp_far_core::rng::sub_seed;
use nomp_far_core::{FrequencyHopCode, RadarConfig};

/// Noise stream for threshold calibration; disjoint from trial streams,
/// which are `sub_seed(run seed, trial)`.
pub const CALIBRATION_SEED: u64 = 0x00CA_11B8_A7E5_EED5;

pub const DEFAULT_CALIBRATION_TRIALS: usize = 100_000;

/// False-alarm probabilities calibrated together whenever one is missing.
pub const STANDARD_PFAS: [f64; 2] = [1e-1, 1e-2];

/// First 16 hex digits of the SHA-256 of the canonical TOML rendering.
pub fn config_hash(config: &RadarConfig) -> String {
    let digest = Sha256::digest(config.to_toml_string().as_bytes());
    hex::encode(&digest[..8])
}

pub struct RunContext {
    pub config: RadarConfig,
    pub config_hash: String,
    pub seed: u64,
    /// Overrides every experiment's default trial count.
    pub trials: Option<usize>,
    pub calibration_trials: usize,
    pub cache: ThresholdCache,
}

impl RunContext {
    pub fn new(config: RadarConfig, seed: u64) -> Self {
        Self {
            config_hash: config_hash(&config),
            config,
            seed,
            trials: None,
            calibration_trials: DEFAULT_CALIBRATION_TRIALS,
            cache: ThresholdCache::in_memory(),
        }
    }

    pub fn with_trials(mut self, trials: Option<usize>) -> Self {
        self.trials = trials;
        self
    }

    pub fn with_calibration_trials(mut self, trials: usize) -> Self {
        self.calibration_trials = trials;
        self
    }

    pub fn with_cache(mut self, cache: ThresholdCache) -> Self {
        self.cache = cache;
        self
    }

    pub fn trials_or(&self, default: usize) -> usize {
        self.trials.unwrap_or(default)
    }

    /// The hop code of this run; all trials share it.
    pub fn code(&self) -> FrequencyHopCode {
        draw_code(&self.config, self.seed)
    }

    /// Seed of trial `i`.
    pub fn trial_seed(&self, i: usize) -> u64 {
        sub_seed(self.seed, i as u64)
    }

    /// Threshold for the run code under `config` (which may differ from the
    /// run configuration in its oversampling). One set of noise maxima
    /// serves `pfa` and every missing entry of [`STANDARD_PFAS`].
    pub fn threshold(&mut self, config: &RadarConfig, pfa: f64) -> Result<ThresholdReport> {
        let code = self.code();
        if let Some(r) = self.cache.get(&code, config, pfa, self.calibration_trials) {
            return Ok(r);
        }
        let grid = CoarseGrid::new(&code, config);
        let maxima = noise_maxima(&grid, self.calibration_trials, CALIBRATION_SEED);
        let mut wanted = vec![pfa];
        wanted.extend(
            STANDARD_PFAS
                .iter()
                .filter(|&&p| p != pfa && self.cache.get(&code, config, p, self.calibration_trials).is_none()),
        );
        for p in wanted {
            let r = report_from_maxima(&maxima, &code, config, p, CALIBRATION_SEED)?;
            self.cache.insert(&code, config, r);
        }
        self.cache.save()?;
        Ok(self
            .cache
            .get(&code, config, pfa, self.calibration_trials)
            .expect("calibration was just inserted"))
    }
}
