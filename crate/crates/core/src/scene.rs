//! Measurement synthesis.
//!
//! Two fidelities are provided. [`synth_bin`] draws the per-bin line-spectral
//! model directly in digital frequencies, which is what the estimator
//! experiments need. [`synth_full_range`] keeps the ambiguity-function factor
//! for every bin of a range window, so a target leaks sidelobes into its
//! neighbours exactly like the ghosts the postprocessor must remove.
//!
//! Both paths work on post-pulse-compression data with unit-scaled noise;
//! a received (pre-compression) SNR becomes an amplitude of
//! `√N_ref · 10^{SNR/20} · σ`.

use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{range_to_pq, range_to_pq_unwrapped, FrequencyHopCode, RadarConfig, TWO_PI};
use crate::error::{Error, Result};
use crate::nomp::AtomBasis;
use crate::rng;
use crate::waveform::ambiguity;

/// Ground-truth point scatterer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    /// Absolute range, m.
    pub range: f64,
    /// Radial velocity, m/s.
    pub velocity: f64,
    /// Complex reflection coefficient.
    pub amplitude: Complex64,
}

/// The `N` slow-time samples of one coarse range bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinMeasurement {
    pub bin_l: usize,
    pub y: Vec<Complex64>,
}

/// One term `γ a(p, q)` of the per-bin model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineComponent {
    pub gamma: Complex64,
    pub p: f64,
    pub q: f64,
}

/// `y = Σ γ_k a(p_k, q_k) + w`, `w ~ CN(0, σ² I)`. Noise comes from `seed`
/// alone, so the same seed gives the same noise for any target list.
pub fn synth_bin(
    bin_l: usize,
    components: &[LineComponent],
    code: &FrequencyHopCode,
    sigma2: f64,
    config: &RadarConfig,
    seed: u64,
) -> BinMeasurement {
    let basis = AtomBasis::new(code, config);
    let mut y = if sigma2 > 0.0 {
        rng::complex_noise(&mut rng::stream(seed), code.len(), sigma2)
    } else {
        vec![Complex64::new(0.0, 0.0); code.len()]
    };
    let mut a = vec![Complex64::new(0.0, 0.0); code.len()];
    for c in components {
        basis.atom_into(c.p, c.q, &mut a);
        for (yn, an) in y.iter_mut().zip(&a) {
            *yn += c.gamma * an;
        }
    }
    BinMeasurement { bin_l, y }
}

/// Post-compression per-sample amplitude for a received SNR in dB. A
/// noiseless configuration is referenced to unit noise.
pub fn post_pc_amplitude(snr_r_db: f64, config: &RadarConfig) -> f64 {
    let sigma = if config.noise_var > 0.0 { config.noise_var.sqrt() } else { 1.0 };
    (config.n_ref as f64).sqrt() * 10f64.powf(snr_r_db / 20.0) * sigma
}

/// Per-bin components of `targets` seen from `bin_l`, with the amplitude
/// scaled so that each target has received SNR `snr_r_db · |amplitude|²`.
/// The atom normalisation is undone here (`γ = √N · …`) so that line and
/// full-range synthesis agree sample for sample.
pub fn line_components(targets: &[Target], bin_l: usize, snr_r_db: f64, config: &RadarConfig) -> Vec<LineComponent> {
    let scale = (config.num_pulses as f64).sqrt() * post_pc_amplitude(snr_r_db, config);
    targets
        .iter()
        .map(|t| {
            let pq = range_to_pq(t.range, t.velocity, bin_l, config);
            LineComponent {
                gamma: t.amplitude * scale,
                p: pq.p,
                q: pq.q,
            }
        })
        .collect()
}

/// Full-range synthesis over the configured range window.
pub fn synth_full_range(
    targets: &[Target],
    code: &FrequencyHopCode,
    config: &RadarConfig,
    snr_r_db: f64,
    seed: u64,
) -> Result<Vec<BinMeasurement>> {
    let [lo, hi] = config.range_window;
    if !(lo <= hi) {
        return Err(Error::EmptyWindow(lo, hi));
    }
    let bins: Vec<usize> = config.window_bins().collect();
    synth_bins(targets, code, config, snr_r_db, seed, &bins)
}

/// Full-range synthesis for an explicit list of bins. Bin `l` draws its
/// noise from `sub_seed(seed, l)`.
pub fn synth_bins(
    targets: &[Target],
    code: &FrequencyHopCode,
    config: &RadarConfig,
    snr_r_db: f64,
    seed: u64,
    bins: &[usize],
) -> Result<Vec<BinMeasurement>> {
    if bins.is_empty() {
        let [lo, hi] = config.range_window;
        return Err(Error::EmptyWindow(lo, hi));
    }
    let amp = post_pc_amplitude(snr_r_db, config);
    let eps = config.coupling();
    let tp = config.pulse_duration;
    Ok(bins
        .par_iter()
        .map(|&l| {
            let mut y = if config.noise_var > 0.0 {
                rng::complex_noise(&mut rng::stream_for(seed, l as u64), code.len(), config.noise_var)
            } else {
                vec![Complex64::new(0.0, 0.0); code.len()]
            };
            for t in targets {
                let (p, q) = range_to_pq_unwrapped(t.range, t.velocity, l, config);
                let g = t.amplitude * amp;
                for (n, (yn, &d)) in y.iter_mut().zip(&code.codes).enumerate() {
                    let (d, nf) = (d as f64, n as f64);
                    let xi = -p / (TWO_PI * config.freq_step) - q * nf / (TWO_PI * config.carrier);
                    if xi.abs() >= tp {
                        continue;
                    }
                    let fd = q / (TWO_PI * config.pri) * (1.0 + d * eps);
                    let chi = ambiguity(xi, fd, config) / tp;
                    *yn += g * chi * Complex64::from_polar(1.0, p * d + q * (1.0 + d * eps) * nf);
                }
            }
            BinMeasurement { bin_l: l, y }
        })
        .collect())
}

/// SNR bookkeeping from received SNR to the coherent-integration output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnrBudget {
    pub snr_r_db: f64,
    pub pc_gain_db: f64,
    pub ci_gain_db: f64,
    pub snr_pc_db: f64,
    pub snr_ci_db: f64,
    /// Smallest received SNR that still reaches the threshold.
    pub boundary_db: f64,
    pub detectable: bool,
}

pub fn snr_budget(snr_r_db: f64, tau_db: f64, config: &RadarConfig) -> SnrBudget {
    let pc_gain_db = 10.0 * (config.n_ref as f64).log10();
    let ci_gain_db = 10.0 * (config.num_pulses as f64).log10();
    let snr_pc_db = snr_r_db + pc_gain_db;
    let snr_ci_db = snr_pc_db + ci_gain_db;
    SnrBudget {
        snr_r_db,
        pc_gain_db,
        ci_gain_db,
        snr_pc_db,
        snr_ci_db,
        boundary_db: tau_db - pc_gain_db - ci_gain_db,
        detectable: snr_ci_db >= tau_db,
    }
}

/// Phase of a scenario target: fixed radians or drawn uniformly per seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Phase {
    Fixed(f64),
    Keyword(PhaseKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKeyword {
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioTarget {
    pub range: f64,
    pub velocity: f64,
    pub amplitude: f64,
    pub phase: Phase,
}

/// Scenario file: targets plus the received SNR, seed and range window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub snr_r_db: f64,
    pub seed: u64,
    pub range_window: [f64; 2],
    pub targets: Vec<ScenarioTarget>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let s: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.range_window;
        if !(lo <= hi) {
            return Err(Error::EmptyWindow(lo, hi));
        }
        if let Some(t) = self.targets.iter().find(|t| !(t.range.is_finite() && t.velocity.is_finite() && t.amplitude.is_finite())) {
            return Err(Error::InvalidArgument(format!("non-finite target {t:?}")));
        }
        Ok(())
    }

    /// Concrete targets for one realization; random phases come from `seed`.
    pub fn targets(&self, seed: u64) -> Vec<Target> {
        let mut r = rng::stream_for(seed, 0x5eed_0000_0001);
        self.targets
            .iter()
            .map(|t| {
                let phase = match t.phase {
                    Phase::Fixed(v) => v,
                    Phase::Keyword(PhaseKeyword::Random) => r.random_range(0.0..TWO_PI),
                };
                Target {
                    range: t.range,
                    velocity: t.velocity,
                    amplitude: Complex64::from_polar(t.amplitude, phase),
                }
            })
            .collect()
    }
}

/// Four close targets sharing bin 2001 (centre 75 km), relative ranges
/// 14, 18, 14 and 1 m.
pub fn refinement_scenario(config: &RadarConfig) -> Scenario {
    let centre = config.bin_center(2001);
    let rel = [14.0, 18.0, 14.0, 1.0];
    let vel = [-8.91, -16.29, -2.32, -3.26];
    let amp = [1.0, 0.8, 0.3, 0.2];
    let phase = [3.3, 3.0, 3.5, 3.4];
    Scenario {
        snr_r_db: -20.0,
        seed: 0,
        range_window: [centre - 0.5 * config.bin_size(), centre + 0.5 * config.bin_size()],
        targets: (0..4)
            .map(|k| ScenarioTarget {
                range: centre + rel[k],
                velocity: vel[k],
                amplitude: amp[k],
                phase: Phase::Fixed(phase[k]),
            })
            .collect(),
    }
}

/// Six targets spread over bins 2081..2096 of the 77.5–79 km window.
pub fn full_range_scenario() -> Scenario {
    let ranges = [78005.0, 78038.0, 78025.0, 78437.5, 78570.0, 78645.0];
    let vel = [5.0, -10.0, -8.0, -8.0, 6.0, 6.0];
    let amp = [1.0, 0.5, -1.0, 1.2, -1.0, 1.2];
    Scenario {
        snr_r_db: -15.0,
        seed: 0,
        range_window: [77_500.0, 79_000.0],
        targets: (0..6)
            .map(|k| ScenarioTarget {
                range: ranges[k],
                velocity: vel[k],
                amplitude: amp[k],
                phase: Phase::Keyword(PhaseKeyword::Random),
            })
            .collect(),
    }
}
