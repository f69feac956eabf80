//! Radar parameters, the frequency-hop code and the conversions between
//! physical range/velocity and the digital frequencies `(p, q)`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

pub const TWO_PI: f64 = 2.0 * PI;

/// Speed of light used unless a config overrides it. The round value keeps
/// the 37.5 m bin size and the derived constants exact.
pub const DEFAULT_SPEED_OF_LIGHT: f64 = 3.0e8;

/// How the coarse grid objective is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GridStrategy {
    /// Precomputed atom matrix, one inner product per grid node.
    Dense,
    /// Same sums as `Dense`, atoms regenerated per scan.
    Streamed,
    /// Inner products regrouped by hop symbol; same values up to rounding.
    #[default]
    Factored,
}

/// All physical and algorithmic parameters. Serialized key names follow the
/// parameter table (`bandwidth_B`, `pulse_duration_Tp`, ...), SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarConfig {
    #[serde(rename = "bandwidth_B")]
    pub bandwidth: f64,
    #[serde(rename = "pulse_duration_Tp")]
    pub pulse_duration: f64,
    #[serde(rename = "chirp_rate_kappa")]
    pub chirp_rate: f64,
    #[serde(rename = "pri_T")]
    pub pri: f64,
    #[serde(rename = "carrier_fc")]
    pub carrier: f64,
    #[serde(rename = "step_df")]
    pub freq_step: f64,
    #[serde(rename = "sample_rate_Fs")]
    pub sample_rate: f64,
    #[serde(rename = "num_pulses_N")]
    pub num_pulses: usize,
    #[serde(rename = "num_freqs_M")]
    pub num_freqs: usize,
    #[serde(rename = "noise_var_sigma2")]
    pub noise_var: f64,
    pub n_ref: usize,
    pub oversample_gamma_p: f64,
    pub oversample_gamma_q: f64,
    #[serde(rename = "newton_steps_Rs")]
    pub newton_steps: usize,
    #[serde(rename = "cyclic_rounds_Rc")]
    pub cyclic_rounds: usize,
    pub pfa: f64,
    /// `[R_min, R_max]` in metres.
    pub range_window: [f64; 2],
    /// Total baseband bandwidth `B_c`; when given, `M` must equal `⌊B_c/Δf⌋ + 1`.
    #[serde(default, rename = "total_bandwidth_Bc", skip_serializing_if = "Option::is_none")]
    pub total_bandwidth: Option<f64>,
    #[serde(default = "default_c")]
    pub speed_of_light: f64,
    /// Cap on detections per bin; `None` means `N / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_detections: Option<usize>,
    #[serde(default)]
    pub grid_strategy: GridStrategy,
}

fn default_c() -> f64 {
    DEFAULT_SPEED_OF_LIGHT
}

impl Default for RadarConfig {
    fn default() -> Self {
        Self::reference_profile()
    }
}

impl RadarConfig {
    /// The reference simulation profile: 4 MHz chirp of 200 µs, 1.5 ms PRI,
    /// 3 GHz carrier hopping over 16 steps of 4 MHz, 64 pulses, γ = 4.
    pub fn reference_profile() -> Self {
        Self {
            bandwidth: 4.0e6,
            pulse_duration: 200e-6,
            chirp_rate: 2.0e10,
            pri: 1.5e-3,
            carrier: 3.0e9,
            freq_step: 4.0e6,
            sample_rate: 4.0e6,
            num_pulses: 64,
            num_freqs: 16,
            noise_var: 1.0,
            n_ref: 801,
            oversample_gamma_p: 4.0,
            oversample_gamma_q: 4.0,
            newton_steps: 20,
            cyclic_rounds: 3,
            pfa: 1e-2,
            range_window: [77_500.0, 79_000.0],
            total_bandwidth: None,
            speed_of_light: DEFAULT_SPEED_OF_LIGHT,
            max_detections: None,
            grid_strategy: GridStrategy::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// `⌊T_p·F_s⌋ + 1`, robust to the product landing a hair below an integer.
    pub fn expected_n_ref(&self) -> usize {
        (self.pulse_duration * self.sample_rate + 1e-9).floor() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let positive = [
            ("bandwidth_B", self.bandwidth),
            ("pulse_duration_Tp", self.pulse_duration),
            ("pri_T", self.pri),
            ("carrier_fc", self.carrier),
            ("step_df", self.freq_step),
            ("sample_rate_Fs", self.sample_rate),
            ("speed_of_light", self.speed_of_light),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be finite and positive, got {v}"));
            }
        }
        if !(self.noise_var.is_finite() && self.noise_var >= 0.0) {
            return bad(format!("noise_var_sigma2 must be non-negative, got {}", self.noise_var));
        }
        let kb = self.chirp_rate * self.pulse_duration;
        if ((kb - self.bandwidth) / self.bandwidth).abs() > 1e-9 {
            return bad(format!("bandwidth_B ({}) != chirp_rate_kappa * pulse_duration_Tp ({kb})", self.bandwidth));
        }
        if self.num_pulses < 2 || self.num_freqs < 2 {
            return bad(format!("need N >= 2 and M >= 2, got N={} M={}", self.num_pulses, self.num_freqs));
        }
        if let Some(bc) = self.total_bandwidth {
            let m = (bc / self.freq_step + 1e-9).floor() as usize + 1;
            if m != self.num_freqs {
                return bad(format!("num_freqs_M ({}) inconsistent with floor(B_c/df)+1 = {m}", self.num_freqs));
            }
        }
        if self.n_ref != self.expected_n_ref() {
            return bad(format!("n_ref ({}) != floor(Tp*Fs)+1 = {}", self.n_ref, self.expected_n_ref()));
        }
        for (name, g, base) in [
            ("oversample_gamma_p", self.oversample_gamma_p, self.num_freqs),
            ("oversample_gamma_q", self.oversample_gamma_q, self.num_pulses),
        ] {
            if !(g >= 1.0) {
                return bad(format!("{name} must be >= 1, got {g}"));
            }
            let cells = g * base as f64;
            if (cells - cells.round()).abs() > 1e-9 {
                return bad(format!("{name} * {base} = {cells} is not an integer grid size"));
            }
        }
        if !(self.pfa > 0.0 && self.pfa < 1.0) {
            return bad(format!("pfa must lie in (0, 1), got {}", self.pfa));
        }
        let [lo, hi] = self.range_window;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
            return bad(format!("range_window must satisfy 0 <= R_min <= R_max, got [{lo}, {hi}]"));
        }
        let (ru, vu) = (self.unambiguous_range(), self.unambiguous_velocity());
        if !(ru.is_finite() && ru > 0.0 && vu.is_finite() && vu > 0.0) {
            return bad("derived R_u / v_u are not finite and positive".into());
        }
        Ok(())
    }

    pub fn sample_interval(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Range extent of one coarse bin, `c / (2 F_s)`.
    pub fn bin_size(&self) -> f64 {
        self.speed_of_light / (2.0 * self.sample_rate)
    }

    /// `R_u = c / (2 Δf)`.
    pub fn unambiguous_range(&self) -> f64 {
        self.speed_of_light / (2.0 * self.freq_step)
    }

    /// `v_u = c / (2 f_c T)`.
    pub fn unambiguous_velocity(&self) -> f64 {
        self.speed_of_light / (2.0 * self.carrier * self.pri)
    }

    /// `Δf / f_c`, the coupling between hop symbol and slow-time phase.
    pub fn coupling(&self) -> f64 {
        self.freq_step / self.carrier
    }

    pub fn grid_len_p(&self) -> usize {
        (self.oversample_gamma_p * self.num_freqs as f64).round() as usize
    }

    pub fn grid_len_q(&self) -> usize {
        (self.oversample_gamma_q * self.num_pulses as f64).round() as usize
    }

    /// Grid half-spacings, also the hit tolerances `(π/(γ_p M), π/(γ_q N))`.
    pub fn half_cell(&self) -> (f64, f64) {
        (PI / self.grid_len_p() as f64, PI / self.grid_len_q() as f64)
    }

    pub fn detection_cap(&self) -> usize {
        self.max_detections.unwrap_or(self.num_pulses / 2).max(1)
    }

    /// Centre range of bin `l`, `(l - 1) c / (2 F_s)`.
    pub fn bin_center(&self, bin_l: usize) -> f64 {
        (bin_l as f64 - 1.0) * self.bin_size()
    }

    /// Bins covered by `range_window`.
    pub fn window_bins(&self) -> std::ops::RangeInclusive<usize> {
        let [lo, hi] = self.range_window;
        coarse_bin_index(lo, self)..=coarse_bin_index(hi, self)
    }

    /// `-(4π Δf / c)`: radians of `p` per metre of sub-bin range.
    pub fn p_per_metre(&self) -> f64 {
        -4.0 * PI * self.freq_step / self.speed_of_light
    }

    /// `-(4π f_c T / c)`: radians of `q` per m/s.
    pub fn q_per_mps(&self) -> f64 {
        -4.0 * PI * self.carrier * self.pri / self.speed_of_light
    }

    pub fn with_oversampling(mut self, gamma_p: f64, gamma_q: f64) -> Self {
        self.oversample_gamma_p = gamma_p;
        self.oversample_gamma_q = gamma_q;
        self
    }
}

/// Wrap into the half-open interval `[-π, π)`. Values already inside are
/// returned untouched, which makes the map exactly idempotent.
pub fn wrap_angle(x: f64) -> f64 {
    if (-PI..PI).contains(&x) {
        return x;
    }
    let y = (x + PI).rem_euclid(TWO_PI) - PI;
    if y >= PI {
        y - TWO_PI
    } else if y < -PI {
        -PI
    } else {
        y
    }
}

/// Digital frequencies of one component, both wrapped into `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DigitalFreqPair {
    pub p: f64,
    pub q: f64,
}

impl DigitalFreqPair {
    pub fn new(p: f64, q: f64) -> Self {
        Self {
            p: wrap_angle(p),
            q: wrap_angle(q),
        }
    }
}

/// Per-pulse hop symbols `d_n ∈ {0, …, M-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyHopCode {
    pub codes: Vec<usize>,
    pub seed: u64,
}

impl FrequencyHopCode {
    pub fn from_codes(codes: Vec<usize>, num_freqs: usize) -> Result<Self> {
        if let Some(&bad) = codes.iter().find(|&&d| d >= num_freqs) {
            return Err(Error::InvalidArgument(format!(
                "hop symbol {bad} outside 0..{num_freqs}"
            )));
        }
        Ok(Self { codes, seed: 0 })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Hex SHA-256 of the symbol sequence; keys threshold caches.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for &d in &self.codes {
            h.update((d as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Draws `N` i.i.d. uniform hop symbols; bit-reproducible for a fixed seed.
pub fn draw_code(config: &RadarConfig, seed: u64) -> FrequencyHopCode {
    let m = config.num_freqs.max(1);
    let mut rng = rng::stream(seed);
    let codes = (0..config.num_pulses).map(|_| rng.random_range(0..m)).collect();
    FrequencyHopCode { codes, seed }
}

/// Wrapped `(p, q)` of a scatterer at absolute `range_m` seen from bin `bin_l`.
pub fn range_to_pq(range_m: f64, velocity_mps: f64, bin_l: usize, config: &RadarConfig) -> DigitalFreqPair {
    let (p, q) = range_to_pq_unwrapped(range_m, velocity_mps, bin_l, config);
    DigitalFreqPair::new(p, q)
}

/// Same as [`range_to_pq`] without wrapping; the full-range synthesizer
/// needs the unwrapped values inside the ambiguity-function argument.
pub fn range_to_pq_unwrapped(range_m: f64, velocity_mps: f64, bin_l: usize, config: &RadarConfig) -> (f64, f64) {
    let rel = range_m - config.bin_center(bin_l);
    (config.p_per_metre() * rel, config.q_per_mps() * velocity_mps)
}

/// Range (m) and velocity (m/s) for `pq` observed in bin `bin_l`.
pub fn pq_to_range(pq: DigitalFreqPair, bin_l: usize, config: &RadarConfig) -> (f64, f64) {
    (
        pq.p / config.p_per_metre() + config.bin_center(bin_l),
        pq.q / config.q_per_mps(),
    )
}

/// `l = ⌊range / (c/(2F_s)) + 1/2⌋ + 1`.
pub fn coarse_bin_index(range_m: f64, config: &RadarConfig) -> usize {
    ((range_m / config.bin_size() + 0.5).floor().max(0.0)) as usize + 1
}
