//! Monte-Carlo calibration of the extraction stopping threshold.
//!
//! Under noise only, the largest grid value of `|a^H w|²` has no usable
//! closed-form distribution, so its upper quantile is estimated from
//! simulated noise vectors. With unit-variance noise the quantile is
//! `g(A, M, N)`; for noise variance `σ²` the threshold is `τ = σ² g`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{FrequencyHopCode, RadarConfig};
use crate::error::{Error, Result};
use crate::nomp::CoarseGrid;
use crate::rng;

/// Below this many expected exceedances the quantile is flagged unreliable.
pub const MIN_EXCEEDANCES: f64 = 10.0;

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    /// Quantile for unit noise variance.
    pub g: f64,
    pub sigma2: f64,
    pub tau_linear: f64,
    pub tau_db: f64,
    pub pfa: f64,
    pub trials: usize,
    pub code_seed: u64,
    pub seed: u64,
    /// 95% interval of the quantile, dB.
    pub ci95: (f64, f64),
    /// Fewer than [`MIN_EXCEEDANCES`] expected exceedances.
    pub unreliable: bool,
}

impl ThresholdReport {
    /// Same calibration for another noise variance.
    pub fn rescaled(&self, sigma2: f64) -> Self {
        if sigma2 == self.sigma2 {
            return self.clone();
        }
        let tau = sigma2 * self.g;
        let shift = to_db(tau) - self.tau_db;
        Self {
            sigma2,
            tau_linear: tau,
            tau_db: to_db(tau),
            ci95: (self.ci95.0 + shift, self.ci95.1 + shift),
            ..self.clone()
        }
    }
}

/// Grid maximum of `|a^H w|²` for `trials` draws of `w ~ CN(0, I_N)`, in
/// trial order. Trial `i` uses the sub-seed `(seed, i)`.
pub fn noise_maxima(grid: &CoarseGrid, trials: usize, seed: u64) -> Vec<f64> {
    let n = grid.basis().len();
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let w = rng::complex_noise(&mut rng::stream_for(seed, i as u64), n, 1.0);
            grid.max_value(&w)
        })
        .collect()
}

fn check_pfa(pfa: f64) -> Result<()> {
    if !(pfa > 0.0 && pfa < 1.0) {
        return Err(Error::InvalidArgument(format!("pfa must lie in (0, 1), got {pfa}")));
    }
    Ok(())
}

/// Order statistic at `⌈(1 - pfa) T⌉` of the (unit-noise) maxima.
pub fn threshold_from_maxima(maxima: &[f64], pfa: f64) -> Result<(f64, (f64, f64))> {
    check_pfa(pfa)?;
    if maxima.is_empty() {
        return Err(Error::InvalidArgument("no trials".into()));
    }
    let mut v = maxima.to_vec();
    v.sort_by(f64::total_cmp);
    let t = v.len();
    let pick = |k: f64| v[(k.ceil() as usize).clamp(1, t) - 1];
    let k = (1.0 - pfa) * t as f64;
    // binomial spread of the rank of the true quantile
    let half = 1.96 * (t as f64 * pfa * (1.0 - pfa)).sqrt();
    let g = pick(k);
    Ok((g, (pick(k - half), pick(k + half + 1.0))))
}

pub fn calibrate_threshold(
    code: &FrequencyHopCode,
    config: &RadarConfig,
    pfa: f64,
    trials: usize,
    seed: u64,
) -> Result<ThresholdReport> {
    check_pfa(pfa)?;
    let grid = CoarseGrid::new(code, config);
    let maxima = noise_maxima(&grid, trials, seed);
    report_from_maxima(&maxima, code, config, pfa, seed)
}

pub fn report_from_maxima(
    maxima: &[f64],
    code: &FrequencyHopCode,
    config: &RadarConfig,
    pfa: f64,
    seed: u64,
) -> Result<ThresholdReport> {
    let sigma2 = config.noise_var;
    let (g, (lo, hi)) = threshold_from_maxima(maxima, pfa)?;
    let tau = sigma2 * g;
    Ok(ThresholdReport {
        g,
        sigma2,
        tau_linear: tau,
        tau_db: to_db(tau),
        pfa,
        trials: maxima.len(),
        code_seed: code.seed,
        seed,
        ci95: (to_db(sigma2 * lo), to_db(sigma2 * hi)),
        unreliable: (maxima.len() as f64) * pfa < MIN_EXCEEDANCES,
    })
}

/// Fraction of noise-only trials (variance `config.noise_var`) whose grid
/// maximum exceeds `tau`.
pub fn measure_pfa(code: &FrequencyHopCode, config: &RadarConfig, tau: f64, trials: usize, seed: u64) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let grid = CoarseGrid::new(code, config);
    let g = tau / config.noise_var;
    let hits = noise_maxima(&grid, trials, seed).iter().filter(|&&m| m > g).count();
    hits as f64 / trials as f64
}

/// JSON file of calibrations keyed by `(M, N, γ_p, γ_q, code digest, pfa)`.
#[derive(Debug, Clone, Default)]
pub struct ThresholdCache {
    path: Option<PathBuf>,
    entries: BTreeMap<String, ThresholdReport>,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    entries: BTreeMap<String, ThresholdReport>,
}

impl ThresholdCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens `path`; a missing file is an empty cache.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let entries = match std::fs::read_to_string(&path) {
            Ok(text) => {
                serde_json::from_str::<CacheFile>(&text)
                    .map_err(|e| Error::Parse {
                        path: path.clone(),
                        message: e.to_string(),
                    })?
                    .entries
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(source) => return Err(Error::Io { path, source }),
        };
        Ok(Self {
            path: Some(path),
            entries,
        })
    }

    pub fn key(code: &FrequencyHopCode, config: &RadarConfig, pfa: f64) -> String {
        format!(
            "M{}_N{}_gp{}_gq{}_pfa{:e}_{}",
            config.num_freqs,
            config.num_pulses,
            config.oversample_gamma_p,
            config.oversample_gamma_q,
            pfa,
            code.digest()
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// A stored calibration with at least `min_trials` trials, rescaled to
    /// the configured noise variance.
    pub fn get(&self, code: &FrequencyHopCode, config: &RadarConfig, pfa: f64, min_trials: usize) -> Option<ThresholdReport> {
        self.entries
            .get(&Self::key(code, config, pfa))
            .filter(|r| r.trials >= min_trials)
            .map(|r| r.rescaled(config.noise_var))
    }

    pub fn insert(&mut self, code: &FrequencyHopCode, config: &RadarConfig, report: ThresholdReport) {
        self.entries.insert(Self::key(code, config, report.pfa), report);
    }

    pub fn save(&self) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|source| Error::Io {
                path: dir.to_path_buf(),
                source,
            })?;
        }
        let text = serde_json::to_string_pretty(&CacheFile {
            entries: self.entries.clone(),
        })?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })
    }

    pub fn get_or_calibrate(
        &mut self,
        code: &FrequencyHopCode,
        config: &RadarConfig,
        pfa: f64,
        trials: usize,
        seed: u64,
    ) -> Result<ThresholdReport> {
        if let Some(r) = self.get(code, config, pfa, trials) {
            return Ok(r);
        }
        let r = calibrate_threshold(code, config, pfa, trials, seed)?;
        self.insert(code, config, r.clone());
        self.save()?;
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::draw_code;

    fn cfg() -> RadarConfig {
        RadarConfig::reference_profile()
    }

    #[test]
    fn quantile_is_the_order_statistic() {
        let m: Vec<f64> = (1..=1000).rev().map(|k| k as f64).collect();
        let (g, (lo, hi)) = threshold_from_maxima(&m, 0.01).unwrap();
        assert_eq!(g, 990.0);
        assert!(lo < g && g < hi);
        assert_eq!(threshold_from_maxima(&m, 0.1).unwrap().0, 900.0);
        assert!(threshold_from_maxima(&m, 0.0).is_err());
        assert!(threshold_from_maxima(&m, 1.0).is_err());
    }

    #[test]
    fn variance_scales_linearly() {
        let c = cfg().with_oversampling(1.0, 1.0);
        let code = draw_code(&c, 1);
        let a = calibrate_threshold(&code, &c, 0.1, 400, 9).unwrap();
        let mut c4 = c.clone();
        c4.noise_var = 4.0;
        let b = calibrate_threshold(&code, &c4, 0.1, 400, 9).unwrap();
        assert_eq!(b.tau_linear, 4.0 * a.tau_linear);
        assert_eq!(b.g, a.g);
        let r = a.rescaled(4.0);
        assert_eq!(r.tau_linear, b.tau_linear);
        assert!((r.ci95.0 - b.ci95.0).abs() < 1e-12);
    }

    #[test]
    fn report_fields() {
        let c = cfg().with_oversampling(1.0, 1.0);
        let code = draw_code(&c, 2);
        let r = calibrate_threshold(&code, &c, 0.01, 500, 3).unwrap();
        assert!(r.tau_linear > 0.0);
        assert!(r.ci95.0 <= r.tau_db && r.tau_db <= r.ci95.1);
        assert!(r.unreliable);
        assert_eq!((r.trials, r.code_seed, r.seed), (500, 2, 3));
        assert!(!calibrate_threshold(&code, &c, 0.1, 200, 3).unwrap().unreliable);
        assert_eq!(calibrate_threshold(&code, &c, 0.01, 500, 3).unwrap(), r);
    }

    #[test]
    fn monotone_in_pfa() {
        let c = cfg().with_oversampling(1.0, 1.0);
        let code = draw_code(&c, 4);
        let m = noise_maxima(&CoarseGrid::new(&code, &c), 3000, 5);
        let t: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&p| threshold_from_maxima(&m, p).unwrap().0)
            .collect();
        assert!(t[0] <= t[1] && t[1] <= t[2]);
    }

    #[test]
    fn doubling_trials_stays_inside_the_interval() {
        let c = cfg().with_oversampling(1.0, 1.0);
        let code = draw_code(&c, 6);
        let a = calibrate_threshold(&code, &c, 0.1, 2000, 7).unwrap();
        let b = calibrate_threshold(&code, &c, 0.1, 4000, 7).unwrap();
        assert!((a.tau_db - b.tau_db).abs() < a.ci95.1 - a.ci95.0);
    }

    #[test]
    fn pfa_limits_and_calibration() {
        let c = cfg().with_oversampling(1.0, 1.0);
        let code = draw_code(&c, 8);
        assert_eq!(measure_pfa(&code, &c, f64::INFINITY, 100, 1), 0.0);
        assert_eq!(measure_pfa(&code, &c, 0.0, 100, 1), 1.0);
        let r = calibrate_threshold(&code, &c, 0.1, 4000, 11).unwrap();
        let pfa = measure_pfa(&code, &c, r.tau_linear, 4000, 12);
        assert!((0.08..0.12).contains(&pfa), "{pfa}");
    }

    #[test]
    fn maxima_are_thread_independent() {
        let c = cfg().with_oversampling(1.0, 1.0);
        let code = draw_code(&c, 9);
        let grid = CoarseGrid::new(&code, &c);
        let a = noise_maxima(&grid, 64, 1);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| noise_maxima(&grid, 64, 1));
        assert_eq!(a, b);
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/cache.json");
        let c = cfg().with_oversampling(1.0, 1.0);
        let code = draw_code(&c, 10);
        let mut cache = ThresholdCache::load(&path).unwrap();
        assert!(cache.is_empty());
        let r = cache.get_or_calibrate(&code, &c, 0.1, 200, 1).unwrap();
        assert!(path.exists());

        let again = ThresholdCache::load(&path).unwrap();
        assert_eq!(again.len(), 1);
        assert_eq!(again.get(&code, &c, 0.1, 200), Some(r.clone()));
        assert_eq!(again.get(&code, &c, 0.1, 201), None);
        assert_eq!(again.get(&code, &c, 0.01, 1), None);
        assert_eq!(again.get(&draw_code(&c, 11), &c, 0.1, 1), None);
        let c4 = cfg().with_oversampling(4.0, 4.0);
        assert_eq!(again.get(&code, &c4, 0.1, 1), None);

        let mut c2 = c.clone();
        c2.noise_var = 2.0;
        assert_eq!(again.get(&code, &c2, 0.1, 1).unwrap().tau_linear, 2.0 * r.tau_linear);

        std::fs::write(&path, "not json").unwrap();
        assert!(matches!(ThresholdCache::load(&path), Err(Error::Parse { .. })));
    }
}
