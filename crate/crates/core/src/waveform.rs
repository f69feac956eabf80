//! LFM pulse synthesis, its closed-form ambiguity function and discrete
//! pulse compression.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::config::RadarConfig;
use crate::error::{Error, Result};

/// `sin(πx) / (πx)` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let a = PI * x;
        a.sin() / a
    }
}

/// Transmit pulse `s(t) = rect(t/T_p) exp(jκπ(t - T_p/2)²)` on `0 ≤ t ≤ T_p`.
pub fn lfm(t: f64, config: &RadarConfig) -> Complex64 {
    let tp = config.pulse_duration;
    if !(0.0..=tp).contains(&t) {
        return Complex64::new(0.0, 0.0);
    }
    let u = t - 0.5 * tp;
    Complex64::from_polar(1.0, PI * config.chirp_rate * u * u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IqPulse {
    pub samples: Vec<Complex64>,
    pub sample_interval: f64,
}

impl IqPulse {
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// `n_ref` samples of the transmit pulse, sample `k` at `t = k T_s`.
pub fn lfm_samples(config: &RadarConfig) -> IqPulse {
    let ts = config.sample_interval();
    let samples = (0..config.n_ref).map(|k| lfm(k as f64 * ts, config)).collect();
    IqPulse {
        samples,
        sample_interval: ts,
    }
}

/// Closed-form LFM ambiguity function
/// `χ(ξ, f_d) = e^{jπ f_d (T_p + ξ)} (T_p - |ξ|) sinc[(f_d - κξ)(T_p - |ξ|)]`
/// for `|ξ| < T_p`, zero outside.
pub fn ambiguity(xi: f64, fd: f64, config: &RadarConfig) -> Complex64 {
    let tp = config.pulse_duration;
    if xi.abs() >= tp {
        return Complex64::new(0.0, 0.0);
    }
    let span = tp - xi.abs();
    let mag = span * sinc((fd - config.chirp_rate * xi) * span);
    Complex64::from_polar(1.0, PI * fd * (tp + xi)) * mag
}

/// Matched-filter reference for a pulse whose residual carrier is
/// `carrier_hz`, scaled to unit discrete energy.
pub fn reference(carrier_hz: f64, config: &RadarConfig) -> Vec<Complex64> {
    let pulse = lfm_samples(config);
    let norm = pulse.energy().sqrt();
    let ts = pulse.sample_interval;
    pulse
        .samples
        .iter()
        .enumerate()
        .map(|(k, s)| s * Complex64::from_polar(1.0, 2.0 * PI * carrier_hz * k as f64 * ts) / norm)
        .collect()
}

/// Pulse compression by direct correlation:
/// `y[m] = Σ_k rx[m + k] · conj(ref[k])`, `m = 0 ..= rx.len() - n_ref`.
/// Output sample `m` corresponds to an echo starting at `rx[m]`.
pub fn pulse_compress(rx: &[Complex64], carrier_hz: f64, config: &RadarConfig) -> Result<Vec<Complex64>> {
    let r = reference(carrier_hz, config);
    check_len(rx, r.len())?;
    let out = (0..=rx.len() - r.len())
        .map(|m| {
            rx[m..m + r.len()]
                .iter()
                .zip(&r)
                .map(|(x, h)| x * h.conj())
                .sum()
        })
        .collect();
    Ok(out)
}

/// Same correlation as [`pulse_compress`] computed with FFTs.
pub fn pulse_compress_fft(rx: &[Complex64], carrier_hz: f64, config: &RadarConfig) -> Result<Vec<Complex64>> {
    let r = reference(carrier_hz, config);
    check_len(rx, r.len())?;
    let n = (rx.len() + r.len()).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let mut a: Vec<Complex64> = rx.to_vec();
    a.resize(n, Complex64::new(0.0, 0.0));
    let mut b: Vec<Complex64> = r.clone();
    b.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    // correlation <=> A · conj(B)
    for (x, h) in a.iter_mut().zip(&b) {
        *x *= h.conj();
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    Ok(a[..=rx.len() - r.len()].iter().map(|z| z * scale).collect())
}

fn check_len(rx: &[Complex64], n_ref: usize) -> Result<()> {
    if rx.len() < n_ref {
        return Err(Error::LengthMismatch {
            expected: n_ref,
            actual: rx.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn cfg() -> RadarConfig {
        RadarConfig::reference_profile()
    }

    #[test]
    fn pulse_has_unit_modulus_and_zero_phase_at_centre() {
        let c = cfg();
        let p = lfm_samples(&c);
        assert_eq!(p.samples.len(), 801);
        assert!(p.samples.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        let mid = p.samples[400];
        assert!((mid - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn sampled_chirp_occupies_the_sweep_bandwidth() {
        let c = cfg();
        let mut x = lfm_samples(&c).samples;
        let n = 1 << 15;
        x.resize(n, Complex64::new(0.0, 0.0));
        FftPlanner::new().plan_fft_forward(n).process(&mut x);
        // order bins from -Fs/2 to Fs/2
        let mut power: Vec<f64> = (0..n).map(|k| x[(k + n / 2) % n].norm_sqr()).collect();
        let total: f64 = power.iter().sum();
        for v in power.iter_mut() {
            *v /= total;
        }
        let mut acc = 0.0;
        let mut lo = 0;
        while acc + power[lo] < 0.005 {
            acc += power[lo];
            lo += 1;
        }
        let mut acc = 0.0;
        let mut hi = n - 1;
        while acc + power[hi] < 0.005 {
            acc += power[hi];
            hi -= 1;
        }
        let bw = (hi - lo + 1) as f64 * c.sample_rate / n as f64;
        assert!(bw > 3.8e6 && bw <= 4.0e6, "99% bandwidth {bw}");
    }

    #[test]
    fn ambiguity_peak_and_support() {
        let c = cfg();
        let peak = ambiguity(0.0, 0.0, &c);
        assert!((peak.re - 2e-4).abs() < 1e-18 && peak.im.abs() < 1e-18);
        assert_eq!(ambiguity(2e-4, 10.0, &c), Complex64::new(0.0, 0.0));
        assert_eq!(ambiguity(-3e-4, 0.0, &c), Complex64::new(0.0, 0.0));
    }

    /// Composite Simpson rule for `∫ e^{j2π f_d t} s(t - ξ) s*(t) dt` over the
    /// overlap of the two pulse supports.
    fn ambiguity_quadrature(xi: f64, fd: f64, c: &RadarConfig) -> Complex64 {
        let tp = c.pulse_duration;
        let (a, b) = (xi.max(0.0), (tp + xi).min(tp));
        if b <= a {
            return Complex64::new(0.0, 0.0);
        }
        let n = 20_000;
        let h = (b - a) / n as f64;
        let f = |t: f64| {
            let u1 = t - xi - 0.5 * tp;
            let u2 = t - 0.5 * tp;
            Complex64::from_polar(1.0, 2.0 * PI * fd * t + PI * c.chirp_rate * (u1 * u1 - u2 * u2))
        };
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += f(a + i as f64 * h) * w;
        }
        acc * (h / 3.0)
    }

    #[test]
    fn ambiguity_matches_quadrature() {
        let c = cfg();
        let mut r = rng::stream(21);
        for _ in 0..20 {
            let xi = r.random_range(-1.9e-4..1.9e-4);
            let fd = r.random_range(-2e4..2e4);
            let closed = ambiguity(xi, fd, &c);
            let quad = ambiguity_quadrature(xi, fd, &c);
            let err = (closed - quad).norm() / c.pulse_duration;
            assert!(err < 1e-3, "xi={xi} fd={fd} err={err}");
        }
    }

    #[test]
    fn ambiguity_symmetry_and_bound() {
        let c = cfg();
        for i in -40..=40 {
            for j in -20..=20 {
                let xi = i as f64 * 4.9e-6;
                let fd = j as f64 * 750.0;
                let a = ambiguity(xi, fd, &c).norm();
                let b = ambiguity(-xi, -fd, &c).norm();
                assert!((a - b).abs() < 1e-15);
                assert!(a <= c.pulse_duration * (1.0 + 1e-12));
            }
        }
    }

    fn echo(c: &RadarConfig, delay_samples: usize, amp: f64, len: usize) -> Vec<Complex64> {
        let p = lfm_samples(c).samples;
        let mut rx = vec![Complex64::new(0.0, 0.0); len];
        for (k, s) in p.iter().enumerate() {
            rx[delay_samples + k] = s * amp;
        }
        rx
    }

    #[test]
    fn compression_gain_is_ten_log_n_ref() {
        let c = cfg();
        let amp = 0.05;
        let rx = echo(&c, 37, amp, 1200);
        let y = pulse_compress(&rx, 0.0, &c).unwrap();
        let (idx, peak) = y
            .iter()
            .enumerate()
            .map(|(i, z)| (i, z.norm()))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        assert_eq!(idx, 37);
        // unit noise in, unit noise out: gain is peak power over input power
        let gain_db = 10.0 * (peak * peak / (amp * amp)).log10();
        assert!((gain_db - 29.03).abs() < 0.01, "gain {gain_db}");
    }

    #[test]
    fn reference_autocorrelation_peak() {
        let c = cfg();
        let p = lfm_samples(&c);
        let y = pulse_compress(&p.samples, 0.0, &c).unwrap();
        assert_eq!(y.len(), 1);
        let expect = p.energy() / (c.n_ref as f64).sqrt();
        assert!((y[0].re - expect).abs() < 1e-9 && y[0].im.abs() < 1e-9);
    }

    #[test]
    fn compression_preserves_noise_variance() {
        let c = cfg();
        let mut r = rng::stream(4);
        let rx = rng::complex_noise(&mut r, 100_000 + c.n_ref - 1, 2.0);
        let y = pulse_compress_fft(&rx, 0.0, &c).unwrap();
        let v = y.iter().map(|z| z.norm_sqr()).sum::<f64>() / y.len() as f64;
        assert!((v / 2.0 - 1.0).abs() < 0.05, "variance {v}");
    }

    #[test]
    fn fft_and_direct_correlation_agree() {
        let c = cfg();
        let mut r = rng::stream(8);
        let rx = rng::complex_noise(&mut r, 3000, 1.0);
        for carrier in [0.0, 1.25e5] {
            let a = pulse_compress(&rx, carrier, &c).unwrap();
            let b = pulse_compress_fft(&rx, carrier, &c).unwrap();
            let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).norm() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn compression_is_linear() {
        let c = cfg();
        let mut r = rng::stream(9);
        let x = rng::complex_noise(&mut r, 1500, 1.0);
        let y = rng::complex_noise(&mut r, 1500, 1.0);
        let (a, b) = (Complex64::new(0.3, -1.2), Complex64::new(-2.0, 0.5));
        let mix: Vec<Complex64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let lhs = pulse_compress(&mix, 0.0, &c).unwrap();
        let px = pulse_compress(&x, 0.0, &c).unwrap();
        let py = pulse_compress(&y, 0.0, &c).unwrap();
        for i in 0..lhs.len() {
            let rhs = a * px[i] + b * py[i];
            assert!((lhs[i] - rhs).norm() < 1e-12 * (1.0 + rhs.norm()));
        }
    }

    #[test]
    fn short_input_is_rejected() {
        let c = cfg();
        let rx = vec![Complex64::new(1.0, 0.0); 10];
        assert!(matches!(
            pulse_compress(&rx, 0.0, &c),
            Err(Error::LengthMismatch { expected: 801, actual: 10 })
        ));
        assert!(pulse_compress_fft(&rx, 0.0, &c).is_err());
    }
}
