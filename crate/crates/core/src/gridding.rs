//! How fine the coarse grid has to be for Newton refinement to converge.
//!
//! Averaged over i.i.d. uniform hop codes, the single-target objective
//! separates into Dirichlet-kernel profiles along each axis. Along one axis,
//! in units of Nyquist cells, the normalised profile is
//! `g(x) = ½ h_K²(η · 2πx / K)` with `K = M, η = 1` for `p` and
//! `K = N, η = 1 + (M-1)Δf/(2f_c)` for `q`. Quadratic Newton convergence on
//! an interval `I` around the peak holds when the start lies within
//! `1/W(I)` of it, `W(I) = sup_I ½|g‴/g″|`. The largest admissible grid
//! spacing is where the half-width `|I|/2` meets `1/W(I)`.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DigitalFreqPair, FrequencyHopCode, RadarConfig};
use crate::error::{Error, Result};
use crate::nomp::AtomBasis;

/// Interval lengths are swept on this step, in cells.
pub const SWEEP_STEP: f64 = 1e-3;
/// Points per interval for the supremum.
pub const SUP_POINTS: usize = 2001;
/// `|g″|` below this counts as an inflection point.
pub const INFLECTION_EPS: f64 = 1e-9;
const SWEEP_MAX: f64 = 2.0;

/// `h_M(x) = sin(Mx/2) / (M sin(x/2))`, with the limit `(-1)^{k(M-1)}` at
/// `x = 2πk`.
pub fn h_kernel(x: f64, m: usize) -> f64 {
    let half = 0.5 * x;
    let den = m as f64 * half.sin();
    if den.abs() < 1e-6 {
        return h_derivs(x, m)[0];
    }
    (m as f64 * half).sin() / den
}

/// `h_M` and its first three derivatives from the cosine-sum form
/// `h_M(x) = (1/M) Σ_l cos(c_l x)`, `c_l = l - (M-1)/2`, which has no
/// removable singularities.
pub fn h_derivs(x: f64, m: usize) -> [f64; 4] {
    let mut out = [0.0; 4];
    let mid = 0.5 * (m as f64 - 1.0);
    for l in 0..m {
        let c = l as f64 - mid;
        let (s, co) = (c * x).sin_cos();
        out[0] += co;
        out[1] -= c * s;
        out[2] -= c * c * co;
        out[3] += c * c * c * s;
    }
    out.map(|v| v / m as f64)
}

/// `g` and its first three derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GDerivs {
    pub g: f64,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    P,
    Q,
}

/// One-axis profile `g(x) = ½ h_K²(η 2π x / K)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisKernel {
    pub size: usize,
    pub eta: f64,
}

impl AxisKernel {
    pub fn for_axis(axis: Axis, config: &RadarConfig) -> Self {
        match axis {
            Axis::P => Self { size: config.num_freqs, eta: 1.0 },
            Axis::Q => Self { size: config.num_pulses, eta: eta(config) },
        }
    }

    pub fn eval(&self, x: f64) -> GDerivs {
        let a = self.eta * 2.0 * PI / self.size as f64;
        let [h, h1, h2, h3] = h_derivs(a * x, self.size);
        GDerivs {
            g: 0.5 * h * h,
            g1: a * h * h1,
            g2: a * a * (h1 * h1 + h * h2),
            g3: a * a * a * (3.0 * h1 * h2 + h * h3),
        }
    }

    /// `W(I)` for `I = [-len/2, len/2]`; infinite if `g″` vanishes in `I`.
    pub fn w(&self, len: f64) -> f64 {
        let half = 0.5 * len;
        let mut sup = 0.0f64;
        let mut sign = 0.0;
        for k in 0..SUP_POINTS {
            let x = -half + len * k as f64 / (SUP_POINTS - 1) as f64;
            let d = self.eval(x);
            // an inflection between two samples counts as touching it
            if d.g2.abs() < INFLECTION_EPS || d.g2.signum() * sign < 0.0 {
                return f64::INFINITY;
            }
            sign = d.g2.signum();
            sup = sup.max(0.5 * (d.g3 / d.g2).abs());
        }
        sup
    }

    pub fn inv_w(&self, len: f64) -> f64 {
        1.0 / self.w(len)
    }
}

/// `g_p(x_p)` with derivatives, `x_p` in Nyquist cells.
pub fn g_p(x_p: f64, config: &RadarConfig) -> GDerivs {
    AxisKernel::for_axis(Axis::P, config).eval(x_p)
}

/// `g_q(x_q)` with derivatives, `x_q` in Nyquist cells.
pub fn g_q(x_q: f64, config: &RadarConfig) -> GDerivs {
    AxisKernel::for_axis(Axis::Q, config).eval(x_q)
}

/// `η = 1 + (M-1)Δf / (2 f_c)`.
pub fn eta(config: &RadarConfig) -> f64 {
    1.0 + (config.num_freqs as f64 - 1.0) * config.coupling() / 2.0
}

/// `S₀(p, q) = |Σ_n a_n(p, q)|²` for one code; equals `N` at the origin.
pub fn s0_empirical(pq: DigitalFreqPair, code: &FrequencyHopCode, config: &RadarConfig) -> f64 {
    let a = AtomBasis::new(code, config).atom(pq.p, pq.q);
    a.iter().sum::<Complex64>().norm_sqr()
}

/// Exact mean of `S₀(p, q)` over i.i.d. uniform codes:
/// `1 + (1/N) Σ_{m≠n} e^{jq(n-m)η} h_M(p + qnε) h_M(p + qmε)`, `ε = Δf/f_c`.
pub fn s0_bar(p: f64, q: f64, config: &RadarConfig) -> f64 {
    let (n, m) = (config.num_pulses, config.num_freqs);
    let eps = config.coupling();
    let e = eta(config);
    let h: Vec<f64> = (0..n).map(|k| h_kernel(p + q * k as f64 * eps, m)).collect();
    let mut acc = 0.0;
    for a in 0..n {
        for b in 0..n {
            if a != b {
                acc += (q * (a as f64 - b as f64) * e).cos() * h[a] * h[b];
            }
        }
    }
    1.0 + acc / n as f64
}

/// `N h_N²(η 2π x_q / N)`, the `q`-axis approximation at `p = 0`.
pub fn s0_bar_q_app(x_q: f64, config: &RadarConfig) -> f64 {
    let n = config.num_pulses;
    let h = h_kernel(eta(config) * 2.0 * PI * x_q / n as f64, n);
    n as f64 * h * h
}

/// Separable approximation `N h_N²(η q) h_M²(p)` of the mean objective.
pub fn s0_bar_separable(p: f64, q: f64, config: &RadarConfig) -> f64 {
    let hn = h_kernel(eta(config) * q, config.num_pulses);
    let hm = h_kernel(p, config.num_freqs);
    config.num_pulses as f64 * hn * hn * hm * hm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub interval_len: f64,
    pub x_max: f64,
    pub inv_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalReport {
    pub axis: Axis,
    /// `(|I|, x)` where `|I|/2 = 1/W(I)`, both in cells.
    pub cross_point: (f64, f64),
    pub min_oversampling: f64,
    pub curve: Vec<CurvePoint>,
}

impl IntervalReport {
    pub fn write_curve_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.curve {
            w.serialize(p)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<csv>".into(),
            source,
        })?;
        Ok(())
    }
}

/// Sweeps `|I|` on [`SWEEP_STEP`], finds the first length whose half-width
/// reaches `1/W`, then bisects inside that step.
pub fn interval_analysis(axis: Axis, config: &RadarConfig) -> Result<IntervalReport> {
    analyse_kernel(axis, AxisKernel::for_axis(axis, config))
}

pub fn analyse_kernel(axis: Axis, kernel: AxisKernel) -> Result<IntervalReport> {
    let steps = (SWEEP_MAX / SWEEP_STEP).round() as usize;
    let curve: Vec<CurvePoint> = (1..=steps)
        .into_par_iter()
        .map(|k| {
            let len = k as f64 * SWEEP_STEP;
            CurvePoint {
                interval_len: len,
                x_max: 0.5 * len,
                inv_w: kernel.inv_w(len),
            }
        })
        .collect();
    let idx = curve.iter().position(|c| c.x_max >= c.inv_w).ok_or(Error::NoCrossing)?;
    let gap = |len: f64| 0.5 * len - kernel.inv_w(len);
    let (mut lo, mut hi) = if idx == 0 {
        (0.0, curve[0].interval_len)
    } else {
        (curve[idx - 1].interval_len, curve[idx].interval_len)
    };
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(IntervalReport {
        axis,
        cross_point: (hi, 0.5 * hi),
        min_oversampling: 1.0 / hi,
        curve,
    })
}
