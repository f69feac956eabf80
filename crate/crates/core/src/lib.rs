//! Range/velocity estimation for LFM frequency-agile radar.
//!
//! Each coarse range bin of a frequency-agile CPI is a 2-D line-spectral
//! problem in the digital frequencies `(p, q)`. This crate synthesizes such
//! scenes, extracts targets with a Newton-refined greedy pursuit whose
//! stopping threshold is calibrated by Monte Carlo, analyses how fine the
//! coarse grid must be for the Newton step to converge, and removes ghost
//! detections that ambiguity-function sidelobes leave in neighbouring bins.
//!
//! Module map:
//!
//! - [`config`]: radar parameters, hop code, physical ↔ digital conversions
//! - [`waveform`]: LFM pulse, ambiguity function, pulse compression
//! - [`scene`]: per-bin and full-range measurement synthesis, SNR budget
//! - [`nomp`]: atoms, coarse grid, Newton refinement, target extraction
//! - [`cfar`]: stopping-threshold calibration
//! - [`gridding`]: oversampling analysis of the averaged objective
//! - [`ghost`]: cross-bin ghost suppression
//! - [`metrics`]: hit-rate / success-rate scoring

pub mod cfar;
pub mod config;
pub mod error;
pub mod ghost;
pub mod gridding;
pub mod metrics;
pub mod nomp;
pub mod rng;
pub mod scene;
pub mod waveform;

pub use num_complex::Complex64;

pub use config::{DigitalFreqPair, FrequencyHopCode, RadarConfig};
pub use error::{Error, Result};
pub use nomp::{Detection, DetectionSet};
pub use scene::{BinMeasurement, Target};
