//! Preprocessing: Butterworth low-pass filtering, z-scoring and windowing.
//!
//! The chain always runs filter → normalize → window. Normalization statistics
//! come from training trials only; see [`preprocess`].

mod butterworth;
mod filter;
mod normalize;
mod window;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use butterworth::{design_butterworth, evaluate_response, Biquad, SosChain};
pub use filter::{filter_catalog, filter_signal, filter_trial};
pub use normalize::{compute_norm_stats, normalize_trial, NormStats, DEFAULT_GUARD_EPS};
pub use window::{
    preprocess, read_windowset, window_trial, windows_from_trials, write_windowset, StatsSource,
    Window, WindowSet, CHANNELS,
};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
    #[error("filter order must be even and at least 2, got {0}")]
    OddOrder(usize),
    #[error("cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({nyquist} Hz)")]
    CutoffAboveNyquist { cutoff_hz: f64, nyquist: f64 },
    #[error("signal of {len} samples is too short for zero-phase filtering (needs {needed})")]
    TooShort { len: usize, needed: usize },
    #[error("sampling rate mismatch: filter designed for {designed} Hz, trial at {actual} Hz")]
    RateMismatch { designed: f64, actual: f64 },
    #[error("cannot compute normalization statistics from empty input")]
    EmptyInput,
    #[error("window file: {0}")]
    Format(String),
    #[error("label {0} does not fit the window file's 16-bit label field")]
    LabelOverflow(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Filtering direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    Causal,
    #[default]
    ZeroPhase,
}

impl std::str::FromStr for FilterMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "causal" => Ok(FilterMode::Causal),
            "zero-phase" => Ok(FilterMode::ZeroPhase),
            _ => Err(format!("unknown filter mode {s:?} (expected causal or zero-phase)")),
        }
    }
}

/// Low-pass Butterworth parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub order: usize,
    pub cutoff_hz: f64,
    pub fs_hz: f64,
    pub mode: FilterMode,
}

impl Default for FilterSpec {
    /// 4th order, 7 Hz cutoff at 250 Hz, zero-phase.
    fn default() -> Self {
        Self {
            order: 4,
            cutoff_hz: 7.0,
            fs_hz: 250.0,
            mode: FilterMode::ZeroPhase,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<(), DspError> {
        if self.order < 2 || !self.order.is_multiple_of(2) {
            return Err(DspError::OddOrder(self.order));
        }
        if !(self.fs_hz.is_finite() && self.fs_hz > 0.0) {
            return Err(DspError::InvalidFilter(format!(
                "sampling rate must be positive, got {}",
                self.fs_hz
            )));
        }
        let nyquist = self.fs_hz / 2.0;
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < nyquist) {
            return Err(DspError::CutoffAboveNyquist {
                cutoff_hz: self.cutoff_hz,
                nyquist,
            });
        }
        Ok(())
    }

    /// Parse the `butter:<order>:<cutoff_hz>` grammar.
    pub fn parse(text: &str, fs_hz: f64, mode: FilterMode) -> Result<Self, DspError> {
        let parts: Vec<&str> = text.split(':').collect();
        let bad = || DspError::InvalidFilter(format!("expected butter:<order>:<cutoff_hz>, got {text:?}"));
        if parts.len() != 3 || parts[0] != "butter" {
            return Err(bad());
        }
        let order = parts[1].parse().map_err(|_| bad())?;
        let cutoff_hz = parts[2].parse().map_err(|_| bad())?;
        let spec = Self {
            order,
            cutoff_hz,
            fs_hz,
            mode,
        };
        spec.validate()?;
        Ok(spec)
    }
}
