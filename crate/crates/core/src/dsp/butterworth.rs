use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{DspError, FilterSpec};

/// One second-order section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Roots of `z² + a1·z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        let sq = Complex64::new(disc, 0.0).sqrt();
        [(-self.a1 + sq) / 2.0, (-self.a1 - sq) / 2.0]
    }

    pub fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b0 + z_inv * self.b1 + z2 * self.b2) / (1.0 + z_inv * self.a1 + z2 * self.a2)
    }

    pub fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }
}

/// Cascade of biquads with a scalar gain applied to the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SosChain {
    pub sections: Vec<Biquad>,
    pub overall_gain: f64,
    pub fs_hz: f64,
}

impl SosChain {
    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    pub fn is_stable(&self) -> bool {
        self.sections
            .iter()
            .all(|s| s.poles().iter().all(|p| p.norm() < 1.0))
    }
}

/// Prewarped analog cutoff `2·fs·tan(π·fc/fs)` in rad/s.
pub(crate) fn prewarped_cutoff(spec: &FilterSpec) -> f64 {
    2.0 * spec.fs_hz * (PI * spec.cutoff_hz / spec.fs_hz).tan()
}

/// Digital Butterworth low-pass: analog prototype poles on a circle of radius
/// `Ωc` (prewarped), mapped section by section through the bilinear transform.
pub fn design_butterworth(spec: &FilterSpec) -> Result<SosChain, DspError> {
    spec.validate()?;
    let n = spec.order;
    let wc = prewarped_cutoff(spec);
    let k = 2.0 * spec.fs_hz;
    let mut sections = Vec::with_capacity(n / 2);
    for i in 0..n / 2 {
        // Conjugate pole pair at angle θ, with Re(p) = Ωc·cos θ < 0.
        let theta = PI * (2 * i + n + 1) as f64 / (2 * n) as f64;
        let sigma = wc * theta.cos();
        let w2 = wc * wc;
        // (s² − 2σs + Ωc²) with s = K(1 − z⁻¹)/(1 + z⁻¹), times (1 + z⁻¹)².
        let a0 = k * k - 2.0 * sigma * k + w2;
        let a1 = 2.0 * (w2 - k * k) / a0;
        let a2 = (k * k + 2.0 * sigma * k + w2) / a0;
        let g = w2 / a0;
        sections.push(Biquad {
            b0: g,
            b1: 2.0 * g,
            b2: g,
            a1,
            a2,
        });
    }
    Ok(SosChain {
        sections,
        overall_gain: 1.0,
        fs_hz: spec.fs_hz,
    })
}

/// Complex gain of the cascade at `f_hz`.
pub fn evaluate_response(chain: &SosChain, f_hz: f64, fs_hz: f64) -> Complex64 {
    let z_inv = Complex64::from_polar(1.0, -2.0 * PI * f_hz / fs_hz);
    chain
        .sections
        .iter()
        .fold(Complex64::new(chain.overall_gain, 0.0), |acc, s| {
            acc * s.response(z_inv)
        })
}
