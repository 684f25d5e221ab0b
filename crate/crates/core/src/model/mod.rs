//! 1D ResNet-18 over `3 × 7` trajectory windows.
//!
//! Layout: a stride-1 stem (conv, BN, ReLU) followed by four stages of two
//! basic blocks. Stages 2 to 4 open with a stride-2 block and a 1×1 projection
//! shortcut, so a 7-sample window shrinks 7 → 4 → 2 → 1 along time. A global
//! average pool feeds the linear classifier. There is no max-pool.

mod params;
mod resnet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{conv_out_len, AutodiffError};

pub use params::{ParamStore, FORMAT_VERSION};
pub use resnet::{Forward, ResNet1d};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input shape {got:?} does not match the model (expected B×{channels}×{length})")]
    InputShape {
        got: Vec<usize>,
        channels: usize,
        length: usize,
    },
    #[error("non-finite values in {0}; training diverged")]
    NonFinite(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("model file format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub input_length: usize,
    pub n_classes: usize,
    pub width_mult: f64,
    pub stage_blocks: [usize; 4],
    pub stage_channels: [usize; 4],
    pub stem_kernel: usize,
    pub block_kernel: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl ModelConfig {
    /// Canonical layout for `n_classes` participants at width multiplier 0.25.
    pub fn new(n_classes: usize) -> Self {
        Self {
            in_channels: 3,
            input_length: 7,
            n_classes,
            width_mult: 0.25,
            stage_blocks: [2, 2, 2, 2],
            stage_channels: [64, 128, 256, 512],
            stem_kernel: 3,
            block_kernel: 3,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn with_width(mut self, width_mult: f64) -> Self {
        self.width_mult = width_mult;
        self
    }

    /// Stage widths after applying the multiplier, at least one channel each.
    pub fn channels(&self) -> [usize; 4] {
        self.stage_channels
            .map(|c| ((c as f64 * self.width_mult).round() as usize).max(1))
    }

    /// Time length after the stem and after each stage.
    pub fn length_plan(&self) -> Result<Vec<usize>, ModelError> {
        let bad = |what: &str| ModelError::InvalidConfig(format!("input length {} too short: {what}", self.input_length));
        let mut len = conv_out_len(self.input_length, self.stem_kernel, 1, self.stem_kernel / 2).ok_or_else(|| bad("stem"))?;
        let mut plan = vec![len];
        for s in 0..4 {
            let stride = if s == 0 { 1 } else { 2 };
            len = conv_out_len(len, self.block_kernel, stride, self.block_kernel / 2)
                .filter(|&l| l >= 1)
                .ok_or_else(|| bad(&format!("stage {}", s + 1)))?;
            plan.push(len);
        }
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if !(self.width_mult > 0.0 && self.width_mult.is_finite()) {
            return bad(format!("width_mult must be positive, got {}", self.width_mult));
        }
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.in_channels == 0 {
            return bad("in_channels must be positive".into());
        }
        if self.stem_kernel.is_multiple_of(2) || self.block_kernel.is_multiple_of(2) {
            return bad("kernel sizes must be odd".into());
        }
        if self.stage_blocks.contains(&0) {
            return bad("every stage needs at least one block".into());
        }
        if self.input_length == 0 {
            return bad("input_length must be positive".into());
        }
        self.length_plan()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_length_plan() {
        let cfg = ModelConfig::new(9);
        assert_eq!(cfg.length_plan().unwrap(), vec![7, 7, 4, 2, 1]);
        assert_eq!(cfg.channels(), [16, 32, 64, 128]);
        assert_eq!(cfg.clone().with_width(0.125).channels(), [8, 16, 32, 64]);
    }

    #[test]
    fn invalid_configs() {
        assert!(ModelConfig::new(1).validate().is_err());
        assert!(ModelConfig::new(3).with_width(0.0).validate().is_err());
        let mut c = ModelConfig::new(3);
        c.input_length = 0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(3);
        c.block_kernel = 4;
        assert!(c.validate().is_err());
    }
}
