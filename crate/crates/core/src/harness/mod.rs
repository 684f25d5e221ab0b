//! Cross-validation protocol: participant subsets, per-participant folds,
//! the training loop with validation-based snapshot selection, metrics and
//! the run directory.

mod metrics;
mod run;
mod split;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::OptimizerConfig;
use crate::dsp::FilterSpec;

pub use metrics::{
    accuracy, confusion_matrix, lower_median, majority_vote, per_target_accuracy, render_percent, TargetAccuracy,
};
pub use run::{aggregate, environment_stamp, load_summary, run_cross_validation, RunSummary, Spread, TargetSummary};
pub use split::{
    make_folds, make_window_folds, select_equidistant, LeakageMode, LedgerRow, SplitPlan, SplitUnit, SubsetSpec,
};
pub use train::{evaluate, fit, prepare_fold, train_fold, Curves, FoldData, FoldReport, Fitted};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("training diverged at epoch {epoch}: {message}")]
    Divergence { epoch: usize, message: String },
    #[error("invalid participant subset: {0}")]
    InvalidSubset(String),
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("participant {participant} has {found} trials, fewer than the {folds} folds")]
    InsufficientTrials { participant: u32, found: usize, folds: usize },
    #[error("class id {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("fold {fold}: {split} split holds no windows")]
    EmptySplit { fold: usize, split: &'static str },
    #[error("run directory: {0}")]
    RunDir(String),
}

/// Everything that determines a cross-validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Window length in samples.
    pub window: usize,
    pub filter: FilterSpec,
    pub subset: SubsetSpec,
    pub leakage: LeakageMode,
    pub folds: usize,
    pub width_mult: f64,
    /// Run folds one after another on one thread.
    pub deterministic: bool,
    /// Folds trained concurrently when not in determinism mode.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            window: 7,
            filter: FilterSpec::default(),
            subset: SubsetSpec::All,
            leakage: LeakageMode::Trial,
            folds: 10,
            width_mult: 0.25,
            deterministic: true,
            jobs: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if self.window == 0 {
            return bad("window length must be positive".into());
        }
        if self.folds < 2 {
            return bad(format!("need at least 2 folds, got {}", self.folds));
        }
        if !(self.width_mult > 0.0 && self.width_mult.is_finite()) {
            return bad(format!("width_mult must be positive, got {}", self.width_mult));
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        if !(self.optimizer.lr() > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.optimizer.lr()));
        }
        self.filter
            .validate()
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))
    }

    /// Worker threads actually used for folds.
    pub fn effective_jobs(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.jobs
        }
    }
}
