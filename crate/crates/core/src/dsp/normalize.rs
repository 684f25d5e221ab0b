use serde::{Deserialize, Serialize};

use crate::ingest::Trial;

use super::DspError;

pub const DEFAULT_GUARD_EPS: f64 = 1e-8;

/// Per-channel z-score statistics and where they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 3],
    /// Population standard deviation, floored at `guard_eps`.
    pub std: [f64; 3],
    pub guard_eps: f64,
    /// Identifies the trial set the statistics were computed from.
    pub source: String,
}

impl NormStats {
    pub fn apply(&self, sample: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|c| (sample[c] - self.mean[c]) / self.std[c])
    }
}

/// Mean and population standard deviation per channel over all samples of
/// `trials`, accumulated sequentially in the given order.
pub fn compute_norm_stats<'a, I>(trials: I, guard_eps: f64, source: impl Into<String>) -> Result<NormStats, DspError>
where
    I: IntoIterator<Item = &'a Trial>,
    I::IntoIter: Clone,
{
    let trials = trials.into_iter();
    let mut n = 0usize;
    let mut sum = [0.0f64; 3];
    for t in trials.clone() {
        for s in &t.samples {
            for c in 0..3 {
                sum[c] += s[c];
            }
        }
        n += t.samples.len();
    }
    if n == 0 {
        return Err(DspError::EmptyInput);
    }
    let mean = sum.map(|s| s / n as f64);
    let mut sq = [0.0f64; 3];
    for t in trials {
        for s in &t.samples {
            for c in 0..3 {
                sq[c] += (s[c] - mean[c]).powi(2);
            }
        }
    }
    let std = sq.map(|v| {
        let sd = (v / n as f64).sqrt();
        if sd < guard_eps {
            guard_eps
        } else {
            sd
        }
    });
    Ok(NormStats {
        mean,
        std,
        guard_eps,
        source: source.into(),
    })
}

pub fn normalize_trial(trial: &Trial, stats: &NormStats) -> Trial {
    let mut out = trial.clone();
    for s in &mut out.samples {
        *s = stats.apply(*s);
    }
    out
}
