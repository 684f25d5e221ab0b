use std::collections::{BTreeMap, HashMap};

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BnMode, Graph, OptimizerState, Tensor};
use crate::dsp::{compute_norm_stats, normalize_trial, windows_from_trials, NormStats, WindowSet, DEFAULT_GUARD_EPS};
use crate::ingest::{Catalog, Trial, TrialKey};
use crate::model::{ModelConfig, ModelError, ParamStore, ResNet1d};
use crate::rng;
use crate::Result;

use super::metrics::{accuracy, confusion_matrix, majority_vote, per_target_accuracy, TargetAccuracy};
use super::split::{LedgerRow, SplitPlan, SplitUnit};
use super::{HarnessError, RunConfig};

/// Windows per forward pass when only predicting.
const EVAL_CHUNK: usize = 1024;

/// Normalized, windowed splits of one fold.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
    pub stats: NormStats,
}

/// Per-epoch training and validation metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

/// Result of [`fit`]: the selected snapshot and how it was chosen.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub net: ResNet1d,
    pub store: ParamStore<f32>,
    /// 1-based epoch of the kept snapshot.
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    pub curves: Curves,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_id: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    /// Participant id of each class index.
    pub class_ids: Vec<u32>,
    pub n_train_windows: usize,
    pub n_val_windows: usize,
    pub n_test_windows: usize,
    pub n_test_trials: usize,
    pub window_accuracy: f64,
    /// Accuracy of the per-trial majority vote over test windows.
    pub trial_accuracy: f64,
    pub per_target_accuracy: Vec<TargetAccuracy>,
    pub per_target_windows: Vec<usize>,
    /// `confusion[i][j]`: test windows of class `i` predicted as `j`.
    pub confusion: Vec<Vec<u64>>,
    pub curves: Curves,
    pub ledger: Vec<LedgerRow>,
    pub norm_stats: NormStats,
}

fn class_index(classes: &[u32]) -> HashMap<u32, usize> {
    classes.iter().enumerate().map(|(i, &p)| (p, i)).collect()
}

fn labels_of(set: &WindowSet, index: &HashMap<u32, usize>) -> Result<Vec<usize>> {
    set.labels
        .iter()
        .map(|p| {
            index.get(p).copied().ok_or_else(|| {
                HarnessError::InvalidConfig(format!("participant {p} is not one of the run's classes")).into()
            })
        })
        .collect()
}

/// Normalize with statistics of the plan's training data, then window each split.
///
/// `filtered` must already be low-pass filtered. In trial mode the statistics
/// cover every sample of the training trials; in window mode only the samples
/// inside training windows.
pub fn prepare_fold(filtered: &Catalog, plan: &SplitPlan, window: usize) -> Result<FoldData> {
    let by_key: HashMap<TrialKey, &Trial> = filtered.trials().iter().map(|t| (t.key(), t)).collect();
    let lookup = |k: &TrialKey| -> Result<&Trial> {
        by_key
            .get(k)
            .copied()
            .ok_or_else(|| HarnessError::InvalidConfig(format!("plan references unknown trial {k}")).into())
    };
    let tag = format!("fold {} training split", plan.fold_id);
    let stats = if plan.train.iter().all(|u| u.window.is_none()) {
        let train: Vec<&Trial> = plan.train_trials().iter().map(lookup).collect::<Result<_>>()?;
        compute_norm_stats(train.iter().copied(), DEFAULT_GUARD_EPS, tag)?
    } else {
        let pieces: Vec<Trial> = plan
            .train
            .iter()
            .map(|u| Ok(window_piece(lookup(&u.trial)?, u, window)))
            .collect::<Result<_>>()?;
        compute_norm_stats(pieces.iter(), DEFAULT_GUARD_EPS, tag)?
    };
    let fold = Some(plan.fold_id as u32);
    let build = |units: &[SplitUnit]| -> Result<WindowSet> {
        let pieces: Vec<Trial> = units
            .iter()
            .map(|u| {
                let t = lookup(&u.trial)?;
                Ok(normalize_trial(&window_piece(t, u, window), &stats))
            })
            .collect::<Result<_>>()?;
        Ok(windows_from_trials(&pieces, window, Some(stats.clone()), fold))
    };
    Ok(FoldData {
        train: build(&plan.train)?,
        val: build(&plan.val)?,
        test: build(&plan.test)?,
        stats: stats.clone(),
    })
}

/// The whole trial, or just the samples of one of its windows.
fn window_piece(t: &Trial, u: &SplitUnit, window: usize) -> Trial {
    match u.window {
        None => t.clone(),
        Some(i) => {
            let start = i as usize * window;
            Trial {
                samples: t.samples[start..start + window].to_vec(),
                ..t.clone()
            }
        }
    }
}

fn batch_tensor(set: &WindowSet, idx: &[usize]) -> Tensor<f32> {
    let mut data = Vec::with_capacity(idx.len() * set.window_len());
    for &i in idx {
        data.extend_from_slice(set.window(i));
    }
    Tensor::new(vec![idx.len(), set.channels, set.width], data).expect("window block matches shape")
}

/// Evaluation-mode predictions and mean cross-entropy over `set`.
pub fn evaluate(net: &ResNet1d, store: &ParamStore<f32>, set: &WindowSet, labels: &[usize]) -> Result<(Vec<usize>, f64)> {
    let mut preds = Vec::with_capacity(set.len());
    let mut loss = 0.0;
    let all: Vec<usize> = (0..set.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let logits = net.predict_logits(store, batch_tensor(set, chunk))?;
        let classes = logits.shape()[1];
        for (row, &i) in logits.data().chunks_exact(classes).zip(chunk) {
            let mut best = 0;
            for c in 1..classes {
                if row[c] > row[best] {
                    best = c;
                }
            }
            preds.push(best);
            let m = row[best] as f64;
            let lse = m + row.iter().map(|&z| (z as f64 - m).exp()).sum::<f64>().ln();
            loss += lse - row[labels[i]] as f64;
        }
    }
    let mean = if set.is_empty() { 0.0 } else { loss / set.len() as f64 };
    Ok((preds, mean))
}

fn diverged(epoch: usize, e: ModelError) -> crate::Error {
    match e {
        ModelError::NonFinite(what) => HarnessError::Divergence {
            epoch,
            message: format!("non-finite {what}"),
        }
        .into(),
        other => other.into(),
    }
}

/// Train a fresh model on `train` for `cfg.epochs` epochs of shuffled
/// mini-batches and keep the snapshot with the best validation accuracy
/// (earliest epoch on ties). With an empty validation set the last epoch is kept.
///
/// Batches shorter than two windows are skipped because batch statistics
/// need at least two samples per channel in the deepest stage.
pub fn fit(train: &WindowSet, val: &WindowSet, classes: &[u32], cfg: &RunConfig, seed: u64) -> Result<Fitted> {
    if train.is_empty() {
        return Err(HarnessError::EmptySplit { fold: 0, split: "train" }.into());
    }
    let index = class_index(classes);
    let train_labels = labels_of(train, &index)?;
    let val_labels = labels_of(val, &index)?;
    let mut mcfg = ModelConfig::new(classes.len()).with_width(cfg.width_mult);
    mcfg.in_channels = train.channels;
    mcfg.input_length = train.width;
    let (net, mut store) = ResNet1d::build::<f32>(mcfg, rng::derive_seed(seed, &[1]))?;
    let mut opt = OptimizerState::<f32>::new(cfg.optimizer)?;
    let mut shuffle = rng::seeded(rng::derive_seed(seed, &[2]));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curves = Curves::default();
    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let (mut loss_sum, mut hits, mut seen) = (0.0f64, 0usize, 0usize);
        for idx in order.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
            let labels: Vec<usize> = idx.iter().map(|&i| train_labels[i]).collect();
            let mut g = Graph::new();
            let fwd = net
                .forward(&mut g, &mut store, batch_tensor(train, idx), BnMode::Train, true)
                .map_err(|e| diverged(epoch, e))?;
            let loss = g.softmax_cross_entropy(fwd.logits, &labels)?;
            let lv = g.value(loss).item().map_or(f64::NAN, f64::from);
            if !lv.is_finite() {
                return Err(HarnessError::Divergence {
                    epoch,
                    message: format!("loss is {lv}"),
                }
                .into());
            }
            let classes_n = classes.len();
            for (row, &l) in g.value(fwd.logits).data().chunks_exact(classes_n).zip(&labels) {
                let arg = (0..classes_n).fold(0, |b, c| if row[c] > row[b] { c } else { b });
                hits += usize::from(arg == l);
            }
            loss_sum += lv * idx.len() as f64;
            seen += idx.len();
            g.backward(loss)?;
            let grads: Vec<Vec<f32>> = fwd
                .params
                .iter()
                .map(|&v| g.take_grad(v).expect("every parameter receives a gradient"))
                .collect();
            let grad_refs: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
            let mut params: Vec<&mut [f32]> = store.tensors_mut().map(|t| t.data_mut()).collect();
            opt.step(&mut params, &grad_refs)?;
        }
        let (train_loss, train_acc) = if seen == 0 {
            (0.0, 0.0)
        } else {
            (loss_sum / seen as f64, hits as f64 / seen as f64)
        };
        curves.train_loss.push(train_loss);
        curves.train_accuracy.push(train_acc);
        if val.is_empty() {
            debug!("epoch {epoch}: train loss {train_loss:.4} acc {train_acc:.4}");
            continue;
        }
        let (preds, val_loss) = evaluate(&net, &store, val, &val_labels).map_err(|e| match e {
            crate::Error::Model(m) => diverged(epoch, m),
            other => other,
        })?;
        let val_acc = accuracy(&preds, &val_labels);
        curves.val_loss.push(val_loss);
        curves.val_accuracy.push(val_acc);
        debug!("epoch {epoch}: train loss {train_loss:.4} acc {train_acc:.4}, val loss {val_loss:.4} acc {val_acc:.4}");
        if best.as_ref().is_none_or(|(acc, _, _)| val_acc > *acc) {
            best = Some((val_acc, epoch, store.clone()));
        }
    }
    let (best_val_accuracy, best_epoch, store) = match best {
        Some((acc, epoch, snapshot)) => (Some(acc), epoch, snapshot),
        None => (None, cfg.epochs, store),
    };
    Ok(Fitted {
        net,
        store,
        best_epoch,
        best_val_accuracy,
        curves,
    })
}

/// Prepare, train and test one fold. `filtered` is the low-pass filtered
/// catalog restricted to `classes`.
pub fn train_fold(
    plan: &SplitPlan,
    cfg: &RunConfig,
    filtered: &Catalog,
    classes: &[u32],
) -> Result<(FoldReport, ParamStore<f32>)> {
    let data = prepare_fold(filtered, plan, cfg.window)?;
    for (set, split) in [(&data.train, "train"), (&data.test, "test")] {
        if set.is_empty() {
            return Err(HarnessError::EmptySplit {
                fold: plan.fold_id,
                split,
            }
            .into());
        }
    }
    let seed = rng::derive_seed(cfg.seed, &[plan.fold_id as u64]);
    info!(
        "fold {}: {} train, {} val, {} test windows",
        plan.fold_id,
        data.train.len(),
        data.val.len(),
        data.test.len()
    );
    let fitted = fit(&data.train, &data.val, classes, cfg, seed)?;
    let index = class_index(classes);
    let test_labels = labels_of(&data.test, &index)?;
    let (preds, _) = evaluate(&fitted.net, &fitted.store, &data.test, &test_labels)?;
    let window_accuracy = accuracy(&preds, &test_labels);

    let mut per_trial: BTreeMap<TrialKey, Vec<usize>> = BTreeMap::new();
    for (i, &p) in preds.iter().enumerate() {
        per_trial.entry(data.test.trial_key(i)).or_default().push(p);
    }
    let mut trial_hits = 0;
    for (key, votes) in &per_trial {
        let label = index[&key.participant];
        trial_hits += usize::from(majority_vote(votes) == Some(label));
    }
    let trial_accuracy = trial_hits as f64 / per_trial.len().max(1) as f64;
    let (per_target, per_target_windows) = per_target_accuracy(&preds, &test_labels, &data.test.target_ids);
    let confusion = confusion_matrix(&preds, &test_labels, classes.len())?;
    info!(
        "fold {}: best epoch {}, window accuracy {:.4}, trial accuracy {:.4}",
        plan.fold_id, fitted.best_epoch, window_accuracy, trial_accuracy
    );
    let report = FoldReport {
        fold_id: plan.fold_id,
        seed,
        best_epoch: fitted.best_epoch,
        best_val_accuracy: fitted.best_val_accuracy,
        class_ids: classes.to_vec(),
        n_train_windows: data.train.len(),
        n_val_windows: data.val.len(),
        n_test_windows: data.test.len(),
        n_test_trials: per_trial.len(),
        window_accuracy,
        trial_accuracy,
        per_target_accuracy: per_target,
        per_target_windows,
        confusion,
        curves: fitted.curves,
        ledger: plan.ledger.clone(),
        norm_stats: data.stats,
    };
    Ok((report, fitted.store))
}
