use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{design_butterworth, filter_catalog};
use crate::ingest::{Catalog, N_TARGETS};
use crate::{Error, Result};

use super::metrics::{lower_median, render_percent};
use super::split::{make_folds, make_window_folds, LeakageMode, SplitPlan};
use super::train::{train_fold, FoldReport};
use super::{HarnessError, RunConfig};

/// Mean, lower median, minimum and maximum of per-fold values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Self {
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: lower_median(values).unwrap_or(f64::NAN),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// One target's accuracies over the folds where it was tested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub target: u8,
    pub values: Vec<f64>,
    /// Folds whose test split had no window of this target.
    pub absent_folds: Vec<usize>,
    pub median: Option<f64>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub fold_id: usize,
    pub best_epoch: usize,
    pub window_accuracy: f64,
    pub trial_accuracy: f64,
    pub n_test_windows: usize,
    pub n_test_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_folds: usize,
    pub class_ids: Vec<u32>,
    pub window_accuracy: Spread,
    pub trial_accuracy: Spread,
    pub per_target: Vec<TargetSummary>,
    /// Confusion counts summed over folds, rows are true classes.
    pub confusion_counts: Vec<Vec<u64>>,
    pub confusion_percent: Vec<Vec<u32>>,
    pub folds: Vec<FoldRow>,
}

/// Combine fold reports that share one class list.
pub fn aggregate(reports: &[FoldReport]) -> Result<RunSummary, HarnessError> {
    let first = reports
        .first()
        .ok_or_else(|| HarnessError::InvalidConfig("nothing to aggregate".into()))?;
    let classes = first.class_ids.clone();
    let p = classes.len();
    let mut counts = vec![vec![0u64; p]; p];
    for r in reports {
        if r.class_ids != classes || r.confusion.len() != p {
            return Err(HarnessError::InvalidConfig(format!(
                "fold {} was trained on different classes",
                r.fold_id
            )));
        }
        for (acc, row) in counts.iter_mut().zip(&r.confusion) {
            for (a, &c) in acc.iter_mut().zip(row) {
                *a += c;
            }
        }
    }
    let per_target = (0..N_TARGETS)
        .map(|t| {
            let mut values = Vec::new();
            let mut absent_folds = Vec::new();
            for r in reports {
                match r.per_target_accuracy.get(t).and_then(|a| a.value()) {
                    Some(v) => values.push(v),
                    None => absent_folds.push(r.fold_id),
                }
            }
            let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
            TargetSummary {
                target: t as u8,
                median: lower_median(&values),
                mean,
                values,
                absent_folds,
            }
        })
        .collect();
    let window: Vec<f64> = reports.iter().map(|r| r.window_accuracy).collect();
    let trial: Vec<f64> = reports.iter().map(|r| r.trial_accuracy).collect();
    Ok(RunSummary {
        n_folds: reports.len(),
        class_ids: classes,
        window_accuracy: Spread::of(&window),
        trial_accuracy: Spread::of(&trial),
        per_target,
        confusion_percent: render_percent(&counts),
        confusion_counts: counts,
        folds: reports
            .iter()
            .map(|r| FoldRow {
                fold_id: r.fold_id,
                best_epoch: r.best_epoch,
                window_accuracy: r.window_accuracy,
                trial_accuracy: r.trial_accuracy,
                n_test_windows: r.n_test_windows,
                n_test_trials: r.n_test_trials,
            })
            .collect(),
    })
}

/// Build facts written next to the config. Contains no clock or host data
/// so identical runs produce identical files.
pub fn environment_stamp(cfg: &RunConfig) -> serde_json::Value {
    serde_json::json!({
        "package": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "os": std::env::consts::OS,
        "arch": std::env::consts::ARCH,
        "fold_threads": cfg.effective_jobs(),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Run every fold of `cfg` on `catalog` and write the run directory:
/// `run.json`, `fold_<k>/{model.bin,report.json}`, `summary.json`,
/// `summary.csv`, `confusion.csv` and `per_target.csv`.
pub fn run_cross_validation(catalog: &Catalog, cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let classes = cfg.subset.resolve(catalog)?;
    let selected = catalog.subset(&classes)?;
    let chain = design_butterworth(&cfg.filter)?;
    let filtered = filter_catalog(&chain, &selected, cfg.filter.mode)?;
    let plans: Vec<SplitPlan> = match cfg.leakage {
        LeakageMode::Trial => make_folds(&selected, cfg.folds, cfg.seed)?,
        LeakageMode::Window => make_window_folds(&selected, cfg.folds, cfg.seed, cfg.window)?,
    };
    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    write_json(
        &out.join("run.json"),
        &serde_json::json!({
            "config": cfg,
            "class_ids": classes,
            "provenance": catalog.provenance(),
            "environment": environment_stamp(cfg),
        }),
    )?;
    info!(
        "{} folds over participants {:?} ({} trials)",
        plans.len(),
        classes,
        selected.len()
    );
    let run_one = |plan: &SplitPlan| -> Result<FoldReport> {
        let (report, store) = train_fold(plan, cfg, &filtered, &classes)?;
        let dir = out.join(format!("fold_{}", plan.fold_id));
        fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        write_file(&dir.join("model.bin"), &store.to_bytes())?;
        write_json(&dir.join("report.json"), &report)?;
        Ok(report)
    };
    let results: Vec<Result<FoldReport>> = if cfg.effective_jobs() == 1 {
        plans.iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.effective_jobs())
            .build()
            .map_err(|e| HarnessError::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| plans.par_iter().map(run_one).collect())
    };
    let reports = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = aggregate(&reports)?;
    write_json(&out.join("summary.json"), &summary)?;
    write_file(&out.join("summary.csv"), summary_csv(&summary).as_bytes())?;
    write_file(&out.join("confusion.csv"), confusion_csv(&summary).as_bytes())?;
    write_file(&out.join("per_target.csv"), per_target_csv(&reports).as_bytes())?;
    Ok(summary)
}

fn summary_csv(s: &RunSummary) -> String {
    let mut out = String::from("fold,best_epoch,window_accuracy,trial_accuracy,n_test_windows,n_test_trials\n");
    for f in &s.folds {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            f.fold_id, f.best_epoch, f.window_accuracy, f.trial_accuracy, f.n_test_windows, f.n_test_trials
        );
    }
    out
}

fn confusion_csv(s: &RunSummary) -> String {
    let mut out = String::from("true_participant,predicted_participant,count,percent\n");
    for (i, (counts, pct)) in s.confusion_counts.iter().zip(&s.confusion_percent).enumerate() {
        for (j, (c, p)) in counts.iter().zip(pct).enumerate() {
            let _ = writeln!(out, "{},{},{},{}", s.class_ids[i], s.class_ids[j], c, p);
        }
    }
    out
}

fn per_target_csv(reports: &[FoldReport]) -> String {
    let mut out = String::from("fold,target,accuracy,windows\n");
    for r in reports {
        for (t, (acc, n)) in r.per_target_accuracy.iter().zip(&r.per_target_windows).enumerate() {
            let _ = writeln!(out, "{},{},{},{}", r.fold_id, t, acc, n);
        }
    }
    out
}

/// Read `summary.json` from a run directory.
pub fn load_summary(run_dir: &Path) -> Result<RunSummary> {
    let path = run_dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::RunDir(format!("{}: {e}", path.display())).into())
}
