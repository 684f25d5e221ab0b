use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::ingest::{Catalog, TrialKey};
use crate::rng;

use super::HarnessError;

/// Every `VAL_EVERY`-th dealt non-test unit goes to validation (80:20).
const VAL_EVERY: usize = 5;

/// Participant ids `round_half_up(i·(n_total−1)/(n_select−1))`, `i = 0..n_select`.
pub fn select_equidistant(n_total: u32, n_select: u32) -> Result<Vec<u32>, HarnessError> {
    if n_select < 2 || n_select > n_total {
        return Err(HarnessError::InvalidSubset(format!(
            "cannot pick {n_select} equidistant ids out of {n_total}"
        )));
    }
    let (span, steps) = (u64::from(n_total - 1), u64::from(n_select - 1));
    let mut ids: Vec<u32> = Vec::with_capacity(n_select as usize);
    for i in 0..u64::from(n_select) {
        // floor(i·span/steps + 1/2) in integers.
        let id = ((2 * i * span + steps) / (2 * steps)) as u32;
        if ids.last() == Some(&id) {
            return Err(HarnessError::InvalidSubset(format!(
                "equidistant ids collide at {id} ({n_select} of {n_total})"
            )));
        }
        ids.push(id);
    }
    Ok(ids)
}

/// Which participants take part in a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum SubsetSpec {
    All,
    Equidistant(u32),
    Ids(Vec<u32>),
}

impl SubsetSpec {
    /// `all`, `equidistant:<n>` or `ids:<a>,<b>,...`.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let bad = || HarnessError::InvalidSubset(format!("cannot parse subset '{text}'"));
        if text == "all" {
            return Ok(SubsetSpec::All);
        }
        let (kind, rest) = text.split_once(':').ok_or_else(bad)?;
        match kind {
            "equidistant" => rest.trim().parse().map(SubsetSpec::Equidistant).map_err(|_| bad()),
            "ids" => {
                let ids = rest
                    .split(',')
                    .map(|s| s.trim().parse::<u32>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| bad())?;
                if ids.is_empty() {
                    return Err(bad());
                }
                Ok(SubsetSpec::Ids(ids))
            }
            _ => Err(bad()),
        }
    }

    /// Sorted, distinct participant ids present in `catalog`.
    pub fn resolve(&self, catalog: &Catalog) -> Result<Vec<u32>, HarnessError> {
        let present: Vec<u32> = catalog.participants().iter().map(|p| p.id).collect();
        let mut ids = match self {
            SubsetSpec::All => present.clone(),
            SubsetSpec::Equidistant(n) => select_equidistant(catalog.n_participants(), *n)?,
            SubsetSpec::Ids(ids) => ids.clone(),
        };
        ids.sort_unstable();
        ids.dedup();
        if let Some(&missing) = ids.iter().find(|id| !present.contains(id)) {
            return Err(HarnessError::InvalidSubset(format!(
                "participant {missing} has no trials in the catalog"
            )));
        }
        if ids.len() < 2 {
            return Err(HarnessError::InvalidSubset("need at least two participants".into()));
        }
        Ok(ids)
    }
}

impl std::fmt::Display for SubsetSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SubsetSpec::All => write!(f, "all"),
            SubsetSpec::Equidistant(n) => write!(f, "equidistant:{n}"),
            SubsetSpec::Ids(ids) => {
                let parts: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
                write!(f, "ids:{}", parts.join(","))
            }
        }
    }
}

/// Granularity at which data is assigned to splits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakageMode {
    /// Whole trials go to one split; no test window has a sibling in training.
    #[default]
    Trial,
    /// Windows are dealt individually, so sibling windows of one trial can
    /// land in different splits.
    Window,
}

impl std::str::FromStr for LeakageMode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trial" => Ok(LeakageMode::Trial),
            "window" => Ok(LeakageMode::Window),
            _ => Err(HarnessError::InvalidConfig(format!(
                "leakage mode must be 'trial' or 'window', got '{s}'"
            ))),
        }
    }
}

/// A trial, or one window of it in window-level mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SplitUnit {
    pub trial: TrialKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<u32>,
}

/// Per-participant unit counts in each split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub participant: u32,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Train, validation and test assignment for one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fold_id: usize,
    pub mode: LeakageMode,
    pub train: Vec<SplitUnit>,
    pub val: Vec<SplitUnit>,
    pub test: Vec<SplitUnit>,
    pub ledger: Vec<LedgerRow>,
}

impl SplitPlan {
    /// Distinct trials contributing to the training split.
    pub fn train_trials(&self) -> Vec<TrialKey> {
        let mut keys: Vec<TrialKey> = self.train.iter().map(|u| u.trial).collect();
        keys.sort_unstable();
        keys.dedup();
        keys
    }
}

/// Trial-level folds over every participant of `catalog`.
pub fn make_folds(catalog: &Catalog, k: usize, seed: u64) -> Result<Vec<SplitPlan>, HarnessError> {
    let units = catalog.trials().iter().map(|t| SplitUnit {
        trial: t.key(),
        window: None,
    });
    deal_folds(units, k, seed, LeakageMode::Trial)
}

/// Window-level folds: each of a trial's `floor(T/w)` windows is dealt on its own.
pub fn make_window_folds(catalog: &Catalog, k: usize, seed: u64, w: usize) -> Result<Vec<SplitPlan>, HarnessError> {
    if w == 0 {
        return Err(HarnessError::InvalidConfig("window length must be positive".into()));
    }
    let units = catalog.trials().iter().flat_map(|t| {
        (0..(t.len() / w) as u32).map(move |i| SplitUnit {
            trial: t.key(),
            window: Some(i),
        })
    });
    deal_folds(units, k, seed, LeakageMode::Window)
}

/// Per participant: shuffle, stable-sort by target, deal round-robin into `k`
/// test buckets. Fold `f` tests on bucket `f`; its remaining units, in dealing
/// order, go every fifth to validation and otherwise to training.
///
/// Sorting by target after the shuffle spreads each target evenly across
/// buckets, so no participant's training share of a target depends on which
/// fold it is tested in.
fn deal_folds(
    units: impl Iterator<Item = SplitUnit>,
    k: usize,
    seed: u64,
    mode: LeakageMode,
) -> Result<Vec<SplitPlan>, HarnessError> {
    if k < 2 {
        return Err(HarnessError::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    let mut by_participant: BTreeMap<u32, Vec<SplitUnit>> = BTreeMap::new();
    for u in units {
        by_participant.entry(u.trial.participant).or_default().push(u);
    }
    let mut dealt: Vec<(u32, Vec<SplitUnit>)> = Vec::with_capacity(by_participant.len());
    for (p, mut list) in by_participant {
        if list.len() < k {
            return Err(HarnessError::InsufficientTrials {
                participant: p,
                found: list.len(),
                folds: k,
            });
        }
        list.sort_unstable();
        let mut stream = rng::seeded(rng::derive_seed(seed, &[u64::from(p)]));
        list.shuffle(&mut stream);
        list.sort_by_key(|u| u.trial.target);
        dealt.push((p, list));
    }
    let plans = (0..k)
        .map(|fold| {
            let mut plan = SplitPlan {
                fold_id: fold,
                mode,
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
                ledger: Vec::new(),
            };
            for (p, list) in &dealt {
                let before = (plan.train.len(), plan.val.len(), plan.test.len());
                let mut rest = 0;
                for (i, &u) in list.iter().enumerate() {
                    if i % k == fold {
                        plan.test.push(u);
                    } else {
                        if rest % VAL_EVERY == VAL_EVERY - 1 {
                            plan.val.push(u);
                        } else {
                            plan.train.push(u);
                        }
                        rest += 1;
                    }
                }
                plan.ledger.push(LedgerRow {
                    participant: *p,
                    train: plan.train.len() - before.0,
                    val: plan.val.len() - before.1,
                    test: plan.test.len() - before.2,
                });
            }
            plan
        })
        .collect();
    Ok(plans)
}
