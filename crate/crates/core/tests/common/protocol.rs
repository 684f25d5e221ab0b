//! Exhaustive checks of fold plans and report rendering.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use trajid::harness::{accuracy, confusion_matrix, per_target_accuracy, render_percent, SplitPlan, SplitUnit};
use trajid::ingest::{Catalog, TrialKey};
use trajid::rng::seeded;

fn trials_of(units: &[SplitUnit]) -> BTreeSet<TrialKey> {
    units.iter().map(|u| u.trial).collect()
}

/// Trial-level plans: every fold partitions the catalog, test buckets
/// partition it across folds, per-participant test counts differ by at most
/// one, validation is a fifth of the rest (±1), and no trial sits in two
/// splits of one fold.
pub fn check_trial_folds(catalog: &Catalog, plans: &[SplitPlan]) -> Result<(), String> {
    let all: BTreeSet<TrialKey> = catalog.trials().iter().map(|t| t.key()).collect();
    let mut seen_test = BTreeSet::new();
    let mut per_participant: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for plan in plans {
        let f = plan.fold_id;
        let (tr, va, te) = (trials_of(&plan.train), trials_of(&plan.val), trials_of(&plan.test));
        if tr.len() != plan.train.len() || va.len() != plan.val.len() || te.len() != plan.test.len() {
            return Err(format!("fold {f}: a trial is listed twice"));
        }
        if !tr.is_disjoint(&va) || !tr.is_disjoint(&te) || !va.is_disjoint(&te) {
            return Err(format!("fold {f}: a trial crosses splits"));
        }
        let union: BTreeSet<TrialKey> = tr.iter().chain(&va).chain(&te).copied().collect();
        if union != all {
            return Err(format!("fold {f}: splits cover {} of {} trials", union.len(), all.len()));
        }
        for k in &te {
            if !seen_test.insert(*k) {
                return Err(format!("fold {f}: trial {k} already tested in another fold"));
            }
        }
        for p in catalog.participants() {
            let count = |s: &BTreeSet<TrialKey>| s.iter().filter(|k| k.participant == p.id).count();
            let (ntr, nva, nte) = (count(&tr), count(&va), count(&te));
            per_participant.entry(p.id).or_default().push(nte);
            let rest = ntr + nva;
            // |nva − rest/5| ≤ 1
            if (5 * nva).abs_diff(rest) > 5 {
                return Err(format!("fold {f}, participant {}: {nva} val of {rest}", p.id));
            }
            if nte == 0 && p.n_trials >= plans.len() {
                return Err(format!("fold {f}: participant {} missing from test", p.id));
            }
        }
    }
    if seen_test != all {
        return Err(format!("test buckets cover {} of {} trials", seen_test.len(), all.len()));
    }
    for (p, counts) in per_participant {
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        if hi - lo > 1 {
            return Err(format!("participant {p}: test counts {counts:?}"));
        }
    }
    Ok(())
}

/// Rendered rows of random count matrices sum to 100 ± (P − 1), and to exactly
/// 100 when each count divides evenly.
pub fn check_render_rows(seed: u64) -> Result<(), String> {
    let mut rng = seeded(seed);
    let p = rng.gen_range(2..=31);
    let counts: Vec<Vec<u64>> = (0..p)
        .map(|_| (0..p).map(|_| if rng.gen_bool(0.3) { 0 } else { rng.gen_range(0..500) }).collect())
        .collect();
    for (row, pct) in counts.iter().zip(render_percent(&counts)) {
        let total: u64 = row.iter().sum();
        let sum: u32 = pct.iter().sum();
        if total == 0 {
            if sum != 0 {
                return Err("empty row rendered nonzero".into());
            }
        } else if sum.abs_diff(100) as usize > p - 1 {
            return Err(format!("row {row:?} renders to sum {sum}"));
        }
        if total > 0 && row.iter().all(|&c| (100 * c) % total == 0) && sum != 100 {
            return Err(format!("evenly divisible row {row:?} sums to {sum}"));
        }
    }
    Ok(())
}

pub fn check_perfect_identity(p: usize) -> Result<(), String> {
    let labels: Vec<usize> = (0..p * 7).map(|i| i % p).collect();
    let m = confusion_matrix(&labels, &labels, p).map_err(|e| e.to_string())?;
    for (i, row) in render_percent(&m).iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v != if i == j { 100 } else { 0 } {
                return Err(format!("cell ({i},{j}) = {v}"));
            }
        }
    }
    Ok(())
}

/// Per-target accuracies weighted by their window counts equal the overall
/// accuracy.
pub fn check_weighted_targets(seed: u64) -> Result<f64, String> {
    let mut rng = seeded(seed);
    let n = rng.gen_range(1..400);
    let p = rng.gen_range(2..10);
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..p)).collect();
    let preds: Vec<usize> = labels
        .iter()
        .map(|&l| if rng.gen_bool(0.6) { l } else { rng.gen_range(0..p) })
        .collect();
    // Leave some targets out entirely.
    let targets: Vec<u8> = (0..n).map(|_| rng.gen_range(0..9u8) / 2 * 2).collect();
    let (acc, counts) = per_target_accuracy(&preds, &labels, &targets);
    let weighted: f64 = acc
        .iter()
        .zip(&counts)
        .filter_map(|(a, &c)| a.value().map(|v| v * c as f64))
        .sum::<f64>()
        / counts.iter().sum::<usize>() as f64;
    let err = (weighted - accuracy(&preds, &labels)).abs();
    if err > 1e-12 {
        return Err(format!("weighted {weighted} differs by {err}"));
    }
    if acc.iter().zip(&counts).any(|(a, &c)| (c == 0) != a.value().is_none()) {
        return Err("absent marker does not match zero counts".into());
    }
    Ok(err)
}
