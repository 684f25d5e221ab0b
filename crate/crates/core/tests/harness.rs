mod common;

use std::fs;

use common::protocol::{check_perfect_identity, check_render_rows, check_trial_folds, check_weighted_targets};
use proptest::prelude::*;
use rand::Rng;
use trajid::dsp::NormStats;
use trajid::harness::{
    aggregate, confusion_matrix, load_summary, make_folds, make_window_folds, majority_vote, render_percent,
    run_cross_validation, select_equidistant, Curves, FoldReport, HarnessError, LeakageMode, RunConfig, SubsetSpec,
    TargetAccuracy,
};
use trajid::ingest::Catalog;
use trajid::rng::seeded;
use trajid::syngen::{synth_catalog, SynthConfig};

fn catalog(subjects: u32, per_target: u32, seed: u64) -> Catalog {
    synth_catalog(&SynthConfig::new(subjects, per_target, 1.0, seed)).unwrap().0
}

#[test]
fn equidistant_selection() {
    assert_eq!(select_equidistant(31, 9).unwrap(), [0, 4, 8, 11, 15, 19, 23, 26, 30]);
    assert_eq!(select_equidistant(31, 2).unwrap(), [0, 30]);
    assert_eq!(select_equidistant(5, 5).unwrap(), [0, 1, 2, 3, 4]);
    // Independent oracle: i·(n−1)/(k−1) in floating point, rounded half up.
    for n in 2..40u32 {
        for k in 2..=n {
            let oracle: Vec<u32> = (0..k)
                .map(|i| (f64::from(i) * f64::from(n - 1) / f64::from(k - 1) + 0.5).floor() as u32)
                .collect();
            assert_eq!(select_equidistant(n, k).unwrap(), oracle, "({n}, {k})");
        }
    }
    assert!(select_equidistant(4, 5).is_err());
    assert!(select_equidistant(4, 1).is_err());
}

#[test]
fn subset_resolution() {
    let cat = catalog(5, 1, 0);
    assert_eq!(SubsetSpec::parse("equidistant:3").unwrap().resolve(&cat).unwrap(), [0, 2, 4]);
    assert_eq!(SubsetSpec::parse("ids:3,1,3").unwrap().resolve(&cat).unwrap(), [1, 3]);
    assert!(SubsetSpec::parse("ids:1,9").unwrap().resolve(&cat).is_err());
    assert!(SubsetSpec::parse("ids:2").unwrap().resolve(&cat).is_err());
}

#[test]
fn ten_trials_give_one_test_trial_per_fold() {
    let cat = Catalog::new(
        catalog(2, 2, 1).trials().iter().filter(|t| t.trial_id < 10).cloned().collect(),
        "ten each",
    )
    .unwrap();
    let plans = make_folds(&cat, 10, 3).unwrap();
    assert_eq!(plans.len(), 10);
    for plan in &plans {
        assert!(plan.ledger.iter().all(|row| row.test == 1), "{:?}", plan.ledger);
    }
    check_trial_folds(&cat, &plans).unwrap();
}

#[test]
fn too_few_trials_name_the_participant() {
    let cat = Catalog::new(
        catalog(2, 1, 1).trials().iter().filter(|t| t.participant_id == 0 || t.trial_id < 4).cloned().collect(),
        "short",
    )
    .unwrap();
    match make_folds(&cat, 5, 0) {
        Err(HarnessError::InsufficientTrials { participant: 1, found: 4, folds: 5 }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn folds_depend_on_the_seed_only() {
    let cat = catalog(3, 2, 4);
    let a = make_folds(&cat, 5, 9).unwrap();
    assert_eq!(a, make_folds(&cat, 5, 9).unwrap());
    assert_ne!(a, make_folds(&cat, 5, 10).unwrap());
}

#[test]
fn window_mode_deals_individual_windows() {
    let cat = catalog(2, 1, 2);
    let plans = make_window_folds(&cat, 4, 0, 7).unwrap();
    let total: usize = cat.trials().iter().map(|t| t.len() / 7).sum();
    let mut tested = std::collections::BTreeSet::new();
    for p in &plans {
        assert_eq!(p.mode, LeakageMode::Window);
        assert_eq!(p.train.len() + p.val.len() + p.test.len(), total);
        for u in &p.test {
            assert!(u.window.is_some());
            assert!(tested.insert((u.trial, u.window)));
        }
    }
    assert_eq!(tested.len(), total);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trial_folds_partition_exactly(
        subjects in 2u32..5,
        per_target in 1u32..4,
        k in 2usize..11,
        seed in any::<u64>(),
    ) {
        let cat = catalog(subjects, per_target, seed);
        let plans = make_folds(&cat, k, seed).unwrap();
        prop_assert_eq!(plans.len(), k);
        if let Err(e) = check_trial_folds(&cat, &plans) {
            prop_assert!(false, "{}", e);
        }
    }

    #[test]
    fn rendered_rows_stay_within_rounding_slack(seed in any::<u64>()) {
        if let Err(e) = check_render_rows(seed) {
            prop_assert!(false, "{}", e);
        }
    }

    #[test]
    fn per_target_weighting_recovers_overall_accuracy(seed in any::<u64>()) {
        if let Err(e) = check_weighted_targets(seed) {
            prop_assert!(false, "{}", e);
        }
    }
}

#[test]
fn metric_examples() {
    assert_eq!(majority_vote(&[2, 2, 5]), Some(2));
    assert_eq!(majority_vote(&[1, 3]), Some(1));
    assert_eq!(majority_vote(&[4]), Some(4));
    assert_eq!(render_percent(&[vec![1, 1, 2]]), [[25, 25, 50]]);
    assert_eq!(render_percent(&[vec![0, 0]]), [[0, 0]]);
    for p in [2, 6, 9, 31] {
        check_perfect_identity(p).unwrap();
    }
    assert!(matches!(
        confusion_matrix(&[0, 3], &[0, 1], 3),
        Err(HarnessError::ClassOutOfRange { class: 3, classes: 3 })
    ));
}

#[test]
fn random_predictions_spread_uniformly() {
    let p = 6;
    let n = 60_000;
    let mut rng = seeded(17);
    let labels: Vec<usize> = (0..n).map(|i| i % p).collect();
    let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..p)).collect();
    let m = confusion_matrix(&preds, &labels, p).unwrap();
    let row_n = (n / p) as f64;
    let q = 1.0 / p as f64;
    let sigma = (row_n * q * (1.0 - q)).sqrt();
    for row in &m {
        for &c in row {
            assert!((c as f64 - row_n * q).abs() < 4.0 * sigma, "{row:?}");
        }
    }
    for row in render_percent(&m) {
        let slack = 400.0 * sigma / row_n + 0.5;
        assert!(row.iter().all(|&v| (f64::from(v) - 100.0 * q).abs() <= slack), "{row:?}");
    }
}

fn report(fold_id: usize, window_accuracy: f64, confusion: Vec<Vec<u64>>, per_target: Vec<TargetAccuracy>) -> FoldReport {
    let n: u64 = confusion.iter().flatten().sum();
    FoldReport {
        fold_id,
        seed: 0,
        best_epoch: 1,
        best_val_accuracy: None,
        class_ids: (0..confusion.len() as u32).collect(),
        n_train_windows: 0,
        n_val_windows: 0,
        n_test_windows: n as usize,
        n_test_trials: 1,
        window_accuracy,
        trial_accuracy: window_accuracy,
        per_target_windows: vec![1; 9],
        per_target_accuracy: per_target,
        confusion,
        curves: Curves::default(),
        ledger: Vec::new(),
        norm_stats: NormStats {
            mean: [0.0; 3],
            std: [1.0; 3],
            guard_eps: 1e-8,
            source: "fixture".into(),
        },
    }
}

#[test]
fn aggregate_spreads_and_sums() {
    let mut targets = vec![TargetAccuracy::Present(1.0); 9];
    targets[3] = TargetAccuracy::Absent;
    let a = report(0, 0.9, vec![vec![9, 1], vec![1, 9]], targets.clone());
    targets[3] = TargetAccuracy::Present(0.5);
    let b = report(1, 0.8, vec![vec![7, 3], vec![1, 9]], targets);
    let s = aggregate(&[a.clone(), b]).unwrap();
    assert!((s.window_accuracy.mean - 0.85).abs() < 1e-15);
    assert_eq!((s.window_accuracy.min, s.window_accuracy.max, s.window_accuracy.median), (0.8, 0.9, 0.8));
    assert_eq!(s.confusion_counts, [[16, 4], [2, 18]]);
    assert_eq!(s.confusion_percent, [[80, 20], [10, 90]]);
    assert_eq!(s.per_target[3].values, [0.5]);
    assert_eq!(s.per_target[3].absent_folds, [0]);

    let same = aggregate(&[a.clone(), a.clone(), a]).unwrap();
    assert_eq!(same.window_accuracy.mean, 0.9);
    assert_eq!(same.window_accuracy.min, same.window_accuracy.max);
    assert!(aggregate(&[]).is_err());
}

#[test]
fn absent_marker_serializes_as_text() {
    let json = serde_json::to_string(&[TargetAccuracy::Present(0.5), TargetAccuracy::Absent]).unwrap();
    assert_eq!(json, r#"[0.5,"absent"]"#);
    let back: Vec<TargetAccuracy> = serde_json::from_str(&json).unwrap();
    assert_eq!(back[1], TargetAccuracy::Absent);
}

fn tiny_config(seed: u64) -> RunConfig {
    RunConfig {
        epochs: 2,
        folds: 3,
        width_mult: 0.125,
        seed,
        ..RunConfig::default()
    }
}

#[test]
fn small_run_writes_layout_and_repeats_bitwise() {
    let cat = catalog(3, 2, 8);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut summaries = Vec::new();
    for d in &dirs {
        summaries.push(run_cross_validation(&cat, &tiny_config(5), d.path()).unwrap());
    }
    let (a, b) = (dirs[0].path(), dirs[1].path());
    for name in ["run.json", "summary.json", "summary.csv", "confusion.csv", "per_target.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    for k in 0..3 {
        for name in ["model.bin", "report.json"] {
            let rel = format!("fold_{k}/{name}");
            assert_eq!(fs::read(a.join(&rel)).unwrap(), fs::read(b.join(&rel)).unwrap(), "{rel}");
        }
    }
    assert_eq!(load_summary(a).unwrap(), summaries[0]);
    let s = &summaries[0];
    let windows: usize = s.folds.iter().map(|f| f.n_test_windows).sum();
    assert_eq!(s.confusion_counts.iter().flatten().sum::<u64>() as usize, windows);

    // Each true row of the summed matrix counts that participant's windows.
    let per_participant: Vec<usize> = (0..3)
        .map(|p| cat.trials().iter().filter(|t| t.participant_id == p).map(|t| t.len() / 7).sum())
        .collect();
    for (row, n) in s.confusion_counts.iter().zip(per_participant) {
        assert_eq!(row.iter().sum::<u64>() as usize, n);
    }

    let c = tempfile::tempdir().unwrap();
    run_cross_validation(&cat, &tiny_config(6), c.path()).unwrap();
    assert_ne!(fs::read(a.join("fold_0/model.bin")).unwrap(), fs::read(c.path().join("fold_0/model.bin")).unwrap());
}

#[test]
fn parallel_folds_match_sequential_ones() {
    let cat = catalog(2, 2, 1);
    let seq = tempfile::tempdir().unwrap();
    let par = tempfile::tempdir().unwrap();
    run_cross_validation(&cat, &tiny_config(3), seq.path()).unwrap();
    let cfg = RunConfig {
        deterministic: false,
        jobs: 3,
        ..tiny_config(3)
    };
    run_cross_validation(&cat, &cfg, par.path()).unwrap();
    assert_eq!(
        fs::read(seq.path().join("summary.json")).unwrap(),
        fs::read(par.path().join("summary.json")).unwrap()
    );
}

#[test]
fn invalid_configs_are_rejected() {
    let cat = catalog(2, 1, 0);
    let dir = tempfile::tempdir().unwrap();
    for cfg in [
        RunConfig { epochs: 0, ..tiny_config(0) },
        RunConfig { folds: 1, ..tiny_config(0) },
        RunConfig { batch_size: 1, ..tiny_config(0) },
        RunConfig { subset: SubsetSpec::Ids(vec![0, 7]), ..tiny_config(0) },
    ] {
        assert!(run_cross_validation(&cat, &cfg, dir.path()).is_err(), "{cfg:?}");
    }
}
