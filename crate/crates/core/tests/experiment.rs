use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use crashwatch::ensembles::ForestHyper;
use crashwatch::evaluation::auc_prc;
use crashwatch::experiment::config::{Family, FoldRole, FoldSpec, Hyper, PlanConfig};
use crashwatch::experiment::pipeline::{fit_and_predict, grid_search, prepare_fold, FoldData, ModelBundle};
use crashwatch::experiment::report::{AGGREGATE_FILE, RAW_FILE};
use crashwatch::experiment::{
    derive_seed, make_split_plan, run_experiment, write_outputs, ExperimentConfig, ExperimentError, RunOptions,
};
use crashwatch::labeling::{label_crashes, var_threshold, VarScenario};
use crashwatch::seqnet::RnnHyper;
use crashwatch::synthetic::planted_signal;
use crashwatch::windowing::{make_windows, WindowTensor};

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic")
}

fn planted_windows(n: usize, f: usize, alpha: f64, seed: u64) -> (WindowTensor, VarScenario) {
    let p = planted_signal(n, f, seed);
    let scenario = VarScenario { alpha, threshold: var_threshold(&p.returns, alpha).unwrap() };
    let labels = label_crashes(p.panel.dates(), &p.returns, scenario).unwrap();
    (make_windows(&p.panel, &labels, 7).unwrap(), scenario)
}

/// Three folds over the planted panel's 2010-2012 business days.
fn planted_folds(w: &WindowTensor, scenario: VarScenario) -> Vec<FoldData> {
    let s = ymd(2010, 1, 1);
    [
        FoldSpec::new("A", FoldRole::Validation, (s, ymd(2010, 9, 30)), (ymd(2010, 10, 1), ymd(2011, 3, 31))),
        FoldSpec::new("B", FoldRole::Validation, (s, ymd(2011, 3, 31)), (ymd(2011, 4, 1), ymd(2011, 9, 30))),
        FoldSpec::new("T", FoldRole::Test, (s, ymd(2011, 9, 30)), (ymd(2011, 10, 1), ymd(2012, 3, 31))),
    ]
    .iter()
    .map(|f| prepare_fold(w, f, scenario).unwrap())
    .collect()
}

#[test]
fn default_plan_prints_the_published_ranges() {
    let plan = make_split_plan(&PlanConfig::default()).unwrap();
    let labels: Vec<(String, String)> = plan.folds().iter().map(FoldSpec::table_label).collect();
    let expected = [
        ("01-01-2010----31-12-2011", "01-01-2012----31-12-2013"),
        ("01-01-2010----31-12-2013", "01-01-2014----31-12-2015"),
        ("01-01-2010----31-12-2015", "01-01-2016----31-12-2019"),
        ("01-01-2010----31-12-2019", "01-01-2020----31-12-2023"),
    ];
    for (got, want) in labels.iter().zip(expected) {
        assert_eq!((got.0.as_str(), got.1.as_str()), want);
    }
    assert_eq!(plan.test.name, "K4");
}

#[test]
fn custom_plan_boundaries_do_not_overlap() {
    let (w, scenario) = planted_windows(700, 3, 0.05, 3);
    for fold in planted_folds(&w, scenario) {
        let last_train = fold.train.sample_dates().iter().max().unwrap();
        let first_eval = fold.eval.sample_dates().iter().min().unwrap();
        assert!(last_train < first_eval);
        assert!(*last_train <= fold.fold.train_end && *first_eval >= fold.fold.eval_start);
    }
}

#[test]
fn fold_with_overlapping_dates_is_leakage() {
    let (w, scenario) = planted_windows(300, 2, 0.05, 4);
    let bad = FoldSpec::new("X", FoldRole::Test, (ymd(2010, 1, 1), ymd(2010, 6, 30)), (ymd(2010, 6, 1), ymd(2010, 9, 30)));
    assert!(matches!(prepare_fold(&w, &bad, scenario), Err(ExperimentError::Leakage(_))));
}

#[test]
fn singleton_grid_is_selected_without_training() {
    let (w, scenario) = planted_windows(700, 2, 0.05, 5);
    let folds: Vec<FoldData> = planted_folds(&w, scenario).into_iter().take(0).collect();
    let g = grid_search(Family::Forest, &[Hyper::Forest(ForestHyper::default())], &folds, None, 0.2, 1);
    assert_eq!(g.best, 0);
    assert!(g.skipped);
}

#[test]
fn grid_search_matches_independent_reevaluation() {
    let (w, scenario) = planted_windows(700, 4, 0.05, 6);
    let folds = planted_folds(&w, scenario);
    let grid: Vec<Hyper> = [(5, 1), (5, 3), (15, 1), (15, 3)]
        .iter()
        .map(|&(n, d)| Hyper::Forest(ForestHyper { n_estimators: n, max_depth: d, ..ForestHyper::default() }))
        .collect();
    let seed = 99;
    let outcome = grid_search(Family::Forest, &grid, &folds, None, 0.2, seed);
    let val: Vec<&FoldData> = folds.iter().filter(|f| f.fold.role == FoldRole::Validation).collect();
    let mut best = (0, f64::NEG_INFINITY);
    for (p, h) in grid.iter().enumerate() {
        let mut sum = 0.0;
        for (k, fold) in val.iter().enumerate() {
            let s = derive_seed(seed, &[p as u64, k as u64]);
            let (_, _, prob) = fit_and_predict(&h.with_seed(s), fold, None, 0.2).unwrap();
            sum += auc_prc(fold.eval.labels(), &prob).unwrap();
        }
        let mean = sum / val.len() as f64;
        assert_eq!(outcome.points[p].mean_auc, Some(mean));
        if mean > best.1 {
            best = (p, mean);
        }
    }
    assert_eq!(outcome.best, best.0);
}

#[test]
fn dominated_point_loses() {
    let (w, scenario) = planted_windows(700, 4, 0.05, 7);
    let folds = planted_folds(&w, scenario);
    // learning rate 0 leaves the random initial weights in place
    let weak = Hyper::Rnn(RnnHyper { neurons: 4, learning_rate: 0.0, max_epochs: 1, ..RnnHyper::default() });
    let strong = Hyper::Forest(ForestHyper { n_estimators: 30, max_depth: 4, ..ForestHyper::default() });
    let g = grid_search(Family::Forest, &[weak, strong], &folds, None, 0.2, 3);
    assert!(g.points[1].fold_auc.iter().zip(&g.points[0].fold_auc).all(|(s, w)| s > w));
    assert_eq!(g.best, 1);
}

#[test]
fn bundles_round_trip_through_disk() {
    let (w, scenario) = planted_windows(500, 3, 0.05, 8);
    let fold = planted_folds(&w, scenario).pop().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let hypers = [
        (Family::Lstm, Hyper::Rnn(RnnHyper { cell: crashwatch::seqnet::CellKind::Lstm, neurons: 4, max_epochs: 2, ..RnnHyper::default() })),
        (Family::Forest, Hyper::Forest(ForestHyper { n_estimators: 5, max_depth: 3, ..ForestHyper::default() })),
    ];
    for (family, h) in hypers {
        let (model, _, p) = fit_and_predict(&h, &fold, None, 0.2).unwrap();
        let bundle = ModelBundle {
            family,
            timesteps: 7,
            decision_threshold: 0.5,
            var_threshold: scenario.threshold,
            standardizer: fold.standardizer.clone(),
            model,
        };
        let path = bundle.save(dir.path(), family.name()).unwrap();
        let back = ModelBundle::load(&path).unwrap();
        let idx = w.indices_between(fold.fold.eval_start, fold.fold.eval_end);
        assert_eq!(back.predict_raw(&w.select(&idx)).unwrap(), p);
    }
}

fn fixture_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&fixture_dir().join("experiment.json")).unwrap();
    cfg.paths.out = out.to_path_buf();
    cfg
}

#[test]
fn fixture_run_writes_consistent_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path());
    let out = run_experiment(&cfg, &RunOptions::default()).unwrap();
    write_outputs(&out, &cfg, dir.path()).unwrap();

    let mut raw = csv::Reader::from_path(dir.path().join(RAW_FILE)).unwrap();
    let header = raw.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = raw.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5 * cfg.repetitions);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    assert!(rows.iter().all(|r| r[col("error")].is_empty()), "{rows:?}");

    let mut agg = csv::Reader::from_path(dir.path().join(AGGREGATE_FILE)).unwrap();
    let ah = agg.headers().unwrap().clone();
    let acol = |name: &str| ah.iter().position(|h| h == name).unwrap();
    for a in agg.records().map(Result::unwrap).filter(|a| &a[0] != "*") {
        for metric in ["ifar", "hit_rate", "bal_acc", "auc_prc"] {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r[col("market")] == a[0] && r[col("model")] == a[2])
                .filter_map(|r| r[col(metric)].parse().ok())
                .collect();
            let got = &a[acol(&format!("{metric}_mean"))];
            if vals.is_empty() {
                assert_eq!(got, "NA");
            } else {
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                assert!((got.parse::<f64>().unwrap() - mean).abs() <= 1e-12);
            }
        }
    }
    assert!(dir.path().join("probability_synthetic_0.05.svg").exists());
    let n_bundles = std::fs::read_dir(dir.path().join("checkpoints")).unwrap().filter(|e| {
        e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".model.json")
    });
    assert_eq!(n_bundles.count(), 5);
}

#[test]
fn fixture_run_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config(dir.path());
    cfg.repetitions = 1;
    cfg.models.lstm = None;
    cfg.models.gru = None;
    let a = run_experiment(&cfg, &RunOptions { jobs: Some(1) }).unwrap();
    let b = run_experiment(&cfg, &RunOptions { jobs: Some(3) }).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.grids, b.grids);
}

#[test]
fn coverage_failure_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config(dir.path());
    cfg.plan.folds[3].eval_end = ymd(2025, 12, 31);
    assert!(matches!(run_experiment(&cfg, &RunOptions::default()), Err(ExperimentError::RangeOutsideData(_))));
}
