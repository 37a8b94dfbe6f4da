use chrono::{Days, NaiveDate};
use proptest::prelude::*;

use crashwatch::ensembles::{fit_boost, fit_forest, BoostHyper, ForestHyper};
use crashwatch::evaluation::{auc_prc, confusion, evaluate};
use crashwatch::indicators::{exponential_moving_average, macd, moving_average, rsi, simple_return};
use crashwatch::labeling::{label_crashes, var_threshold, LabelSeries, VarScenario};
use crashwatch::market_data::{knn_impute, FeaturePanel};
use crashwatch::matrix::Matrix;
use crashwatch::resampling::{minority_class, smote, smote_enn, Origin, ResampleConfig};
use crashwatch::windowing::{fit_standardizer, make_windows, WindowTensor};

fn dates(n: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2010, 1, 4).unwrap();
    (0..n as u64).map(|i| start + Days::new(i)).collect()
}

fn prices(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Option<f64>>> {
    prop::collection::vec(prop::option::weighted(0.9, 1.0f64..500.0), len)
}

fn labels_for(panel: &FeaturePanel, y: &[u8]) -> LabelSeries {
    // threshold 0 with returns of -1 / +1 reproduces `y`
    let returns: Vec<Option<f64>> = y.iter().map(|&l| Some(if l == 1 { -1.0 } else { 1.0 })).collect();
    label_crashes(panel.dates(), &returns, VarScenario { alpha: 0.05, threshold: 0.0 }).unwrap()
}

fn panel_and_labels() -> impl Strategy<Value = (FeaturePanel, Vec<u8>)> {
    (5usize..40, 1usize..4).prop_flat_map(|(n, f)| {
        (
            prop::collection::vec(prop::collection::vec(prop::option::weighted(0.95, -10.0f64..10.0), n), f),
            prop::collection::vec(0u8..2, n),
        )
            .prop_map(move |(cols, y)| {
                let cols = cols.into_iter().enumerate().map(|(j, c)| (format!("c{j}"), c)).collect();
                (FeaturePanel::new(dates(n), cols).unwrap(), y)
            })
    })
}

fn imbalanced() -> impl Strategy<Value = (Matrix, Vec<u8>)> {
    (1usize..5, 20usize..60, 3usize..10).prop_flat_map(|(d, n_maj, n_min)| {
        prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), n_maj + n_min).prop_map(move |rows| {
            let y = (0..rows.len()).map(|i| u8::from(i >= n_maj)).collect();
            (Matrix::from_rows(&rows), y)
        })
    })
}

fn scores() -> impl Strategy<Value = (Vec<u8>, Vec<f64>)> {
    (2usize..80).prop_flat_map(|n| {
        (prop::collection::vec(0u8..2, n), prop::collection::vec((0u32..20).prop_map(|v| f64::from(v) / 20.0), n))
    })
}

/// Strictly increasing per-column map: each value becomes the square of its
/// rank among the column's distinct values.
fn rank_warp(x: &Matrix) -> Matrix {
    let mut data = x.data().to_vec();
    for j in 0..x.cols() {
        let mut distinct: Vec<f64> = (0..x.rows()).map(|i| x.get(i, j)).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        for i in 0..x.rows() {
            let r = distinct.partition_point(|v| *v < x.get(i, j)) as f64;
            data[i * x.cols() + j] = r * r + 0.5;
        }
    }
    Matrix::new(x.rows(), x.cols(), data)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn indicators_ignore_the_future(x in prices(30..80), cut in 5usize..30, bump in 1.0f64..100.0) {
        let mut future = x.clone();
        for v in future.iter_mut().skip(cut) {
            *v = v.map(|p| p + bump);
        }
        let same = |a: &[Option<f64>], b: &[Option<f64>]| a[..cut] == b[..cut];
        prop_assert!(same(&simple_return(&x).unwrap(), &simple_return(&future).unwrap()));
        prop_assert!(same(&moving_average(&x, 5).unwrap(), &moving_average(&future, 5).unwrap()));
        prop_assert!(same(&exponential_moving_average(&x, 5).unwrap(), &exponential_moving_average(&future, 5).unwrap()));
        prop_assert!(same(&rsi(&x, 14).unwrap(), &rsi(&future, 14).unwrap()));
        let (a, b) = (macd(&x), macd(&future));
        prop_assert!(same(&a.macd, &b.macd) && same(&a.signal, &b.signal) && same(&a.histogram, &b.histogram));
    }

    #[test]
    fn windows_end_strictly_before_their_label((panel, y) in panel_and_labels(), t in 1usize..6) {
        let labels = labels_for(&panel, &y);
        let w = make_windows(&panel, &labels, t).unwrap();
        let f = panel.n_cols();
        for i in 0..w.samples() {
            let row = panel.dates().iter().position(|d| *d == w.sample_dates()[i]).unwrap();
            prop_assert!(row >= t);
            prop_assert_eq!(w.labels()[i], y[row]);
            for s in 0..t {
                for j in 0..f {
                    prop_assert_eq!(Some(w.window(i)[s * f + j]), panel.columns()[j][row - t + s]);
                }
            }
        }
        // every eligible date appears
        let eligible = (t..panel.n_rows()).filter(|&r| (r - t..r).all(|q| panel.row_complete(q))).count();
        prop_assert_eq!(w.samples(), eligible);
    }

    #[test]
    fn tensor_bytes_round_trip((panel, y) in panel_and_labels(), t in 1usize..4) {
        let w = make_windows(&panel, &labels_for(&panel, &y), t).unwrap();
        let mut buf = Vec::new();
        w.write_to(&mut buf).unwrap();
        let back = WindowTensor::read_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back, w);
    }

    #[test]
    fn standardizer_depends_only_on_training_rows((panel, y) in panel_and_labels(), noise in -50.0f64..50.0) {
        let w = make_windows(&panel, &labels_for(&panel, &y), 2).unwrap();
        prop_assume!(w.samples() >= 4);
        let train: Vec<usize> = (0..w.samples() / 2).collect();
        let mut values = w.values().to_vec();
        let cut = w.window(w.samples() / 2).as_ptr() as usize - w.values().as_ptr() as usize;
        // perturb every value that belongs only to later samples
        for v in values.iter_mut().skip(cut / std::mem::size_of::<f64>()) {
            *v += noise;
        }
        let moved = WindowTensor::new(2, w.feature_names().to_vec(), values, w.sample_dates().to_vec(), w.labels().to_vec()).unwrap();
        prop_assert_eq!(fit_standardizer(&w, &train).unwrap(), fit_standardizer(&moved, &train).unwrap());
    }

    #[test]
    fn var_labels_count_returns_below_threshold(r in prop::collection::vec(prop::option::weighted(0.9, -0.1f64..0.1), 150..300), alpha in 0.03f64..0.2) {
        let thr = var_threshold(&r, alpha).unwrap();
        let obs: Vec<f64> = r.iter().flatten().copied().collect();
        prop_assert!(obs.iter().any(|&v| v <= thr) && obs.iter().any(|&v| v >= thr));
        let labels = label_crashes(&dates(r.len()), &r, VarScenario { alpha, threshold: thr }).unwrap();
        prop_assert_eq!(labels.crash_count(), obs.iter().filter(|&&v| v < thr).count());
        let below = labels.crash_count() as f64;
        prop_assert!(below <= alpha * obs.len() as f64 + 1.0);
        prop_assert!(var_threshold(&r, alpha / 2.0).unwrap() <= thr);
    }

    #[test]
    fn smote_points_stay_in_the_minority_hull((x, y) in imbalanced(), seed in 0u64..1000) {
        let cfg = ResampleConfig { seed, ..ResampleConfig::default() };
        let (min_label, n_min, n_maj) = minority_class(&y);
        let s = smote(&x, &y, &cfg).unwrap();
        let members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == min_label).collect();
        for j in 0..x.cols() {
            let lo = members.iter().map(|&i| x.get(i, j)).fold(f64::INFINITY, f64::min);
            let hi = members.iter().map(|&i| x.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
            for (i, p) in s.provenance.iter().enumerate() {
                if p.origin == Origin::Synthetic {
                    prop_assert!(s.y[i] == min_label);
                    prop_assert!(s.x.get(i, j) >= lo - 1e-12 && s.x.get(i, j) <= hi + 1e-12);
                }
            }
        }
        // originals are kept verbatim and the classes end up balanced
        for i in 0..x.rows() {
            prop_assert_eq!(s.x.row(i), x.row(i));
        }
        prop_assert_eq!(s.y.iter().filter(|&&v| v == min_label).count(), n_maj);
        prop_assert!(n_min < n_maj);
    }

    #[test]
    fn smote_enn_is_seed_deterministic((x, y) in imbalanced(), seed in 0u64..1000) {
        let cfg = ResampleConfig { seed, ..ResampleConfig::default() };
        let a = smote_enn(&x, &y, &cfg).unwrap();
        let b = smote_enn(&x, &y, &cfg).unwrap();
        prop_assert_eq!(a.x.data(), b.x.data());
        prop_assert_eq!(a.y, b.y);
    }

    #[test]
    fn metrics_are_permutation_invariant((y, p) in scores(), shift in 0usize..80) {
        let n = y.len();
        let ys: Vec<u8> = (0..n).map(|i| y[(i + shift) % n]).collect();
        let ps: Vec<f64> = (0..n).map(|i| p[(i + shift) % n]).collect();
        prop_assert_eq!(confusion(&y, &p, 0.5).unwrap(), confusion(&ys, &ps, 0.5).unwrap());
        match (auc_prc(&y, &p), auc_prc(&ys, &ps)) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12 && (0.0..=1.0).contains(&a)),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false),
        }
    }

    #[test]
    fn auc_prc_depends_only_on_score_order((y, p) in scores()) {
        prop_assume!(y.contains(&1));
        let squashed: Vec<f64> = p.iter().map(|v| v * v * 0.5 + 0.1).collect();
        prop_assert!((auc_prc(&y, &p).unwrap() - auc_prc(&y, &squashed).unwrap()).abs() < 1e-12);
        let report = evaluate(&y, &p, 0.5).unwrap();
        if let (Some(h), Some(i), Some(b)) = (report.hit_rate, report.ifar, report.bal_acc) {
            prop_assert!((b - (h + i) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn trees_ignore_monotone_feature_transforms((x, y) in imbalanced(), seed in 0u64..100) {
        let warped = rank_warp(&x);
        // without bootstrap every row is seen, so each midpoint splits the
        // same rows in both spaces
        let fh = ForestHyper { n_estimators: 8, max_depth: 4, bootstrap: false, seed, ..ForestHyper::default() };
        let a = fit_forest(&x, &y, &fh).unwrap().predict_proba(&x).unwrap();
        let b = fit_forest(&warped, &y, &fh).unwrap().predict_proba(&warped).unwrap();
        prop_assert_eq!(a, b);
        let bh = BoostHyper { n_estimators: 8, seed, ..BoostHyper::default() };
        let a = fit_boost(&x, &y, &bh).unwrap().predict_proba(&x).unwrap();
        let b = fit_boost(&warped, &y, &bh).unwrap().predict_proba(&warped).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn imputation_keeps_observed_cells((panel, _) in panel_and_labels(), k in 1usize..5) {
        prop_assume!(panel.columns().iter().all(|c| c.iter().any(Option::is_some)));
        let filled = knn_impute(&panel, k).unwrap();
        prop_assert_eq!(filled.missing_count(), 0);
        for (a, b) in panel.columns().iter().zip(filled.columns()) {
            for (u, v) in a.iter().zip(b) {
                if u.is_some() {
                    prop_assert_eq!(u, v);
                }
            }
        }
        prop_assert_eq!(knn_impute(&filled, k).unwrap(), filled);
    }

    #[test]
    fn panel_csv_round_trips((panel, _) in panel_and_labels()) {
        let mut buf = Vec::new();
        panel.write_csv(&mut buf).unwrap();
        prop_assert_eq!(FeaturePanel::read_csv(&buf).unwrap(), panel);
    }
}
