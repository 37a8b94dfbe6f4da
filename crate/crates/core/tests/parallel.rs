//! Results must not depend on the worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crashwatch::ensembles::{fit_boost, fit_forest, BoostHyper, ForestHyper};
use crashwatch::market_data::{knn_impute, FeaturePanel};
use crashwatch::matrix::Matrix;
use crashwatch::par::with_jobs;
use crashwatch::resampling::{smote_enn, ResampleConfig};
use crashwatch::seqnet::{Activation, CellKind, RnnNet, Sequences};
use crashwatch::synthetic::planted_signal;

fn data(n: usize, d: usize, seed: u64) -> (Matrix, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<u8> = (0..n).map(|i| u8::from(i % 9 == 0)).collect();
    let v = (0..n * d).map(|i| rng.gen_range(-1.0..1.0) + f64::from(y[i / d])).collect();
    (Matrix::new(n, d, v), y)
}

fn holey(seed: u64) -> FeaturePanel {
    let p = planted_signal(400, 6, seed).panel;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<(String, Vec<Option<f64>>)> = p
        .names()
        .iter()
        .zip(p.columns())
        .map(|(n, c)| (n.clone(), c.iter().map(|v| if rng.gen_bool(0.05) { None } else { *v }).collect()))
        .collect();
    FeaturePanel::new(p.dates().to_vec(), cols).unwrap()
}

#[test]
fn ensembles_match_across_pools() {
    let (x, y) = data(600, 40, 1);
    let fh = ForestHyper { n_estimators: 20, ..ForestHyper::default() };
    let bh = BoostHyper { n_estimators: 20, ..BoostHyper::default() };
    let one = with_jobs(Some(1), || (fit_forest(&x, &y, &fh).unwrap(), fit_boost(&x, &y, &bh).unwrap()));
    let four = with_jobs(Some(4), || (fit_forest(&x, &y, &fh).unwrap(), fit_boost(&x, &y, &bh).unwrap()));
    assert_eq!(one, four);
}

#[test]
fn resampling_and_imputation_match_across_pools() {
    let (x, y) = data(300, 8, 2);
    let cfg = ResampleConfig { seed: 3, ..ResampleConfig::default() };
    let a = with_jobs(Some(1), || smote_enn(&x, &y, &cfg).unwrap());
    let b = with_jobs(Some(4), || smote_enn(&x, &y, &cfg).unwrap());
    assert_eq!((a.x.data(), &a.y), (b.x.data(), &b.y));
    let p = holey(4);
    assert_eq!(with_jobs(Some(1), || knn_impute(&p, 5).unwrap()), with_jobs(Some(4), || knn_impute(&p, 5).unwrap()));
}

#[test]
fn gradients_match_across_pools() {
    let (f, t, n) = (5, 7, 300);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..n * t * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y: Vec<u8> = (0..n).map(|i| u8::from(i % 7 == 0)).collect();
    let seqs = Sequences::new(&x, &y, t, f).unwrap();
    let idx: Vec<usize> = (0..n).collect();
    for cell in CellKind::ALL {
        let net = RnnNet::init(cell, Activation::Relu, f, 16, 2, 6);
        let a = with_jobs(Some(1), || net.loss_and_grad(&seqs, &idx, 1e-5, 1e-4).unwrap());
        let b = with_jobs(Some(4), || net.loss_and_grad(&seqs, &idx, 1e-5, 1e-4).unwrap());
        assert_eq!(a, b);
    }
}
