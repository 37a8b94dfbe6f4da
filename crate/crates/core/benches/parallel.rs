//! Single-thread pool against the default pool for the data-parallel hot
//! paths. Build with `--no-default-features` for the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crashwatch::ensembles::{fit_forest, ForestHyper};
use crashwatch::market_data::{knn_impute, FeaturePanel};
use crashwatch::matrix::Matrix;
use crashwatch::par::{current_threads, with_jobs};
use crashwatch::seqnet::{Activation, CellKind, RnnNet, Sequences};
use crashwatch::synthetic::planted_signal;

fn pools() -> [(String, Option<usize>); 2] {
    [("1 thread".to_string(), Some(1)), (format!("default pool ({} threads)", current_threads()), None)]
}

fn forest(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, d) = (1500, 70);
    let y: Vec<u8> = (0..n).map(|i| u8::from(i % 20 == 0)).collect();
    let x = Matrix::new(n, d, (0..n * d).map(|i| rng.gen_range(-1.0..1.0) + f64::from(y[i / d])).collect());
    let hyper = ForestHyper { n_estimators: 50, max_depth: 8, ..ForestHyper::default() };
    let mut g = c.benchmark_group("forest_fit");
    g.sample_size(10);
    for (name, jobs) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| with_jobs(jobs, || fit_forest(&x, &y, &hyper).unwrap()))
        });
    }
    g.finish();
}

fn impute(c: &mut Criterion) {
    let base = planted_signal(1500, 20, 2).panel;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cols = base
        .names()
        .iter()
        .zip(base.columns())
        .map(|(n, col)| (n.clone(), col.iter().map(|v| if rng.gen_bool(0.02) { None } else { *v }).collect()))
        .collect();
    let panel = FeaturePanel::new(base.dates().to_vec(), cols).unwrap();
    let mut g = c.benchmark_group("knn_impute");
    g.sample_size(10);
    for (name, jobs) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| with_jobs(jobs, || knn_impute(&panel, 5).unwrap())));
    }
    g.finish();
}

fn gradient(c: &mut Criterion) {
    let (f, t, n) = (24, 7, 512);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..n * t * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y: Vec<u8> = (0..n).map(|i| u8::from(i % 10 == 0)).collect();
    let seqs = Sequences::new(&x, &y, t, f).unwrap();
    let idx: Vec<usize> = (0..n).collect();
    let net = RnnNet::init(CellKind::Lstm, Activation::Relu, f, 32, 2, 5);
    let mut g = c.benchmark_group("lstm_gradient_batch");
    for (name, jobs) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| with_jobs(jobs, || net.loss_and_grad(&seqs, &idx, 1e-5, 1e-4).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, forest, impute, gradient);
criterion_main!(benches);
