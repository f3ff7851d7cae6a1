//! Data-parallel core against a single worker.
//!
//! With default features each workload runs on the full rayon pool and on a
//! one-thread pool. Build with `--no-default-features` to time the
//! sequential fallback itself.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use rand_distr::StandardNormal;

use robica::causal::hsic_test;
use robica::numerics::Matrix;
use robica::parallel::is_parallel;
use robica::rng::{Seed, Stream};
use robica::train::{batch_objective, Method, Model, TrainConfig, TrainData};

fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = Seed(seed).stream(Stream::Sources);
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::new(rows, cols, data).expect("shape")
}

fn modes() -> Vec<(&'static str, Option<rayon::ThreadPool>)> {
    if !is_parallel() {
        return vec![("sequential", None)];
    }
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    vec![("rayon", None), ("one-thread", Some(one))]
}

fn run<T>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> T + Send) -> T
where
    T: Send,
{
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

fn bench_batch_objective(c: &mut Criterion) {
    let (n, d, classes) = (4096, 4, 32);
    let x = normal_matrix(n, d, 1);
    let labels: Vec<usize> = (0..n).map(|i| i * classes / n).collect();
    let data = TrainData::Segments { x: &x, labels: &labels, classes };
    let rows: Vec<usize> = (0..n).collect();
    let mut group = c.benchmark_group("batch_objective");
    for gamma in [0.0, 1.0] {
        let config = TrainConfig::new(if gamma == 0.0 { Method::Tcl } else { Method::Rtcl }, gamma);
        let model = Model::init(&config, d, Some(classes)).expect("model");
        for (name, pool) in modes() {
            group.bench_with_input(BenchmarkId::new(name, format!("g={gamma}")), &gamma, |b, &g| {
                b.iter(|| run(&pool, || batch_objective(&model, &data, black_box(&rows), g, 64).expect("loss")))
            });
        }
    }
    group.finish();
}

fn bench_hsic(c: &mut Criterion) {
    let a = normal_matrix(500, 1, 2).column(0);
    let b: Vec<f64> = normal_matrix(500, 1, 3).column(0).iter().zip(&a).map(|(u, v)| u + v * v).collect();
    let mut group = c.benchmark_group("hsic_permutation_test");
    group.sample_size(10);
    for (name, pool) in modes() {
        group.bench_function(BenchmarkId::new(name, "n=500 p=200"), |bench| {
            bench.iter(|| run(&pool, || hsic_test(black_box(&a), &b, 200, Seed(0)).expect("hsic")))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_batch_objective, bench_hsic);
criterion_main!(benches);
