//! Sequential vs fanned-out timings for the two data-parallel stages:
//! trajectory generation and chunked rollout evaluation. `workers = 1`
//! forces the sequential path, `workers = 0` uses every core; both
//! produce identical bytes, so the comparison is pure scheduling.
//!
//! Run with `cargo bench --bench parallel`; add
//! `--no-default-features` to time the build without rayon compiled in.

use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use phasecast::datagen::{build_dataset, build_dataset_with, Dataset, GenOptions, Split, SplitSpec};
use phasecast::dynsys::SystemKind;
use phasecast::evalkit::evaluate_split_with;
use phasecast::neural::{Family, Model, ModelSpec};

const WORKER_SETTINGS: [(&str, usize); 2] = [("sequential", 1), ("all-cores", 0)];

fn generation(c: &mut Criterion) {
    let spec = SplitSpec::canonical(SystemKind::Pendulum, Split::Train).with_count(48);
    let train_ranges = spec.factor_ranges.clone();
    // Loose tolerance keeps one iteration cheap; the work split across
    // trajectories is what the comparison is about.
    let opts_base = GenOptions {
        tol: 1e-5,
        ..GenOptions::default()
    };

    let mut group = c.benchmark_group("generate-pendulum-48");
    group.sample_size(10).measurement_time(Duration::from_secs(8));
    for (label, workers) in WORKER_SETTINGS {
        let opts = GenOptions {
            workers,
            ..opts_base
        };
        group.bench_with_input(BenchmarkId::from_parameter(label), &opts, |b, opts| {
            b.iter(|| {
                build_dataset_with(
                    SystemKind::Pendulum,
                    black_box(&spec),
                    &train_ranges,
                    11,
                    *opts,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn fresh_model() -> Model {
    let spec = ModelSpec::new(Family::Vae, 20, 5, 7)
        .with_hidden(vec![64, 32])
        .with_latent(4);
    Model::build(spec, SystemKind::Pendulum).unwrap()
}

fn eval_dataset(n: usize) -> Dataset {
    let spec = SplitSpec::canonical(SystemKind::Pendulum, Split::Test).with_count(n);
    let train_ranges = SplitSpec::canonical(SystemKind::Pendulum, Split::Train).factor_ranges;
    build_dataset(SystemKind::Pendulum, &spec, &train_ranges, 13).unwrap()
}

fn evaluation(c: &mut Criterion) {
    let model = fresh_model();
    let ds = eval_dataset(256);

    let mut group = c.benchmark_group("rollout-eval-256x100");
    group.sample_size(10).measurement_time(Duration::from_secs(8));
    for (label, workers) in WORKER_SETTINGS {
        group.bench_with_input(BenchmarkId::from_parameter(label), &workers, |b, &w| {
            b.iter(|| evaluate_split_with(black_box(&model), &ds, 100, w).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, generation, evaluation);
criterion_main!(benches);
