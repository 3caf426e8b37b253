use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fracsig::classify::{extract_features, ModelKind, ModelSpec, Pipeline};
use fracsig::fracdyn::{estimate_coupling, gl_coefficients, simulate, CouplingOptions, SimulationOptions};
use fracsig::mfdfa::{analyze, MfdfaConfig};
use fracsig::signal::{random_stable_model, synth_cohort, synth_fgn, CohortSpec};
use std::hint::black_box;

fn mfdfa(c: &mut Criterion) {
    let mut group = c.benchmark_group("mfdfa");
    for exp in [12, 14, 16] {
        let x = synth_fgn(0.7, 1 << exp, 1).unwrap();
        let cfg = MfdfaConfig::for_length(x.len());
        group.bench_with_input(BenchmarkId::from_parameter(1 << exp), &x, |b, x| {
            b.iter(|| analyze(black_box(x.samples()), &cfg).unwrap())
        });
    }
    group.finish();
}

fn kernel(c: &mut Criterion) {
    c.bench_function("gl_coefficients/10000", |b| {
        b.iter(|| gl_coefficients(black_box(0.6), 10_000))
    });
}

fn coupling(c: &mut Criterion) {
    let model = random_stable_model(12, 3).unwrap();
    let opts = SimulationOptions {
        steps: 10_000,
        horizon: 50,
        seed: 4,
        rate_hz: 1.0,
    };
    let record = simulate(&model, &opts, None, None).unwrap();
    c.bench_function("simulate/12x10000", |b| {
        b.iter(|| simulate(&model, &opts, None, None).unwrap())
    });
    c.bench_function("estimate_coupling/12x10000", |b| {
        b.iter(|| estimate_coupling(black_box(&record), &model.alpha, &CouplingOptions::default()).unwrap())
    });
}

fn classifier(c: &mut Criterion) {
    let spec = CohortSpec {
        per_class: 10,
        length: 2048,
        ..CohortSpec::default()
    };
    let cases: Vec<_> = synth_cohort(&spec)
        .unwrap()
        .iter()
        .map(|m| extract_features(&m.record, &CouplingOptions::default()).unwrap())
        .collect();
    let mut model = ModelSpec {
        kind: ModelKind::Mlp,
        mlp: Default::default(),
        logistic: Default::default(),
    };
    model.mlp.epochs = 20;
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("mlp/50x20epochs", |b| {
        b.iter(|| Pipeline::train(&cases, &model, None).unwrap())
    });
    group.finish();
}

criterion_group!(benches, mfdfa, kernel, coupling, classifier);
criterion_main!(benches);
