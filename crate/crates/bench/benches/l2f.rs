use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use l2f_bench::{noisy_source, reference_model};
use l2f_core::nlls::{solve, FitProblem};
use l2f_core::pipeline::{estimate_t22, shift_and_weight, SignalSource};
use l2f_core::spectrum::{default_grid, sigma_sum, LowpassFilter};
use l2f_core::{gauss_rule, GramSystem, L2FConfig, ModelKind};

fn quadrature(c: &mut Criterion) {
    let mut g = c.benchmark_group("gauss_rule");
    for m in [16, 32, 64, 128] {
        g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, &m| {
            b.iter(|| gauss_rule(black_box(m)).unwrap())
        });
    }
    g.finish();
}

fn least_squares(c: &mut Criterion) {
    let cfg = L2FConfig::default();
    let measure = cfg.measure().unwrap();
    let src = SignalSource::Synthetic(reference_model());
    let values = shift_and_weight(&src, &measure, 8.0, &cfg, 1).unwrap();
    let gram = GramSystem::new(&measure, cfg.n).unwrap();
    c.bench_function("gram_system_new", |b| {
        b.iter(|| GramSystem::new(black_box(&measure), cfg.n).unwrap())
    });
    c.bench_function("fit", |b| b.iter(|| gram.fit(black_box(&values)).unwrap()));
}

fn spectrum(c: &mut Criterion) {
    let mut g = c.benchmark_group("sigma_sum");
    for n in [16, 32, 64] {
        let filter = LowpassFilter::new(n).unwrap();
        let mu_hat: Vec<_> = (0..2 * n - 1)
            .map(|j| num_complex::Complex64::from_polar(1.0, 0.3 * j as f64))
            .collect();
        let grid = default_grid(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| sigma_sum(black_box(&mu_hat), &filter, &grid).unwrap())
        });
    }
    g.finish();
}

fn pipeline(c: &mut Criterion) {
    let cfg = L2FConfig::default();
    let clean = SignalSource::Synthetic(reference_model());
    let noisy = noisy_source(1e4, 0);
    c.bench_function("estimate_t22/noiseless", |b| {
        b.iter(|| estimate_t22(black_box(&clean), &cfg).unwrap())
    });
    c.bench_function("estimate_t22/snr_1e4", |b| {
        b.iter(|| estimate_t22(black_box(&noisy), &cfg).unwrap())
    });
}

fn nonlinear(c: &mut Criterion) {
    let model = reference_model();
    let prob = FitProblem::new(model.times(), model.synth(), ModelKind::BiexpFull, None, 1).unwrap();
    c.bench_function("nlls_solve/full", |b| b.iter(|| solve(black_box(&prob))));
}

criterion_group!(benches, quadrature, least_squares, spectrum, pipeline, nonlinear);
criterion_main!(benches);
