use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use matern::analytics::{pair_gain_integral, pair_terms};
use matern::montecarlo::{estimate_stats, simulate_interference_pair};
use matern::pointprocess::Window;
use matern::quadrature::exp_integral_ei;
use matern::retention;
use matern::{AnalyticsOptions, ModelParams, SimConfig, Tolerance};

fn quadrature(c: &mut Criterion) {
    let mut g = c.benchmark_group("quadrature");
    g.bench_function("ei", |b| b.iter(|| exp_integral_ei(black_box(3.7))));
    for r in [0.2, 1.0, 5.0] {
        g.bench_with_input(BenchmarkId::new("pair_gain_integral", r), &r, |b, &r| {
            b.iter(|| pair_gain_integral(black_box(r), 3.0, Tolerance::new(1e-8, 1e-14)))
        });
    }
    g.sample_size(10);
    g.bench_function("pair_terms", |b| b.iter(|| pair_terms(1.0, black_box(1.0), 3.0, &AnalyticsOptions::default())));
    g.finish();
}

fn retention_probabilities(c: &mut Criterion) {
    let mut g = c.benchmark_group("retention");
    let t = Tolerance::PROBABILITY;
    g.bench_function("p12_quadrature", |b| b.iter(|| retention::p12_with(1.0, black_box(1.0), t)));
    g.bench_function("p11_quadrature", |b| b.iter(|| retention::p11_with(black_box(1.5), 1.0, 1.0, t)));
    g.bench_function("p12r_quadrature", |b| b.iter(|| retention::p12r_with(black_box(1.5), 1.0, 1.0, t)));
    g.bench_function("p12r_reduced", |b| b.iter(|| retention::p12r_reduced(black_box(1.5), 1.0, 1.0, t)));
    g.bench_function("p12r_closed", |b| b.iter(|| retention::p12r_closed(black_box(1.5), 1.0, 1.0)));
    g.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let mut g = c.benchmark_group("montecarlo");
    g.sample_size(10);
    let p = ModelParams::new(1.0, 1.0, 3.0, 1.0).unwrap();
    let window = Window::new(50.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    g.bench_function("realization_r50", |b| b.iter(|| simulate_interference_pair(&p, window, &mut rng)));
    let config = SimConfig::new(p, 200, 1).unwrap();
    g.bench_function("estimate_stats_200", |b| b.iter(|| estimate_stats(black_box(&config))));
    g.finish();
}

criterion_group!(benches, quadrature, retention_probabilities, monte_carlo);
criterion_main!(benches);
