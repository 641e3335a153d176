use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use mogge_bench::{dataset, scenario, single_start};
use mogge_core::model::e_step;
use mogge_core::{fit_em, fit_em_lasso, grid_search, FitOptions, GridSpec, PenaltyConfig, SearchOptions};

fn bench_e_step(c: &mut Criterion) {
    let params = scenario(300).true_params;
    let mut group = c.benchmark_group("e_step");
    for n in [300, 3000, 30000] {
        let data = dataset(n);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &data, |b, data| {
            b.iter(|| e_step(black_box(data), black_box(&params)).unwrap())
        });
    }
    group.finish();
}

fn bench_fits(c: &mut Criterion) {
    let data = dataset(300);
    let mut group = c.benchmark_group("fit_n300");
    group.sample_size(20);
    group.bench_function("em_single_start", |b| b.iter(|| fit_em(black_box(&data), 2, &single_start()).unwrap()));
    group.bench_function("em_ten_starts", |b| {
        b.iter(|| fit_em(black_box(&data), 2, &FitOptions::diagonal()).unwrap())
    });
    let penalty = PenaltyConfig::new(10.0, 10.0);
    group.bench_function("em_lasso_single_start", |b| {
        b.iter(|| fit_em_lasso(black_box(&data), 2, &penalty, &single_start()).unwrap())
    });
    group.finish();
}

fn bench_grid(c: &mut Criterion) {
    let data = dataset(300);
    let steps: Vec<f64> = (0..6).map(|v| 5.0 * v as f64).collect();
    let grid = GridSpec::new(vec![2], steps.clone(), steps).unwrap();
    let mut group = c.benchmark_group("grid_search");
    group.sample_size(10);
    group.bench_function("k2_6x6", |b| b.iter(|| grid_search(black_box(&data), &grid, &SearchOptions::default()).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_e_step, bench_fits, bench_grid);
criterion_main!(benches);
