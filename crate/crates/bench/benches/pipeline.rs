use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use specmosaic::align::{estimate_flow, DEFAULT_BLOCK, DEFAULT_SEARCH_RADIUS};
use specmosaic_bench::{pipeline, scene, shifted_pair, SIZES};

fn simulate(c: &mut Criterion) {
    let p = pipeline();
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    for size in SIZES {
        let s = scene(size);
        g.bench_with_input(BenchmarkId::from_parameter(size), &s, |b, s| {
            b.iter(|| p.simulate(black_box(s), 0.05, 1, 0).unwrap())
        });
    }
    g.finish();
}

fn decode(c: &mut Criterion) {
    let p = pipeline();
    let mut g = c.benchmark_group("decode");
    for size in SIZES {
        let frame = p.simulate(&scene(size), 0.0, 1, 0).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(size), &frame, |b, f| {
            b.iter(|| p.decode(black_box(f)).unwrap())
        });
    }
    g.finish();
}

fn reconstruct(c: &mut Criterion) {
    let p = pipeline();
    let mut g = c.benchmark_group("reconstruct");
    g.sample_size(10);
    for size in SIZES {
        let set = p.decode(&p.simulate(&scene(size), 0.0, 1, 0).unwrap()).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(size), &set, |b, s| {
            b.iter(|| p.reconstruct(black_box(s)).unwrap())
        });
    }
    g.finish();
}

fn flow(c: &mut Criterion) {
    let mut g = c.benchmark_group("estimate_flow");
    g.sample_size(10);
    for size in SIZES {
        let (a, b) = shifted_pair(size, 2.5, -1.5);
        g.bench_function(BenchmarkId::from_parameter(size), |bench| {
            bench.iter(|| {
                estimate_flow(black_box(&a), black_box(&b), size, size, DEFAULT_SEARCH_RADIUS, DEFAULT_BLOCK).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, simulate, decode, reconstruct, flow);
criterion_main!(benches);
