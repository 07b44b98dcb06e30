//! Benchmarks of the data-parallel kernels. Build with the default
//! `parallel` feature for the rayon path, or with `--no-default-features`
//! for the sequential fallback; criterion baselines compare the two runs.
//! With rayon enabled, each kernel is additionally measured inside a
//! single-thread pool for an in-run comparison against the same code path.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use spin7_core::fields::{samples, torsion};
use spin7_core::flow::{self, FlowConfig};
use spin7_core::sampling::{self, Stream};
use spin7_core::symbol;
use spin7_core::tensor::MultiTensor;

#[cfg(feature = "parallel")]
fn single_thread_pool() -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("pool")
}

fn bench_kernel<F: Fn() + Copy>(c: &mut Criterion, name: &str, f: F) {
    let mut group = c.benchmark_group(name);
    group.sample_size(10);
    #[cfg(feature = "parallel")]
    {
        group.bench_function("rayon", |b| b.iter(f));
        let pool = single_thread_pool();
        group.bench_function("one-thread", |b| b.iter(|| pool.install(f)));
    }
    #[cfg(not(feature = "parallel"))]
    group.bench_function("sequential", |b| b.iter(f));
    group.finish();
}

fn geometry_pipeline(c: &mut Criterion) {
    let field = samples::perturbed_field(
        1,
        64,
        samples::Perturbation {
            modes: 2,
            eps: 1e-2,
        },
        3,
    )
    .unwrap();
    bench_kernel(c, "geometry-n64", &move || {
        black_box(torsion::geometry(black_box(&field)).unwrap());
    });
}

fn flow_rhs(c: &mut Criterion) {
    let field = samples::perturbed_field(
        1,
        32,
        samples::Perturbation {
            modes: 2,
            eps: 1e-2,
        },
        3,
    )
    .unwrap();
    let cfg = FlowConfig::default();
    bench_kernel(c, "flow-rhs-n32", &move || {
        black_box(flow::flow_rhs_field(black_box(&field), &cfg, None).unwrap());
    });
}

fn symbol_sweep(c: &mut Criterion) {
    let mut rng = sampling::rng(9, Stream::Covectors);
    let covectors: Vec<MultiTensor> = (0..64)
        .map(|_| sampling::random_unit_covector(&mut rng))
        .collect();
    bench_kernel(c, "symbol-sweep-64", &move || {
        let out = spin7_core::par::map_slice(&covectors, |xi| {
            symbol::analyze_covector(xi).unwrap()
        });
        black_box(out);
    });
}

fn energy_eval(c: &mut Criterion) {
    let field = samples::perturbed_field(
        1,
        64,
        samples::Perturbation {
            modes: 2,
            eps: 1e-2,
        },
        3,
    )
    .unwrap();
    bench_kernel(c, "energy-n64", &move || {
        black_box(flow::energy(black_box(&field)).unwrap().e);
    });
}

criterion_group!(benches, geometry_pipeline, flow_rhs, symbol_sweep, energy_eval);
criterion_main!(benches);
