use std::hint::black_box;

use chemoflow::ops::DiscreteOps;
use chemoflow::{NeumannBasis, Stepper};
use chemoflow_bench::fixture;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const SIZES: [usize; 3] = [32, 64, 128];

fn transform(c: &mut Criterion) {
    let mut g = c.benchmark_group("cosine_transform");
    for n in SIZES {
        let (state, _) = fixture(n);
        let basis = NeumannBasis::new(*state.domain());
        g.bench_with_input(BenchmarkId::new("round_trip", n), &state, |b, s| {
            b.iter(|| basis.synthesize(&basis.coefficients(black_box(&s.n))))
        });
    }
    g.finish();
}

fn projection(c: &mut Criterion) {
    let mut g = c.benchmark_group("projection");
    for n in SIZES {
        let (state, _) = fixture(n);
        let ops = DiscreteOps::new(*state.domain());
        let raw = chemoflow::ops::gradient(&state.n).lin_comb(1.0, &state.u, 1.0);
        g.bench_with_input(BenchmarkId::new("helmholtz", n), &raw, |b, w| {
            b.iter(|| ops.project(black_box(w)).expect("projection"))
        });
    }
    g.finish();
}

fn step(c: &mut Criterion) {
    let mut g = c.benchmark_group("step");
    g.sample_size(20);
    for n in SIZES {
        let (state, params) = fixture(n);
        let stepper = Stepper::new(params, 1e-3).expect("stepper");
        g.bench_with_input(BenchmarkId::new("full", n), &state, |b, s| {
            b.iter(|| stepper.step(black_box(s), None).expect("step"))
        });
    }
    g.finish();
}

criterion_group!(benches, transform, projection, step);
criterion_main!(benches);
