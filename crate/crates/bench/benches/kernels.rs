use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use twosize::renewal::{exact_passage_law, sample_passage};
use twosize::sde::{euler_maruyama, DiffusionSpec};
use twosize::streams::stream;
use twosize::wf::simulate_trajectory;
use twosize::{RhoSpec, SizeParams, StoppingRule};

fn passage(c: &mut Criterion) {
    let params = SizeParams::new(0.3, 1000.0).unwrap();
    let mut rng = stream(1, 0);
    c.bench_function("sample_passage R=1000", |b| b.iter(|| sample_passage(black_box(0.5), params, &mut rng).unwrap()));
    let small = SizeParams::new(0.5, 200.0).unwrap();
    c.bench_function("exact_passage_law R=200", |b| {
        b.iter(|| exact_passage_law(black_box(0.5), small, StoppingRule::NonStrict).unwrap())
    });
}

fn trajectory(c: &mut Criterion) {
    let params = SizeParams::new(0.6, 500.0).unwrap();
    let mut rng = stream(2, 0);
    c.bench_function("trajectory 1000 gens R=500", |b| {
        b.iter(|| simulate_trajectory(0.5, &RhoSpec::Neutral, params, StoppingRule::NonStrict, 1000, &mut rng).unwrap())
    });
}

fn euler(c: &mut Criterion) {
    let spec = DiffusionSpec::new(0.5, RhoSpec::genic(0.5), StoppingRule::NonStrict).unwrap();
    let mut rng = stream(3, 0);
    c.bench_function("euler_maruyama 1000 steps", |b| {
        b.iter(|| euler_maruyama(black_box(0.5), &spec, 1e-3, 1.0, &mut rng).unwrap())
    });
}

criterion_group!(benches, passage, trajectory, euler);
criterion_main!(benches);
