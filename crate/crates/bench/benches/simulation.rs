use std::path::PathBuf;

use adaptive_sync::graph::Graph;
use adaptive_sync::ode_net;
use adaptive_sync::pde1d;
use adaptive_sync::scenario::{ScenarioFile, Setup};
use criterion::{black_box, criterion_group, criterion_main, Criterion};

fn setup(name: &str) -> Setup {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(format!("{name}.json"));
    ScenarioFile::load(&path).unwrap().build().unwrap()
}

fn spectra(c: &mut Criterion) {
    let barbell = Graph::barbell();
    c.bench_function("lambda2 barbell", |b| b.iter(|| black_box(&barbell).lambda2()));
    let path = Graph::path(200).unwrap();
    c.bench_function("lambda2 path 200", |b| b.iter(|| black_box(&path).lambda2()));
}

fn network(c: &mut Criterion) {
    let Setup::Ode(s) = setup("barbell_adaptive") else {
        unreachable!()
    };
    let state = s.scenario.initial_state();
    c.bench_function("barbell rhs", |b| {
        b.iter(|| ode_net::rhs(&s.scenario, black_box(&state)).unwrap())
    });

    let mut short = s.scenario.clone();
    short.time.t_end = 1.0;
    c.bench_function("barbell integrate t=1", |b| {
        b.iter(|| ode_net::integrate(black_box(&short)).unwrap())
    });
}

fn pde(c: &mut Criterion) {
    let Setup::Pde(s) = setup("pde_bistable_split") else {
        unreachable!()
    };
    let state = s.scenario.initial_state();
    c.bench_function("pde 64 cells rhs", |b| {
        b.iter(|| pde1d::discrete_rhs(&s.scenario, black_box(&state)).unwrap())
    });
}

criterion_group!(benches, spectra, network, pde);
criterion_main!(benches);
