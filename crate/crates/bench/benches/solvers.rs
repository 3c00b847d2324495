use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pluripot_core::envelope::SolverOptions;
use pluripot_core::lattice::DEFAULT_NODE_CAP;
use pluripot_core::*;

fn disk_mask(h: f64) -> Arc<DomainMask> {
    let dom = make_domain(&DomainParams::UnitDisk {}).unwrap();
    let lat = Lattice::covering(dom.bbox(), h, 1, 2, DEFAULT_NODE_CAP).unwrap();
    classify_nodes(&lat, &dom).unwrap()
}

fn cone_build(c: &mut Criterion) {
    let mut g = c.benchmark_group("cone_build");
    for h in [0.05, 0.025] {
        let mask = disk_mask(h);
        g.bench_with_input(BenchmarkId::from_parameter(h), &mask, |b, m| {
            b.iter(|| build_cone(black_box(m), &ConeConfig::default_for(1)).unwrap())
        });
    }
    g.finish();
}

fn envelope(c: &mut Criterion) {
    let mut g = c.benchmark_group("psh_envelope");
    g.sample_size(10);
    for h in [0.05, 0.025] {
        let cone = build_cone(&disk_mask(h), &ConeConfig::default_for(1)).unwrap();
        let phi = GridFunction::from_fn(cone.mask(), "phi", |p| -(p[0] * p[0] + p[1] * p[1])).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(h), &phi, |b, phi| {
            b.iter(|| psh_envelope(black_box(phi), &cone, &SolverOptions::default()).unwrap())
        });
    }
    g.finish();
}

fn jensen(c: &mut Criterion) {
    let mut g = c.benchmark_group("jensen_lp");
    g.sample_size(10);
    let cone = build_cone(&disk_mask(0.1), &ConeConfig::default_for(1)).unwrap();
    let mask = cone.mask().clone();
    let phi = GridFunction::from_fn(&mask, "phi", |p| (3.0 * p[0]).sin() * p[1]).unwrap();
    let z = mask.nearest_slot(&[0.1, -0.2]).unwrap();
    for method in [LpMethod::Dense, LpMethod::Local, LpMethod::Walk] {
        let opts = LpOptions::default().with_method(method);
        g.bench_function(format!("{method:?}"), |b| b.iter(|| jensen_lp(black_box(z), &phi, &cone, &opts).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, cone_build, envelope, jensen);
criterion_main!(benches);
