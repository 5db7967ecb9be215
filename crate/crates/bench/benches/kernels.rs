use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use pccse_bench::workload;
use pccse_core::pipeline::{compute_regions, RadiusSpec};
use pccse_core::{assign_constrained, assign_constrained_blocked, assign_unconstrained, geodesic_distances};

fn kernels(c: &mut Criterion) {
    let w = workload();
    let mesh = w.mannequin.mesh();
    let emb = &w.mannequin.embeddings;

    c.bench_function("assign_unconstrained", |b| {
        b.iter(|| assign_unconstrained(black_box(&w.instance), mesh, emb).unwrap())
    });
    c.bench_function("assign_constrained", |b| {
        b.iter(|| assign_constrained(black_box(&w.instance), mesh, emb, &w.labels).unwrap())
    });
    c.bench_function("assign_constrained_blocked", |b| {
        b.iter(|| assign_constrained_blocked(black_box(&w.instance), mesh, emb, &w.labels).unwrap())
    });
    c.bench_function("proximal_regions", |b| {
        b.iter(|| compute_regions(black_box(&w.instance), &w.config, RadiusSpec::Delta(0.08)))
    });
    let sources: Vec<u32> = (0..mesh.vertex_count() as u32).step_by(8).collect();
    c.bench_function("geodesics_from_40_sources", |b| {
        b.iter(|| geodesic_distances(black_box(mesh), &sources).unwrap())
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
