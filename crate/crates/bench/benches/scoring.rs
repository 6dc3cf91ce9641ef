use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kgabs_bench::{candidates, graph, privacy_case, question, reference_texts, relations};
use kgabs_core::graph::Direction;
use kgabs_core::privacy::{audit_payload, AllowList};
use kgabs_core::provider::{Embedder, HashingEmbedder};
use kgabs_core::relation::filter_relations;
use kgabs_core::retrieval::select_triplets;
use std::hint::black_box;

fn bench_filter(c: &mut Criterion) {
    let embedder = HashingEmbedder::default();
    let q = question(1);
    let mut group = c.benchmark_group("filter_relations");
    for n in [10, 50, 200] {
        let rels = relations(n, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &rels, |b, rels| {
            b.iter(|| filter_relations(&embedder, black_box(&q), rels, 5).unwrap())
        });
    }
    group.finish();
}

fn bench_select(c: &mut Criterion) {
    let embedder = HashingEmbedder::default();
    let texts = reference_texts(3, 3, 3);
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let refs = embedder.embed(&refs).unwrap();
    let mut group = c.benchmark_group("select_triplets");
    for n in [20, 100, 500] {
        let cands = candidates(n, 4);
        group.bench_with_input(BenchmarkId::from_parameter(n), &cands, |b, cands| {
            b.iter(|| select_triplets(&embedder, black_box(cands), &refs, 3).unwrap())
        });
    }
    group.finish();
}

fn bench_cluster(c: &mut Criterion) {
    let (g, mids) = graph(5_000, 8, 5);
    let rel = g
        .adjacent_relations(&mids[0], Direction::AsSubject)
        .unwrap()
        .remove(0);
    c.bench_function("adjacent_relations", |b| {
        b.iter(|| {
            g.adjacent_relations(black_box(&mids[7]), Direction::AsObject)
                .unwrap()
        })
    });
    c.bench_function("entity_cluster", |b| {
        b.iter(|| {
            g.entity_cluster(black_box(&mids[0]), &rel, Direction::AsSubject)
                .unwrap()
        })
    });
}

fn bench_audit(c: &mut Criterion) {
    let allow = AllowList::default();
    let mut group = c.benchmark_group("audit_payload");
    for names in [100, 2_000] {
        let (map, payload) = privacy_case(names, 400, 6);
        group.bench_with_input(BenchmarkId::from_parameter(names), &payload, |b, p| {
            b.iter(|| audit_payload(black_box(p), &map, &allow))
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_filter,
    bench_select,
    bench_cluster,
    bench_audit
);
criterion_main!(benches);
