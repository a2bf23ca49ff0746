//! Scan-kernel and retrieval benchmarks.
//!
//! The headline comparison is `scan::scores_sequential` vs
//! `scan::scores_parallel` over stores of 1k and 10k entries — the
//! data-parallel hot spot behind the `parallel` feature. Run with
//! `cargo bench -p memboost-core` (and `--no-default-features` to see the
//! sequential-only build).

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use memboost_core::ame::{scan, AmeConfig, EntryMeta, MemoryEntry, MemoryStore};
use memboost_core::embedding::{Embedder, EmbedderConfig, EmbeddingVector, LOCAL_EMBEDDING_DIM};
use memboost_core::rng::SubstreamRng;

/// Deterministic random unit vector, reused across bench runs.
fn random_unit(rng: &mut SubstreamRng, dim: usize) -> EmbeddingVector {
    let values: Vec<f32> = (0..dim).map(|_| (rng.next_f64() * 2.0 - 1.0) as f32).collect();
    EmbeddingVector::new(values).expect("random vector normalizes")
}

fn build_entries(n: usize, dim: usize) -> Vec<MemoryEntry> {
    let mut rng = SubstreamRng::new(7, "bench-entries");
    (0..n)
        .map(|i| MemoryEntry {
            entry_id: i as u64 + 1,
            query: format!("bench query {i}"),
            answer: "the answer is (A)".to_string(),
            meta: EntryMeta {
                qid: format!("bench-{i:05}"),
                category: "business".to_string(),
                timestamp: i as u64 + 1,
            },
            embedding: random_unit(&mut rng, dim),
        })
        .collect()
}

fn bench_scan_kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("scan-scores");
    for &n in &[1_000usize, 10_000] {
        let entries = build_entries(n, LOCAL_EMBEDDING_DIM);
        let query = random_unit(&mut SubstreamRng::new(11, "bench-query"), LOCAL_EMBEDDING_DIM);
        group.throughput(Throughput::Elements(n as u64));

        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, _| {
            b.iter(|| black_box(scan::scores_sequential(black_box(&entries), black_box(&query))))
        });

        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, _| {
            b.iter(|| black_box(scan::scores_parallel(black_box(&entries), black_box(&query))))
        });
    }
    group.finish();
}

fn bench_retrieve_end_to_end(c: &mut Criterion) {
    let mut group = c.benchmark_group("store-retrieve");
    for &n in &[1_000usize, 10_000] {
        let mut store = MemoryStore::new(
            LOCAL_EMBEDDING_DIM,
            AmeConfig {
                // Random unit vectors are never near-duplicates, but
                // disabling suppression keeps setup honest about n.
                dup_threshold: 2.0,
                ..AmeConfig::default()
            },
        );
        for entry in build_entries(n, LOCAL_EMBEDDING_DIM) {
            store
                .write_back(&entry.query, &entry.answer, entry.meta, entry.embedding)
                .expect("bench write-back");
        }
        let query = random_unit(&mut SubstreamRng::new(11, "bench-query"), LOCAL_EMBEDDING_DIM);

        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("top3", n), &n, |b, _| {
            b.iter(|| black_box(store.retrieve(black_box(&query), 3).expect("retrieve")))
        });
    }
    group.finish();
}

fn bench_local_embed(c: &mut Criterion) {
    let embedder = Embedder::new(EmbedderConfig::local_default()).expect("local embedder");
    let text = "Which of the following best describes the relationship between \
                marginal revenue and price elasticity of demand for a monopolist?";
    c.bench_function("local-embed", |b| {
        b.iter(|| black_box(embedder.embed(black_box(text)).expect("embed")))
    });
}

criterion_group!(
    benches,
    bench_scan_kernels,
    bench_retrieve_end_to_end,
    bench_local_embed
);
criterion_main!(benches);
