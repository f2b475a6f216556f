use criterion::{criterion_group, criterion_main, Criterion};
use rtnerf_bench::sparse_matrix;
use rtnerf_core::sparse::{encode_forced, Variant};
use std::hint::black_box;

fn bench_encode(c: &mut Criterion) {
    let low = sparse_matrix(64, 64, 0.46, 1);
    let high = sparse_matrix(64, 64, 0.92, 2);
    let mut group = c.benchmark_group("encode_64x64");
    group.bench_function("bitmap", |b| {
        b.iter(|| encode_forced(&low, Variant::Bitmap))
    });
    group.bench_function("coo", |b| b.iter(|| encode_forced(&high, Variant::Coo)));
    group.finish();
}

fn bench_query(c: &mut Criterion) {
    let low = encode_forced(&sparse_matrix(64, 64, 0.46, 3), Variant::Bitmap).unwrap();
    let high = encode_forced(&sparse_matrix(64, 64, 0.92, 4), Variant::Coo).unwrap();
    let mut group = c.benchmark_group("query_64x64");
    group.bench_function("bitmap", |b| {
        let mut i = 0usize;
        b.iter(|| {
            i = (i + 17) % (64 * 64);
            black_box(low.query(i / 64, i % 64).unwrap())
        })
    });
    group.bench_function("coo", |b| {
        let mut i = 0usize;
        b.iter(|| {
            i = (i + 17) % (64 * 64);
            black_box(high.query(i / 64, i % 64).unwrap())
        })
    });
    group.finish();
}

criterion_group!(benches, bench_encode, bench_query);
criterion_main!(benches);
