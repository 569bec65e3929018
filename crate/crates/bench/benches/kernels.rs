use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use dualmoco::encoder::encode_batch;
use dualmoco::eval::{nn_search, DEFAULT_MARGIN_K};
use dualmoco_bench::{fill_queues, fixture, unit_rows};

fn bench_nn_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("nn_search");
    for n in [500, 1000, 2000] {
        let q = unit_rows(n, 32, 1);
        let corpus = unit_rows(n, 32, 2);
        group.throughput(Throughput::Elements((n * n) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| nn_search(black_box(&q), black_box(&corpus), DEFAULT_MARGIN_K).unwrap())
        });
    }
    group.finish();
}

fn bench_encode(c: &mut Criterion) {
    let f = fixture();
    let mut group = c.benchmark_group("encode_batch");
    group.throughput(Throughput::Elements(f.batch_a.len() as u64));
    group.bench_function("batch_64", |b| {
        b.iter(|| encode_batch(black_box(&f.state.base_a), black_box(&f.batch_a), f.config.pooling).unwrap())
    });
    group.finish();
}

fn bench_moco_step(c: &mut Criterion) {
    let mut f = fixture();
    fill_queues(&mut f);
    let mut group = c.benchmark_group("moco");
    group.bench_function("loss_and_grads", |b| {
        b.iter(|| {
            f.state
                .loss_and_grads(black_box(&f.batch_a), black_box(&f.batch_b), f.config.pooling)
                .unwrap()
        })
    });
    group.bench_function("step", |b| {
        b.iter(|| {
            f.state
                .moco_step(black_box(&f.batch_a), black_box(&f.batch_b), f.config.pooling)
                .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_nn_search, bench_encode, bench_moco_step);
criterion_main!(benches);
