use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use factorpref_bench::{blobs, comparisons, sparse};
use factorpref_core::btl::{lsr_estimate, mle_oracle};
use factorpref_core::cluster::{fit_svd, kmeans};

fn btl(c: &mut Criterion) {
    let mut g = c.benchmark_group("btl");
    for factors in [20, 60] {
        let cmp = comparisons(factors, 50_000, 7);
        g.bench_with_input(BenchmarkId::new("lsr", factors), &cmp, |b, cmp| {
            b.iter(|| lsr_estimate(black_box(cmp), 0.01).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("mle", factors), &cmp, |b, cmp| {
            b.iter(|| mle_oracle(black_box(cmp), 0.01).unwrap())
        });
    }
    g.finish();
}

fn svd(c: &mut Criterion) {
    let m = sparse(2_000, 5_000, 0.01, 3);
    c.bench_function("svd/2000x5000/100", |b| b.iter(|| fit_svd(black_box(&m), 100, 1).unwrap()));
}

fn clustering(c: &mut Criterion) {
    let pts = blobs(2_000, 20, 7, 5);
    c.bench_function("kmeans/2000x20/k7", |b| b.iter(|| kmeans(black_box(&pts), 7, 1, 10).unwrap()));
}

criterion_group!(benches, btl, svd, clustering);
criterion_main!(benches);
