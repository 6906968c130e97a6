use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mmncd_bench::blobs;
use mmncd_core::stlclu::{dbscan_with, ClusterParams, Metric};
use std::hint::black_box;

fn dbscan_scaling(c: &mut Criterion) {
    let mut group = c.benchmark_group("dbscan");
    let params = ClusterParams::new(1.5, 5).unwrap();
    for n in [200, 800, 1600] {
        let points = blobs(8, n / 8, 64, 7);
        for metric in [Metric::Euclidean, Metric::Cosine] {
            group.bench_with_input(BenchmarkId::new(format!("{metric:?}"), n), &points, |b, pts| {
                b.iter(|| dbscan_with(black_box(pts), params, metric))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, dbscan_scaling);
criterion_main!(benches);
