//! Top-k retrieval scans: packed-code popcount scoring versus
//! affinity-weighted scoring versus float64 inner products, on identical
//! random data. Single-threaded by construction, mirroring the harness used
//! by the `bench` subcommand.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use cgah::eval::{BenchFixture, ScanMode};

fn scan_modes(c: &mut Criterion) {
    let item_count = 50_000;
    let n_queries = 64;
    let k = 10;
    for r in [16usize, 64] {
        let fixture = BenchFixture::generate(item_count, r, n_queries, 7);
        let mut group = c.benchmark_group(format!("scan_r{r}"));
        group.throughput(Throughput::Elements(item_count as u64));
        for mode in [ScanMode::BinaryPopcount, ScanMode::AffinityWeightedBinary, ScanMode::FloatDot]
        {
            group.bench_function(BenchmarkId::from_parameter(mode.name()), |b| {
                let mut q = 0;
                b.iter(|| {
                    q = (q + 1) % n_queries;
                    black_box(fixture.scan(mode, q, k))
                });
            });
        }
        group.finish();
    }
}

criterion_group!(benches, scan_modes);
criterion_main!(benches);
