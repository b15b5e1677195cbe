use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use affordance_bench::fixture;

fn graph_network(c: &mut Criterion) {
    let mut group = c.benchmark_group("graph_network");
    for hidden in [32, 128] {
        for steps in [1, 3] {
            let f = fixture(hidden, steps);
            let id = format!("H{hidden}/T{steps}/{}nodes", f.nodes());
            group.bench_function(BenchmarkId::new("forward", &id), |b| b.iter(|| black_box(f.forward())));
            let mut store = f.store();
            group.bench_function(BenchmarkId::new("forward_backward", &id), |b| {
                b.iter(|| black_box(f.forward_backward(&mut store)))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, graph_network);
criterion_main!(benches);
