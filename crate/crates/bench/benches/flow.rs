//! Forward/inverse/log-density throughput of the 9-block flow.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use flowcast_bench::{benchmark_model, random_batch};
use flowcast_core::flow::CouplingVariant;

fn bench_flow(c: &mut Criterion) {
    let mut group = c.benchmark_group("flow");
    for variant in [CouplingVariant::Vanilla, CouplingVariant::Reinforced] {
        let model = benchmark_model(variant);
        for batch in [1usize, 32, 256] {
            let x = random_batch(batch, 24, 3);
            let cond = random_batch(batch, 24, 4);
            group.throughput(Throughput::Elements(batch as u64));
            group.bench_with_input(
                BenchmarkId::new(format!("forward/{variant}"), batch),
                &batch,
                |b, _| b.iter(|| model.forward_batch(&x, &cond).unwrap()),
            );
            group.bench_with_input(
                BenchmarkId::new(format!("inverse/{variant}"), batch),
                &batch,
                |b, _| b.iter(|| model.sample_batch(&x, &cond).unwrap()),
            );
            group.bench_with_input(
                BenchmarkId::new(format!("log_prob/{variant}"), batch),
                &batch,
                |b, _| b.iter(|| model.log_prob_batch(&x, &cond).unwrap()),
            );
        }
    }
    group.finish();
}

criterion_group!(benches, bench_flow);
criterion_main!(benches);
