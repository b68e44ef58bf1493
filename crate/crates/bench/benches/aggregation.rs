use criterion::{criterion_group, criterion_main, Criterion};
use epiline_core::complexity::{BenchWorkload, Strategy};
use epiline_core::synthetic::RigSampler;
use epiline_core::{AttentionConfig, ImageSize, SearchConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn strategies(c: &mut Criterion) {
    let size = ImageSize::new(32, 40).unwrap();
    let pair = RigSampler::dtu_like().sample(&mut ChaCha8Rng::seed_from_u64(1), size).pair;
    let config = AttentionConfig::new(16, 2);
    let workload = BenchWorkload::new(&pair, &config, &SearchConfig::default(), 0).unwrap();
    let mut group = c.benchmark_group("aggregation_32x40_c16");
    group.sample_size(10);
    for s in [Strategy::LineToLine, Strategy::PointToLine, Strategy::PlaneToPlaneLinear] {
        group.bench_function(s.name(), |b| b.iter(|| workload.run(s).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, strategies);
criterion_main!(benches);
