use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use travmap_bench::{filled_queue, random_bev, unit_vectors};
use travmap_core::online::traversability_map;
use travmap_core::training::TrainConfig;
use travmap_core::{GridSpec, ModelParams};

fn stages(c: &mut Criterion) {
    let arch = TrainConfig::desk_scale().architecture;
    let params = ModelParams::init(arch, 0).unwrap();
    let bev = random_bev(GridSpec::default(), 0.6, 0);
    let fmap = params.forward(&bev).unwrap();
    let dim = params.embedding_dim();

    let mut g = c.benchmark_group("inference_300x300");
    g.sample_size(10);
    g.bench_function("forward", |b| b.iter(|| params.forward(&bev).unwrap()));
    let queue = filled_queue(dim, 64, 64, 1);
    g.bench_function("map_queue64", |b| {
        b.iter(|| traversability_map(&fmap, &queue, &bev.occupancy).unwrap())
    });
    let batch = unit_vectors(64, dim, 2);
    g.bench_function("update_64_features", |b| {
        b.iter_batched(
            || queue.clone(),
            |mut q| {
                for z in &batch {
                    q.update(z);
                }
                q
            },
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

criterion_group!(benches, stages);
criterion_main!(benches);
