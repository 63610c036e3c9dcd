use std::hint::black_box;

use clsr_core::dsp::{AudioClip, LogMelExtractor, MelConfig};
use clsr_core::eval::rank_queries;
use clsr_core::losses::total_loss;
use clsr_core::model::{forward, BoundParams};
use clsr_core::rng::SplitMix64;
use clsr_core::{Graph, LossConfig, LossWeights, ModelDims, ModelParams, Tensor2};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn random(rng: &mut SplitMix64, rows: usize, cols: usize) -> Tensor2<f32> {
    Tensor2::from_fn(rows, cols, |_, _| rng.normal() as f32)
}

fn matmul(c: &mut Criterion) {
    let mut rng = SplitMix64::new(1);
    let mut group = c.benchmark_group("matmul");
    for n in [32, 128, 256] {
        let (a, b) = (random(&mut rng, n, n), random(&mut rng, n, n));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(a.matmul(&b).unwrap()))
        });
    }
    group.finish();
}

fn loss_step(c: &mut Criterion) {
    let dims = ModelDims {
        d_a: 64,
        d_t: 64,
        hidden: 256,
        embed_dim: 64,
    };
    let params = ModelParams::<f32>::init(dims, 0).unwrap();
    let mut rng = SplitMix64::new(2);
    let (audio, text) = (random(&mut rng, 32, 64), random(&mut rng, 32, 64));
    let config = LossConfig::full(&LossWeights::default());
    c.bench_function("forward_backward_b32", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let bound = BoundParams::bind(&mut g, &params);
            let a = g.constant(audio.clone());
            let t = g.constant(text.clone());
            let state = forward(&mut g, &bound, a, t).unwrap();
            let (root, _) = total_loss(&mut g, &state, &config).unwrap();
            g.backward(root).unwrap();
            black_box(bound.gradients(&g))
        })
    });
}

fn log_mel(c: &mut Criterion) {
    let extractor = LogMelExtractor::new(MelConfig::default()).unwrap();
    let mut rng = SplitMix64::new(3);
    let clip = AudioClip::new((0..320_000).map(|_| rng.uniform(-0.5, 0.5) as f32).collect(), 32000);
    c.bench_function("log_mel_10s", |bench| bench.iter(|| black_box(extractor.log_mel(&clip).unwrap())));
}

fn ranking(c: &mut Criterion) {
    let mut rng = SplitMix64::new(4);
    let (q, g) = (random(&mut rng, 1000, 64), random(&mut rng, 1000, 64));
    c.bench_function("rank_1000x1000", |bench| bench.iter(|| black_box(rank_queries(&q, &g).unwrap())));
}

criterion_group!(benches, matmul, loss_step, log_mel, ranking);
criterion_main!(benches);
