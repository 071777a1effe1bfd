use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use deepsta::autodiff::Tape;
use deepsta::model::{DeepSta, Variant};
use deepsta::node2vec::{generate_walks, WalkConfig, WalkSampler};
use deepsta::rng;
use deepsta::scenario::Split;
use deepsta::training::ExperimentConfig;
use deepsta_bench::{default_data, grid_graph, random_matrix};
use std::hint::black_box;

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [16, 64, 128, 256] {
        let (a, b) = (random_matrix(n, n, 1), random_matrix(n, n, 2));
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut t = Tape::new();
                let (x, y) = (t.constant(a.clone()), t.constant(b.clone()));
                black_box(t.matmul(x, y).unwrap());
            })
        });
    }
    g.finish();
}

fn forward_backward(c: &mut Criterion) {
    let data = default_data();
    let cfg = ExperimentConfig::default();
    let batch: Vec<(usize, usize)> = data.samples(Split::Train, cfg.window).into_iter().take(cfg.batch_size).collect();
    let mut g = c.benchmark_group("model");
    g.sample_size(20);
    for variant in [Variant::Full, Variant::LstmBaseline] {
        let mcfg = cfg.model_config(variant, &data);
        let inputs = data.inputs(&mcfg).unwrap();
        let model = DeepSta::init(mcfg, 0, 0.9).unwrap();
        g.bench_function(format!("predict/{variant}"), |b| b.iter(|| black_box(model.predict(&inputs, &batch).unwrap())));
        g.bench_function(format!("loss_and_grads/{variant}"), |b| {
            b.iter(|| black_box(model.loss_and_grads(&inputs, &batch, true, &mut rng::stream(0, &[])).unwrap()))
        });
    }
    g.finish();
}

fn walks(c: &mut Criterion) {
    let graph = grid_graph(10, 3);
    let mut g = c.benchmark_group("walks");
    for (p, q) in [(1.0, 1.0), (0.5, 2.0)] {
        let sampler = WalkSampler::new(&graph, p, q);
        g.bench_function(format!("walk80/p{p}q{q}"), |b| {
            let mut r = rng::stream(0, &[]);
            b.iter(|| black_box(sampler.walk(0, 80, &mut r)))
        });
    }
    let cfg = WalkConfig::default();
    g.sample_size(10);
    g.bench_function("corpus/100nodes", |b| b.iter(|| black_box(generate_walks(&graph, &cfg).unwrap())));
    g.finish();
}

criterion_group!(benches, matmul, forward_backward, walks);
criterion_main!(benches);
