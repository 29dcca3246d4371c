use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ser_duo_core::dsp::{mfcc, MfccConfig, Waveform, CANONICAL_RATE};
use ser_duo_core::gcn::{GcnDims, GcnModel};
use ser_duo_core::hubert::{EncoderConfig, HubertModel};
use ser_duo_core::numerics::{kmeans_fit, sym_eig};
use ser_duo_core::textgraph::build_chain_graph;
use ser_duo_core::Matrix;

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Matrix::from_vec(rows, cols, v).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [16, 64, 256] {
        let (a, b) = (random(n, n, 1), random(n, n, 2));
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap())
        });
    }
    g.finish();
}

fn eigen(c: &mut Criterion) {
    let mut g = c.benchmark_group("sym_eig");
    for n in [8, 32, 64] {
        let m = random(n, n, 3);
        let s = m.add(&m.transpose()).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| sym_eig(black_box(&s)).unwrap())
        });
    }
    g.finish();
}

fn mfcc_one_second(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let samples = (0..CANONICAL_RATE as usize)
        .map(|i| (i as f64 * 0.0863).sin() * 0.4 + rng.random_range(-0.01..0.01))
        .collect();
    let w = Waveform::new(samples, CANONICAL_RATE).unwrap();
    let cfg = MfccConfig::default();
    c.bench_function("mfcc_1s", |b| b.iter(|| mfcc(black_box(&w), &cfg).unwrap()));
}

fn gcn_forward(c: &mut Criterion) {
    let model = GcnModel::new(GcnDims::default(), 5);
    let graph = build_chain_graph(random(12, 100, 6)).unwrap();
    c.bench_function("gcn_logits_12_words", |b| {
        b.iter(|| model.logits(black_box(&graph)).unwrap())
    });
    c.bench_function("gcn_loss_and_grad_12_words", |b| {
        b.iter(|| model.loss_and_grad(black_box(&graph), 1).unwrap())
    });
}

fn encoder_forward(c: &mut Criterion) {
    let model = HubertModel::new(EncoderConfig::default(), 39, 50, 7).unwrap();
    let frames = random(100, 39, 8);
    let labels: Vec<usize> = (0..100).map(|i| i % 50).collect();
    let mask: Vec<bool> = (0..100).map(|i| (i / 10) % 2 == 0).collect();
    c.bench_function("encoder_forward_100_frames", |b| {
        b.iter(|| model.encoder_forward(black_box(&frames), None).unwrap())
    });
    c.bench_function("pretrain_loss_and_grad_100_frames", |b| {
        b.iter(|| {
            model
                .pretrain_loss_and_grad(black_box(&frames), &labels, &mask)
                .unwrap()
        })
    });
}

fn kmeans(c: &mut Criterion) {
    let points = random(4000, 39, 9);
    let mut g = c.benchmark_group("kmeans");
    g.sample_size(10);
    g.bench_function("4000x39_k50", |b| {
        b.iter(|| kmeans_fit(black_box(&points), 50, 1, 20).unwrap())
    });
    g.finish();
}

criterion_group!(
    benches,
    matmul,
    eigen,
    mfcc_one_second,
    gcn_forward,
    encoder_forward,
    kmeans
);
criterion_main!(benches);
