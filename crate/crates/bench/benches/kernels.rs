use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use irevnet::invertible::{channel_split, Pass};
use irevnet::nn::{conv2d, ConvParams};
use irevnet::training::{backward_o1, backward_stored};
use irevnet::{InverseMode, Mode, NetConfig, Network, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

fn uniform(shape: [usize; 4], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new(0.0f32, 1.0).unwrap();
    Tensor::from_fn(shape, |_| u.sample(&mut rng))
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = uniform([16, 48, 16, 16], 1);
    let p = ConvParams::<f32>::he_normal(48, 48, 3, &mut rng);
    c.bench_function("conv2d 3x3 48->48 16x16 batch16", |b| {
        b.iter(|| conv2d(&x, &p).unwrap())
    });
}

fn coupling(c: &mut Criterion) {
    let net = Network::<f32>::build(NetConfig::tiny_b(), 0).unwrap();
    let x = uniform([16, 3, 32, 32], 2);
    let pair = channel_split(&net.split_input(&x).unwrap()).unwrap();
    let block = &net.blocks[0];
    let (out, _) = block.forward(&pair, Pass::Eval).unwrap();
    c.bench_function("coupling forward (block 1, batch 16)", |b| {
        b.iter(|| block.forward(&pair, Pass::Eval).unwrap())
    });
    c.bench_function("coupling inverse (block 1, batch 16)", |b| {
        b.iter(|| block.inverse(&out, Pass::Eval).unwrap())
    });
    let (feats, _) = net.forward(&x, Mode::Eval, &[]).unwrap();
    c.bench_function("tiny-b inverse (batch 16)", |b| {
        b.iter(|| net.inverse(&feats, InverseMode::Eval).unwrap())
    });
}

fn gradients(c: &mut Criterion) {
    let net = Network::<f32>::build(NetConfig::tiny_b(), 0).unwrap();
    let x = uniform([16, 3, 32, 32], 3);
    let labels: Vec<usize> = (0..16).map(|i| i % 10).collect();
    let mut g = c.benchmark_group("tiny-b gradient, batch 16");
    g.sample_size(10);
    g.bench_function("stored", |b| {
        b.iter_batched(
            || (),
            |_| backward_stored(&net, &x, &labels).unwrap(),
            BatchSize::SmallInput,
        )
    });
    g.bench_function("o1 recompute", |b| {
        b.iter_batched(
            || (),
            |_| backward_o1(&net, &x, &labels).unwrap(),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

criterion_group!(benches, conv, coupling, gradients);
criterion_main!(benches);
