use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;

use monosem::metrics::{semantic_consistency, ActivationRule};
use monosem::ncl::{infonce_batch, Similarity};
use monosem::sae::{topk, SaeParams};
use monosem::synthdata::generate;
use monosem::{mc_oracle, DataSpec, FeatureKind, McConfig, ToyModel, ToyVariant};

fn bench_topk(c: &mut Criterion) {
    let data = generate(&DataSpec::new(512, 0.5, 1, 0)).unwrap();
    let row = data.x.row(0).to_owned();
    let mut g = c.benchmark_group("topk");
    for k in [2usize, 32, 128] {
        g.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| b.iter(|| topk(black_box(row.view()), k).unwrap()));
    }
    g.finish();
}

fn bench_reconstruct(c: &mut Criterion) {
    let data = generate(&DataSpec::new(40, 0.2, 1024, 0)).unwrap();
    let mut g = c.benchmark_group("reconstruct");
    for variant in [ToyVariant::Linear, ToyVariant::BiasRelu] {
        let model = ToyModel::init(40, 20, variant, 1).unwrap();
        g.bench_function(format!("{variant:?}"), |b| b.iter(|| model.reconstruct(black_box(data.x.view())).unwrap()));
    }
    g.bench_function("loss_and_grad", |b| {
        let model = ToyModel::init(40, 20, ToyVariant::BiasRelu, 1).unwrap();
        b.iter(|| model.loss_and_grad(black_box(data.x.view())).unwrap())
    });
    g.finish();
}

fn bench_infonce(c: &mut Criterion) {
    let a = generate(&DataSpec::new(64, 0.5, 256, 0)).unwrap().x;
    let p = generate(&DataSpec::new(64, 0.5, 256, 1)).unwrap().x;
    let mut g = c.benchmark_group("infonce_batch");
    for (name, sim) in [("dot", Similarity::default()), ("cosine", Similarity::cosine(0.2))] {
        g.bench_function(name, |b| b.iter(|| infonce_batch(black_box(a.view()), black_box(p.view()), true, sim).unwrap()));
    }
    g.finish();
}

fn bench_sae(c: &mut Criterion) {
    let f = generate(&DataSpec::new(40, 0.9, 512, 0)).unwrap().x;
    let sae = SaeParams::init(f.view(), 80, 2, 0).unwrap();
    c.bench_function("sae_loss_and_grads", |b| b.iter(|| sae.loss_and_grads(black_box(f.view())).unwrap()));
}

fn bench_consistency(c: &mut Criterion) {
    let data = generate(&DataSpec::new(64, 0.5, 4096, 0)).unwrap();
    let features: Array2<f64> = data.x.mapv(|v| v.max(0.0));
    let mut g = c.benchmark_group("semantic_consistency");
    for rule in [ActivationRule::default(), ActivationRule::TopQuantile { q: 0.05 }] {
        g.bench_function(rule.as_str(), |b| {
            b.iter(|| semantic_consistency(black_box(features.view()), &data.y, data.n_features(), rule).unwrap())
        });
    }
    g.finish();
}

fn bench_mc(c: &mut Criterion) {
    let cfg = McConfig::new(0.2, 0).with_samples(100_000).with_eta(0.1).with_lambda(0.3);
    c.bench_function("mc_moments_100k", |b| b.iter(|| mc_oracle::estimate_moments(FeatureKind::Poly, black_box(&cfg)).unwrap()));
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(20);
    targets = bench_topk, bench_reconstruct, bench_infonce, bench_sae, bench_consistency, bench_mc
}
criterion_main!(kernels);
