//! One training batch gradient and one held-out evaluation sweep, with the
//! per-sample work on the rayon pool and on the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dualsys::harness::{evaluate, toy_model_config, toy_train_config};
use dualsys::mmdit::Model;
use dualsys::par;
use dualsys::pipeline::{batch_gradient, SamplerConfig, Trainer};
use dualsys::toyworld::CorpusManifest;

fn modes() -> Vec<(&'static str, bool)> {
    let mut m = vec![("sequential", false)];
    if cfg!(feature = "parallel") {
        m.push(("parallel", true));
    }
    m
}

fn bench_gradient(c: &mut Criterion) {
    let mut model = Model::new(toy_model_config(), 1).unwrap();
    let data = CorpusManifest::generate(1, 64, 0.3);
    let examples = Trainer::new(&mut model, &data, toy_train_config()).unwrap().batch(0).unwrap();
    let mut g = c.benchmark_group("batch_gradient");
    g.sample_size(10);
    for (name, on) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_parallel(on);
            b.iter(|| batch_gradient(&model, &examples).unwrap())
        });
    }
    g.finish();
    par::set_parallel(true);
}

fn bench_eval(c: &mut Criterion) {
    let model = Model::new(toy_model_config(), 1).unwrap();
    let entries = CorpusManifest::generate(2, 8, 0.5).entries;
    let sampler = SamplerConfig { steps: 4, ..Default::default() };
    let mut g = c.benchmark_group("evaluate_8_clips");
    g.sample_size(10);
    for (name, on) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_parallel(on);
            b.iter(|| evaluate(&model, &entries, &sampler).unwrap())
        });
    }
    g.finish();
    par::set_parallel(true);
}

criterion_group!(benches, bench_gradient, bench_eval);
criterion_main!(benches);
