use std::hint::black_box;
use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ragtune::engine::{evaluate_config, EvalOptions};
use ragtune::environment::{load_environment, Environment, QAItem, SyntheticEnvironment, SyntheticSpec};
use ragtune::exec::Parallelism;
use ragtune::gateway::Gateway;
use ragtune::pipeline::IndexCache;
use ragtune::search_space::default_text_space;

/// The tiny fixture with its questions repeated to `n` items.
fn widened(n: usize) -> Environment {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/tiny");
    let base = load_environment(&dir.join("qa.jsonl"), &dir.join("corpus.jsonl")).unwrap();
    let qa: Vec<QAItem> = (0..n)
        .map(|i| {
            let src = &base.qa[i % base.qa.len()];
            QAItem { id: format!("{}-{i}", src.id), ..src.clone() }
        })
        .collect();
    Environment::from_records("bench", qa, base.corpus).unwrap()
}

fn evaluation(c: &mut Criterion) {
    let env = widened(64);
    let space = default_text_space();
    let gw = Gateway::mock();
    let config = space.sample_uniform(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let index = IndexCache::new();
    let mut group = c.benchmark_group("evaluate_config_64_items");
    for workers in [1, 8] {
        let opts = EvalOptions { workers, ..EvalOptions::default() };
        group.bench_with_input(BenchmarkId::from_parameter(format!("workers={workers}")), &opts, |b, opts| {
            b.iter(|| black_box(evaluate_config(&space, &config, &env, &gw, &index, opts).unwrap().reward))
        });
    }
    group.finish();
}

fn landscape_scan(c: &mut Criterion) {
    let space = default_text_space();
    let spec = SyntheticSpec::random(serde_json::Value::Null, &space, 3, 16, 0.1);
    let env = SyntheticEnvironment::build(space.clone(), &spec).unwrap();
    let configs: Vec<_> = {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        (0..20_000).map(|_| space.sample_uniform(&mut rng).unwrap()).collect()
    };
    let mut group = c.benchmark_group("synthetic_rewards_20k");
    for (name, mode) in [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Global)] {
        group.bench_function(name, |b| b.iter(|| black_box(mode.map(&configs, |_, c| env.reward(c)).iter().sum::<f64>())));
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = evaluation, landscape_scan
}
criterion_main!(benches);
