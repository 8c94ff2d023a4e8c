use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use et_core::judges::{EntropyScore, StrategyKind, VerificationOracle};
use et_core::metrics::cost_surface;
use et_core::signals::{extract_all, TextPatterns};
use et_core::synthetic::{generate, SyntheticConfig};
use et_core::tda::{rips_persistence, PointCloud};
use et_core::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn corpus() -> et_core::synthetic::SyntheticCorpus {
    generate(&SyntheticConfig {
        n_knowable: 500,
        n_unknowable: 500,
        ..SyntheticConfig::with_seed(9)
    })
}

fn signals(c: &mut Criterion) {
    let synth = corpus();
    let corpus = synth.corpus();
    let patterns = TextPatterns::default();
    let mut group = c.benchmark_group("signals");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(name, corpus.traces.len()), &exec, |b, &exec| {
            b.iter(|| extract_all(&corpus.traces, &patterns, exec));
        });
    }
    group.finish();
}

fn surface(c: &mut Criterion) {
    let synth = corpus();
    let corpus = synth.corpus();
    let (_, sigs) = extract_all(&corpus.traces, &TextPatterns::default(), Execution::Sequential);
    let oracle = synth.oracle();
    let pick = |_: StrategyKind| &oracle as &dyn VerificationOracle;
    let budgets: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let mut group = c.benchmark_group("cost_surface");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(name, sigs.len()), &exec, |b, &exec| {
            b.iter(|| {
                cost_surface(&sigs, &corpus.queries, &StrategyKind::ALL, &budgets, EntropyScore::MeanEntropy, &pick, exec)
                    .unwrap()
            });
        });
    }
    group.finish();
}

fn persistence(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let clouds: Vec<PointCloud> = (0..64)
        .map(|_| {
            let pts = (0..40).map(|_| (0..8).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
            PointCloud::new(pts).unwrap()
        })
        .collect();
    let mut group = c.benchmark_group("rips_h1");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(name, clouds.len()), &exec, |b, &exec| {
            b.iter(|| exec.map(&clouds, |cl| rips_persistence(cl, 1, None).unwrap()));
        });
    }
    group.finish();
}

criterion_group!(benches, signals, surface, persistence);
criterion_main!(benches);
