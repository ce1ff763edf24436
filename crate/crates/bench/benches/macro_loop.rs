use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use crm_bench::{chain_descriptor, drift_descriptor, gnb_config};
use crm_core::{BoundConfig, MacroState};

fn bench_run_loop(c: &mut Criterion) {
    let chain = chain_descriptor(0.8, 42).generate(5_000).unwrap();
    let drift = drift_descriptor(500, 42).generate(2_000).unwrap();

    let mut group = c.benchmark_group("run_loop");
    group.bench_function("zero_bound_5k", |b| {
        b.iter(|| {
            let mut state =
                MacroState::new(gnb_config(2, 0, 0.5), BoundConfig::Zero).unwrap();
            black_box(state.run(black_box(&chain)).unwrap())
        })
    });
    group.bench_function("markov_indicator_5k", |b| {
        b.iter(|| {
            let mut state =
                MacroState::new(gnb_config(2, 0, 0.5), BoundConfig::MarkovIndicator).unwrap();
            black_box(state.run(black_box(&chain)).unwrap())
        })
    });
    group.bench_function("feature_window_d1_2k", |b| {
        b.iter(|| {
            let bound = BoundConfig::FeatureWindowD1 {
                window_len: 5,
                missing_class_penalty: true,
            };
            let mut state = MacroState::new(gnb_config(2, 1, 0.5), bound).unwrap();
            black_box(state.run(black_box(&drift)).unwrap())
        })
    });
    group.finish();
}

criterion_group!(benches, bench_run_loop);
criterion_main!(benches);
