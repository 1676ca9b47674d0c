use criterion::{criterion_group, criterion_main, Criterion};

use chainsync_core::sim::{run_simulation, SimOptions};
use chainsync_core::{LinkPreset, ModelConfig, TimingMode};

fn simulate(c: &mut Criterion) {
    let mut cfg = ModelConfig::with_preset(LinkPreset::TechB);
    cfg.link.p_e_dl = 0.2;
    let mut group = c.benchmark_group("simulate_10k");
    for mode in [TimingMode::Expected, TimingMode::Stochastic] {
        group.bench_function(mode.to_string(), |b| {
            b.iter(|| run_simulation(&cfg, 7, 10_000, SimOptions::with_timing(mode)))
        });
    }
    group.finish();
}

criterion_group!(benches, simulate);
criterion_main!(benches);
