use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mfmix::equilibrium::solve_mi;
use mfmix::exec::ExecMode;
use mfmix::sim::{estimate_epsilon_nash_mi_with, simulate_mi_with, DeviationFamily, SimConfig};
use mfmix::{MiParams, TimeGrid, Variant};

fn modes() -> [(&'static str, ExecMode); 2] {
    [("parallel", ExecMode::Parallel), ("sequential", ExecMode::Sequential)]
}

fn monte_carlo(c: &mut Criterion) {
    let params = MiParams::unit(0.5);
    let grid = TimeGrid::new(params.horizon, 1000).unwrap();
    let (_, policy) = solve_mi(&params, &grid, Variant::FbsdeConsistent).unwrap();

    let mut g = c.benchmark_group("simulate_mi");
    g.sample_size(10);
    for n_agents in [100, 1000] {
        let cfg = SimConfig { n_agents, n_runs: 64, n_steps: 200, seed: 1 };
        for (name, mode) in modes() {
            g.bench_with_input(BenchmarkId::new(name, n_agents), &cfg, |b, cfg| {
                b.iter(|| simulate_mi_with(&params, &policy, cfg, mode).unwrap())
            });
        }
    }
    g.finish();

    let mut g = c.benchmark_group("epsilon_nash_mi");
    g.sample_size(10);
    let cfg = SimConfig { n_agents: 100, n_runs: 32, n_steps: 200, seed: 1 };
    let family = DeviationFamily::default();
    for (name, mode) in modes() {
        g.bench_function(name, |b| {
            b.iter(|| estimate_epsilon_nash_mi_with(&params, &policy, &cfg, &family, mode).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, monte_carlo);
criterion_main!(benches);
