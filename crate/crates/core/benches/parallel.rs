//! Data-parallel helpers against a plain sequential map on the two workloads
//! they are used for: constant-coupling sweeps and batches of random episodes.
//! Build with `--no-default-features` to time the sequential fallback itself.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use magcool_core::baselines::log_spaced;
use magcool_core::env::DEFAULT_DT;
use magcool_core::schedule::simulate;
use magcool_core::{
    par, thermal_covariance, BipartiteParams, Complex64, ControlSchedule, CoolingEnv, EnvConfig, TripartiteParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sweep(c: &mut Criterion) {
    let sys = BipartiteParams::default().build().unwrap();
    let grid = log_spaced(0.02, 0.3, 15);
    let s0 = thermal_covariance(&sys);
    let run = |g: &f64| {
        let sched = ControlSchedule::constant(&[Complex64::new(*g, 0.0)], 500, DEFAULT_DT).unwrap();
        simulate(&sys, &sched, &s0).unwrap().last().unwrap().occupancies()[1]
    };
    let mut group = c.benchmark_group("sideband_sweep");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("par", grid.len()), |b| b.iter(|| par::map(&grid, run)));
    group.bench_function(BenchmarkId::new("seq", grid.len()), |b| b.iter(|| grid.iter().map(run).collect::<Vec<_>>()));
    group.finish();
}

fn episodes(c: &mut Criterion) {
    let env = EnvConfig::tripartite(&TripartiteParams::default(), 150.0, 10.0).unwrap();
    let run = |k: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let mut e = CoolingEnv::new(env.clone()).unwrap();
        e.run_episode(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .unwrap()
            .net_reward()
    };
    let n = 32;
    let mut group = c.benchmark_group("random_episodes");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("par", n), |b| b.iter(|| par::map_range(n, run)));
    group.bench_function(BenchmarkId::new("seq", n), |b| b.iter(|| (0..n).map(run).collect::<Vec<_>>()));
    group.finish();
}

criterion_group!(benches, sweep, episodes);
criterion_main!(benches);
