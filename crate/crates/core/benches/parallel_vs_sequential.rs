//! Rollout collection and deterministic evaluation on the Experiment I scene,
//! once on the calling thread and once on a worker pool.

use std::path::PathBuf;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use langreach::config::ExperimentConfig;
use langreach::parallel::Executor;
use langreach::ppo::{collect_rollouts, evaluate_policy, RunningRewardStats};
use langreach::train::initial_params;

fn exp1() -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/exp1.cfg");
    ExperimentConfig::load(&path).expect("shipped config")
}

fn executors() -> Vec<(String, Executor)> {
    let n = std::thread::available_parallelism().map_or(2, |n| n.get()).max(2);
    vec![
        ("sequential".into(), Executor::sequential()),
        (format!("parallel-{n}"), Executor::new(n)),
    ]
}

fn rollouts(c: &mut Criterion) {
    let cfg = exp1();
    let setup = cfg.setup();
    let params = initial_params(&setup, cfg.seed).unwrap();
    let seeds: Vec<u64> = (0..cfg.trainer.rollouts as u64).collect();
    let mut group = c.benchmark_group("collect_rollouts");
    group.sample_size(10).measurement_time(Duration::from_secs(10));
    for (name, exec) in executors() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut stats = RunningRewardStats::default();
                collect_rollouts(&params, &setup, &seeds, &mut stats, &exec).unwrap()
            })
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let cfg = exp1();
    let setup = cfg.setup();
    let params = initial_params(&setup, cfg.seed).unwrap();
    let mut group = c.benchmark_group("evaluate_policy");
    group.sample_size(10).measurement_time(Duration::from_secs(10));
    for (name, exec) in executors() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate_policy(&params, &setup, cfg.trainer.eval_episodes, &exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, rollouts, evaluation);
criterion_main!(benches);
