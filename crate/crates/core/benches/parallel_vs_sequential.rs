//! Compares the rayon pool against a one-thread pool on the hot paths.
//! Build with `--no-default-features` to time the sequential fallback itself.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gamp::amp::{AmpConfig, DiscConfig, DiscriminatorPair, GateConfig};
use gamp::par;
use gamp::ppo::{collect_rollout, ppo_update, Agent, EnvSlot, EpisodeConfig, PpoConfig, PpoOptimizer, RolloutContext};
use gamp::rewards::RewardWeights;
use gamp::sim::BipedModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const NUM_ENVS: usize = 64;
const HORIZON: usize = 16;

fn mode_label() -> &'static str {
    if par::is_parallel() {
        "rayon"
    } else {
        "sequential"
    }
}

fn run<T: Send>(single: bool, f: impl FnOnce() -> T + Send) -> T {
    if single {
        par::single_threaded(f)
    } else {
        f()
    }
}

fn bench_rollout_and_update(c: &mut Criterion) {
    let model = BipedModel::default();
    let weights = RewardWeights::default();
    let amp = AmpConfig::default();
    let gate = GateConfig::default();
    let episodes = EpisodeConfig::default();
    let cfg = PpoConfig {
        num_envs: NUM_ENVS,
        horizon: HORIZON,
        ..PpoConfig::default()
    };
    let ctx = RolloutContext {
        model: &model,
        weights: &weights,
        rec_weights: None,
        amp: &amp,
        gate: &gate,
        episodes: &episodes,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let agent = Agent::new(&cfg, &mut rng);
    let disc = DiscriminatorPair::new(&DiscConfig::default(), &mut rng);
    let fresh_envs = || -> Vec<EnvSlot> { (0..NUM_ENVS).map(|i| EnvSlot::new(&model, &episodes, 0, i)).collect() };
    let buffer = collect_rollout(&mut fresh_envs(), &agent, &disc, &ctx, HORIZON).unwrap();

    let mut group = c.benchmark_group("collect_rollout");
    group.sample_size(10);
    for single in [false, true] {
        let id = BenchmarkId::new(mode_label(), if single { "1 thread" } else { "pool" });
        group.bench_function(id, |b| {
            b.iter_batched(
                fresh_envs,
                |mut envs| run(single, || collect_rollout(&mut envs, &agent, &disc, &ctx, HORIZON).unwrap()),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    group.finish();

    let mut group = c.benchmark_group("ppo_update");
    group.sample_size(10);
    for single in [false, true] {
        let id = BenchmarkId::new(mode_label(), if single { "1 thread" } else { "pool" });
        group.bench_function(id, |b| {
            b.iter_batched(
                || (agent.clone(), PpoOptimizer::new(&agent, &cfg), ChaCha8Rng::seed_from_u64(1)),
                |(mut a, mut opt, mut r)| run(single, || ppo_update(&mut a, &mut opt, &buffer, &cfg, &mut r).unwrap()),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, bench_rollout_and_update);
criterion_main!(benches);
