//! PPO with GAE over a vector of biped environments.
//!
//! Rollout collection is where the pieces meet: each step acts with the
//! policy, advances the simulator, gates the transition on `g_z` at `s_t`,
//! scores it with the selected discriminator and composes the total reward.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::amp::{gate, normalize_command, total_reward, AmpConfig, DiscriminatorPair, GateConfig, GatedTransition, Mode};
use crate::clips::{state_feature, Transition, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::nets::{adam_step, Activation, AdamConfig, AdamState, MlpParams, ParamGrads, VecAdam};
use crate::normalizer::RunningStats;
use crate::par;
use crate::rewards::{compute_task_reward, RewardWeights};
use crate::sim::{self, make_obs_frame, BipedModel, InitMode, ObsHistory, SimState, NJ, OBS_DIM, OBS_FRAME_DIM};

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda_gae: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub horizon: usize,
    pub num_envs: usize,
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub init_std: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            lambda_gae: 0.95,
            clip: 0.2,
            epochs: 5,
            minibatches: 4,
            value_coef: 0.5,
            entropy_coef: 0.005,
            lr: 3e-4,
            max_grad_norm: 1.0,
            horizon: 64,
            num_envs: 64,
            policy_hidden: vec![128, 128, 64],
            value_hidden: vec![128, 128, 64],
            hidden_activation: Activation::Elu,
            init_std: 0.8,
            log_std_min: -4.0,
            log_std_max: 1.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("ppo.{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("gamma", self.gamma)?;
        unit("lambda_gae", self.lambda_gae)?;
        if !(self.clip > 0.0) {
            return Err(Error::Config("ppo.clip must be positive".into()));
        }
        if self.epochs == 0 || self.minibatches == 0 || self.horizon == 0 || self.num_envs == 0 {
            return Err(Error::Config("ppo epochs, minibatches, horizon and num_envs must be positive".into()));
        }
        if self.minibatches > self.horizon * self.num_envs {
            return Err(Error::Config("ppo.minibatches exceeds the batch size".into()));
        }
        if !(self.init_std > 0.0) || !(self.log_std_min < self.log_std_max) {
            return Err(Error::Config("ppo std bounds are inconsistent".into()));
        }
        if !(self.lr > 0.0 && self.max_grad_norm > 0.0) {
            return Err(Error::Config("ppo.lr and ppo.max_grad_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Diagonal Gaussian policy with state-independent log-std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyHead {
    pub mean: MlpParams,
    pub log_std: [f64; NJ],
}

/// Policy, value function and observation statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub policy: PolicyHead,
    pub value: MlpParams,
    pub obs_norm: RunningStats,
}

fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(cfg: &PpoConfig, rng: &mut R) -> Self {
        let mean = MlpParams::init(&dims(OBS_DIM, &cfg.policy_hidden, NJ), cfg.hidden_activation, Activation::Identity, 0.01, rng);
        let value = MlpParams::init(&dims(OBS_DIM, &cfg.value_hidden, 1), cfg.hidden_activation, Activation::Identity, 1.0, rng);
        Agent {
            policy: PolicyHead {
                mean,
                log_std: [cfg.init_std.ln(); NJ],
            },
            value,
            obs_norm: RunningStats::new(OBS_DIM, 5.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActOutput {
    /// Pre-clamp sample; the log-probability refers to this value.
    pub raw_action: [f64; NJ],
    /// Sample clamped to `[-1, 1]`, as sent to the environment.
    pub action: [f64; NJ],
    pub log_prob: f64,
    pub value: f64,
}

pub fn gaussian_log_prob(x: &[f64; NJ], mean: &[f64], log_std: &[f64; NJ]) -> f64 {
    (0..NJ)
        .map(|j| {
            let z = (x[j] - mean[j]) * (-log_std[j]).exp();
            -0.5 * z * z - log_std[j] - 0.5 * LOG_2PI
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64; NJ]) -> f64 {
    log_std.iter().map(|l| l + 0.5 * (LOG_2PI + 1.0)).sum()
}

/// Acts on a raw observation. `rng = None` returns the mean action.
pub fn policy_act<R: Rng + ?Sized>(agent: &Agent, observation: &[f64], rng: Option<&mut R>) -> Result<ActOutput> {
    if observation.len() != OBS_DIM {
        return Err(Error::DimensionMismatch {
            context: "policy observation",
            expected: OBS_DIM,
            actual: observation.len(),
        });
    }
    let x = agent.obs_norm.normalize(observation);
    let mean = agent.policy.mean.forward(&x)?;
    let value = agent.value.forward(&x)?[0];
    if !mean.iter().all(|m| m.is_finite()) {
        return Err(Error::NonFiniteOutput("policy mean"));
    }
    if !value.is_finite() {
        return Err(Error::NonFiniteOutput("value"));
    }
    let mut raw = [0.0; NJ];
    match rng {
        Some(rng) => {
            for j in 0..NJ {
                let eps: f64 = StandardNormal.sample(rng);
                raw[j] = mean[j] + agent.policy.log_std[j].exp() * eps;
            }
        }
        None => raw.copy_from_slice(&mean),
    }
    Ok(ActOutput {
        raw_action: raw,
        action: raw.map(|a| a.clamp(-1.0, 1.0)),
        log_prob: gaussian_log_prob(&raw, &mean, &agent.policy.log_std),
        value,
    })
}

/// Advantages and returns: `δ_t = r_t + γ V_{t+1} (1 - done_t) - V_t`,
/// `A_t = δ_t + γ λ (1 - done_t) A_{t+1}`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    for (len, context) in [(values.len(), "gae values"), (dones.len(), "gae dones")] {
        if len != n {
            return Err(Error::DimensionMismatch {
                context,
                expected: n,
                actual: len,
            });
        }
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Episode initialization: command ranges and initial-pose mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub episode_steps: usize,
    pub normal_range: [f64; 2],
    pub fast_range: [f64; 2],
    pub fast_prob: f64,
    /// Probabilities of upright, prone and supine starts.
    pub init_probs: [f64; 3],
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            episode_steps: 500,
            normal_range: [-0.5, 1.0],
            fast_range: [-1.5, 3.0],
            fast_prob: 0.3,
            init_probs: [0.6, 0.2, 0.2],
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episode_steps == 0 {
            return Err(Error::Config("episode_steps must be positive".into()));
        }
        for r in [self.normal_range, self.fast_range] {
            if !(r[0] <= r[1]) {
                return Err(Error::Config("command ranges must be ordered [lo, hi]".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.fast_prob) {
            return Err(Error::Config("fast_prob must lie in [0, 1]".into()));
        }
        let total: f64 = self.init_probs.iter().sum();
        if self.init_probs.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config("init_probs must be non-negative and sum to 1".into()));
        }
        Ok(())
    }

    pub fn sample_command<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let r = if rng.random::<f64>() < self.fast_prob {
            self.fast_range
        } else {
            self.normal_range
        };
        if r[0] == r[1] {
            r[0]
        } else {
            rng.random_range(r[0]..r[1])
        }
    }

    pub fn sample_init_mode<R: Rng + ?Sized>(&self, rng: &mut R) -> InitMode {
        let u = rng.random::<f64>();
        if u < self.init_probs[0] {
            InitMode::Upright
        } else if u < self.init_probs[0] + self.init_probs[1] {
            InitMode::Prone
        } else {
            InitMode::Supine
        }
    }
}

/// Per-step reward context shared by all environments.
#[derive(Debug, Clone)]
pub struct RolloutContext<'a> {
    pub model: &'a BipedModel,
    pub weights: &'a RewardWeights,
    /// Optional weights used instead of `weights` on recovery-gated steps.
    pub rec_weights: Option<&'a RewardWeights>,
    pub amp: &'a AmpConfig,
    pub gate: &'a GateConfig,
    pub episodes: &'a EpisodeConfig,
}

/// One independently seeded environment.
#[derive(Debug, Clone)]
pub struct EnvSlot {
    pub state: SimState,
    pub history: ObsHistory,
    pub rng: ChaCha8Rng,
    pub episode_step: usize,
    pub init_mode: InitMode,
}

impl EnvSlot {
    /// Stream seeded as `seed * 10007 + index`. The first episode starts at
    /// a random step so that resets are spread over time.
    pub fn new(model: &BipedModel, episodes: &EpisodeConfig, seed: u64, index: usize) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(10007).wrapping_add(index as u64));
        let state = sim::reset(model, InitMode::Upright, 0.0, &mut ChaCha8Rng::seed_from_u64(0));
        let mut slot = EnvSlot {
            history: ObsHistory::filled(make_obs_frame(model, &state)),
            state,
            rng,
            episode_step: 0,
            init_mode: InitMode::Upright,
        };
        slot.reset(model, episodes);
        slot.episode_step = slot.rng.random_range(0..episodes.episode_steps);
        slot
    }

    pub fn reset(&mut self, model: &BipedModel, episodes: &EpisodeConfig) {
        let mode = episodes.sample_init_mode(&mut self.rng);
        let cmd = episodes.sample_command(&mut self.rng);
        self.reset_with(model, mode, cmd);
    }

    pub fn reset_with(&mut self, model: &BipedModel, mode: InitMode, command: f64) {
        self.state = sim::reset(model, mode, command, &mut self.rng);
        self.history = ObsHistory::filled(make_obs_frame(model, &self.state));
        self.episode_step = 0;
        self.init_mode = mode;
    }
}

/// One environment step as stored for PPO and the discriminators.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub observation: Vec<f64>,
    pub raw_action: [f64; NJ],
    pub log_prob: f64,
    pub value: f64,
    pub task_reward: f64,
    pub style_reward: f64,
    pub reward: f64,
    pub mode: Mode,
    pub gravity_z: f64,
    pub v_hat: f64,
    pub done: bool,
    pub feat_t: [f64; FEATURE_DIM],
    pub feat_t1: [f64; FEATURE_DIM],
    /// False when the step blew up and the transition is meaningless.
    pub valid: bool,
    pub tracking_error: f64,
    /// Step started an episode with a lying (prone/supine) initial pose.
    pub from_lying_start: bool,
}

/// `horizon x num_envs` records, row index `t * num_envs + env`.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub horizon: usize,
    pub num_envs: usize,
    pub records: Vec<StepRecord>,
    pub bootstrap_values: Vec<f64>,
    pub integration_errors: usize,
    pub episodes_completed: usize,
}

impl RolloutBuffer {
    pub fn at(&self, t: usize, env: usize) -> &StepRecord {
        &self.records[t * self.num_envs + env]
    }

    /// Policy transitions with their gate inputs, skipping blown-up steps.
    pub fn gated_transitions(&self) -> Vec<GatedTransition> {
        self.records
            .iter()
            .filter(|r| r.valid)
            .map(|r| GatedTransition {
                feat_t: r.feat_t,
                feat_t1: r.feat_t1,
                gravity_z: r.gravity_z,
                v_hat: r.v_hat,
            })
            .collect()
    }

    /// Advantages and returns in row order.
    pub fn advantages(&self, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.records.len();
        let mut adv = vec![0.0; n];
        let mut ret = vec![0.0; n];
        for e in 0..self.num_envs {
            let idx: Vec<usize> = (0..self.horizon).map(|t| t * self.num_envs + e).collect();
            let rewards: Vec<f64> = idx.iter().map(|&i| self.records[i].reward).collect();
            let values: Vec<f64> = idx.iter().map(|&i| self.records[i].value).collect();
            let dones: Vec<bool> = idx.iter().map(|&i| self.records[i].done).collect();
            let (a, r) = compute_gae(&rewards, &values, &dones, self.bootstrap_values[e], gamma, lambda)?;
            for (k, &i) in idx.iter().enumerate() {
                adv[i] = a[k];
                ret[i] = r[k];
            }
        }
        Ok((adv, ret))
    }
}

struct SlotOutcome {
    record: StepRecord,
    error: bool,
    episode_done: bool,
}

fn step_slot(slot: &mut EnvSlot, agent: &Agent, disc: &DiscriminatorPair, ctx: &RolloutContext) -> Result<SlotOutcome> {
    let observation = slot.history.observation();
    let act = policy_act(agent, &observation, Some(&mut slot.rng))?;
    let s_t = slot.state.clone();
    // Gate on the g_z the policy observes; recomputing it can differ by an ulp
    // when the compiler fuses sin and cos.
    let gravity_z = observation[OBS_DIM - OBS_FRAME_DIM + 2];
    let mode = gate(gravity_z, ctx.gate);
    let v_hat = normalize_command(s_t.command, ctx.amp.v_max);
    let feat_t = state_feature(ctx.model, &s_t);
    let from_lying_start = slot.init_mode != InitMode::Upright;

    let (record, error) = match sim::step(ctx.model, &s_t, &act.action) {
        Ok((s_next, info)) => {
            let feat_t1 = state_feature(ctx.model, &s_next);
            let transition = Transition {
                feat_t,
                feat_t1,
                condition: None,
            };
            let condition = (mode == Mode::Loco).then_some(v_hat);
            let style = disc.style_reward(&transition, mode, condition)?;
            let weights = match (mode, ctx.rec_weights) {
                (Mode::Rec, Some(w)) => w,
                _ => ctx.weights,
            };
            let terms = compute_task_reward(&s_next, &act.action, &info.torques, weights);
            let tracking_error = (s_next.qd[0] - s_next.command).abs();
            slot.state = s_next;
            (
                StepRecord {
                    observation,
                    raw_action: act.raw_action,
                    log_prob: act.log_prob,
                    value: act.value,
                    task_reward: terms.total,
                    style_reward: style,
                    reward: total_reward(terms.total, style, ctx.amp.lambda_amp),
                    mode,
                    gravity_z,
                    v_hat,
                    done: false,
                    feat_t,
                    feat_t1,
                    valid: true,
                    tracking_error,
                    from_lying_start,
                },
                false,
            )
        }
        Err(Error::IntegrationBlowup { .. }) => (
            StepRecord {
                observation,
                raw_action: act.raw_action,
                log_prob: act.log_prob,
                value: act.value,
                task_reward: 0.0,
                style_reward: 0.0,
                reward: 0.0,
                mode,
                gravity_z,
                v_hat,
                done: true,
                feat_t,
                feat_t1: feat_t,
                valid: false,
                tracking_error: 0.0,
                from_lying_start,
            },
            true,
        ),
        Err(e) => return Err(e),
    };

    let mut record = record;
    slot.episode_step += 1;
    let episode_done = error || slot.episode_step >= ctx.episodes.episode_steps;
    if episode_done {
        record.done = true;
        slot.reset(ctx.model, ctx.episodes);
    } else {
        slot.history.push(make_obs_frame(ctx.model, &slot.state));
    }
    Ok(SlotOutcome {
        record,
        error,
        episode_done,
    })
}

/// Steps every environment `horizon` times against fixed policy and
/// discriminator snapshots.
pub fn collect_rollout(
    envs: &mut [EnvSlot],
    agent: &Agent,
    disc: &DiscriminatorPair,
    ctx: &RolloutContext,
    horizon: usize,
) -> Result<RolloutBuffer> {
    let n = envs.len();
    let mut records = Vec::with_capacity(horizon * n);
    let mut integration_errors = 0;
    let mut episodes_completed = 0;
    for _ in 0..horizon {
        let mut outcomes: Vec<Option<Result<SlotOutcome>>> = (0..n).map(|_| None).collect();
        {
            let mut pairs: Vec<(&mut EnvSlot, &mut Option<Result<SlotOutcome>>)> = envs.iter_mut().zip(outcomes.iter_mut()).collect();
            par::for_each_mut(&mut pairs, |_, (slot, out)| {
                **out = Some(step_slot(slot, agent, disc, ctx));
            });
        }
        for out in outcomes {
            let out = out.expect("every slot stepped")?;
            integration_errors += out.error as usize;
            episodes_completed += out.episode_done as usize;
            records.push(out.record);
        }
    }
    let bootstrap_values = par::map_indexed(n, |e| {
        let x = agent.obs_norm.normalize(&envs[e].history.observation());
        agent.value.forward(&x).map(|v| v[0])
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    Ok(RolloutBuffer {
        horizon,
        num_envs: n,
        records,
        bootstrap_values,
        integration_errors,
        episodes_completed,
    })
}

/// Optimizer state for the policy mean, log-std and value networks.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoOptimizer {
    pub policy: AdamState,
    pub log_std: VecAdam,
    pub value: AdamState,
}

impl PpoOptimizer {
    pub fn new(agent: &Agent, cfg: &PpoConfig) -> Self {
        let adam = AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        };
        PpoOptimizer {
            policy: AdamState::new(&agent.policy.mean, adam),
            log_std: VecAdam::new(NJ, adam),
            value: AdamState::new(&agent.value, adam),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub grad_norm: f64,
}

/// Mean over a batch of zero, unit-variance rescaled values.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if n == 0.0 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var.sqrt() + 1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - mean) * inv);
}

/// Clipped surrogate `min(r A, clip(r) A)` and whether its gradient flows
/// through `r`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

struct MinibatchPartial {
    policy: ParamGrads,
    log_std: [f64; NJ],
    value: ParamGrads,
    surrogate: f64,
    value_sq: f64,
    kl: f64,
    clipped: usize,
}

/// Several epochs of minibatch PPO on a full buffer whose rewards are already
/// composed.
pub fn ppo_update<R: Rng + ?Sized>(
    agent: &mut Agent,
    opt: &mut PpoOptimizer,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<PpoStats> {
    let (mut adv, returns) = buffer.advantages(cfg.gamma, cfg.lambda_gae)?;
    normalize_advantages(&mut adv);
    let inputs: Vec<Vec<f64>> = buffer.records.iter().map(|r| agent.obs_norm.normalize(&r.observation)).collect();
    let n = buffer.records.len();
    let mb_size = n / cfg.minibatches;
    let mut order: Vec<usize> = (0..n).collect();
    let mut totals = PpoStats::default();
    let mut n_updates = 0usize;
    let mut n_samples = 0usize;

    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for mb in 0..cfg.minibatches {
            let idx = &order[mb * mb_size..(mb + 1) * mb_size];
            let m = idx.len() as f64;
            let policy_net = &agent.policy.mean;
            let value_net = &agent.value;
            let log_std = agent.policy.log_std;
            let inv_var: [f64; NJ] = log_std.map(|l| (-2.0 * l).exp());
            let part = par::map_reduce_chunks(
                idx.len(),
                64,
                |range| -> Result<MinibatchPartial> {
                    let mut p = MinibatchPartial {
                        policy: ParamGrads::zeros_like(policy_net),
                        log_std: [0.0; NJ],
                        value: ParamGrads::zeros_like(value_net),
                        surrogate: 0.0,
                        value_sq: 0.0,
                        kl: 0.0,
                        clipped: 0,
                    };
                    for &i in &idx[range] {
                        let rec = &buffer.records[i];
                        let x = &inputs[i];
                        let pc = policy_net.forward_cached(x)?;
                        let mean = pc.output();
                        let logp = gaussian_log_prob(&rec.raw_action, mean, &log_std);
                        let log_ratio = logp - rec.log_prob;
                        let ratio = log_ratio.exp();
                        let (surr, flows) = clipped_surrogate(ratio, adv[i], cfg.clip);
                        p.surrogate += surr;
                        p.kl += (ratio - 1.0) - log_ratio;
                        p.clipped += ((ratio - 1.0).abs() > cfg.clip) as usize;
                        if flows {
                            // d(-r A / m)/d logp = -r A / m
                            let dlogp = -ratio * adv[i] / m;
                            let mut up = [0.0; NJ];
                            for j in 0..NJ {
                                let diff = rec.raw_action[j] - mean[j];
                                up[j] = dlogp * diff * inv_var[j];
                                p.log_std[j] += dlogp * (diff * diff * inv_var[j] - 1.0);
                            }
                            policy_net.backward_accumulate(&pc, &up, &mut p.policy)?;
                        }
                        let vc = value_net.forward_cached(x)?;
                        let err = vc.output()[0] - returns[i];
                        p.value_sq += err * err;
                        value_net.backward_accumulate(&vc, &[2.0 * cfg.value_coef * err / m], &mut p.value)?;
                    }
                    Ok(p)
                },
                |a, b| {
                    if let (Ok(a), Ok(b)) = (a.as_mut(), b.as_ref()) {
                        a.policy.add_assign(&b.policy);
                        a.value.add_assign(&b.value);
                        for j in 0..NJ {
                            a.log_std[j] += b.log_std[j];
                        }
                        a.surrogate += b.surrogate;
                        a.value_sq += b.value_sq;
                        a.kl += b.kl;
                        a.clipped += b.clipped;
                    } else if a.is_ok() {
                        *a = b;
                    }
                },
            )
            .expect("minibatch is non-empty")?;

            let MinibatchPartial {
                mut policy,
                log_std: mut g_log_std,
                mut value,
                surrogate,
                value_sq,
                kl,
                clipped,
            } = part;
            let policy_loss = -surrogate / m;
            let value_loss = value_sq / m;
            let entropy = gaussian_entropy(&log_std);
            if !(policy_loss.is_finite() && value_loss.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    what: "ppo minibatch",
                    diagnostics: format!("minibatch={mb} size={} policy_loss={policy_loss} value_loss={value_loss}", idx.len()),
                });
            }
            // Entropy bonus: d(-c H)/d log_std = -c.
            g_log_std.iter_mut().for_each(|g| *g -= cfg.entropy_coef);

            let norm = (policy.norm_sq() + value.norm_sq() + g_log_std.iter().map(|g| g * g).sum::<f64>()).sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    what: "ppo gradient",
                    diagnostics: format!("minibatch={mb} gradient norm={norm}"),
                });
            }
            if norm > cfg.max_grad_norm {
                let s = cfg.max_grad_norm / norm;
                policy.scale(s);
                value.scale(s);
                g_log_std.iter_mut().for_each(|g| *g *= s);
            }
            adam_step(&mut agent.policy.mean, &policy, &mut opt.policy)?;
            adam_step(&mut agent.value, &value, &mut opt.value)?;
            opt.log_std.step(&mut agent.policy.log_std, &g_log_std);
            for l in agent.policy.log_std.iter_mut() {
                *l = l.clamp(cfg.log_std_min, cfg.log_std_max);
            }

            totals.policy_loss += policy_loss;
            totals.value_loss += value_loss;
            totals.entropy += entropy;
            totals.approx_kl += kl;
            totals.clip_frac += clipped as f64;
            totals.grad_norm += norm;
            n_updates += 1;
            n_samples += idx.len();
        }
    }
    let u = n_updates as f64;
    let s = n_samples as f64;
    Ok(PpoStats {
        policy_loss: totals.policy_loss / u,
        value_loss: totals.value_loss / u,
        entropy: totals.entropy / u,
        approx_kl: totals.approx_kl / s,
        clip_frac: totals.clip_frac / s,
        grad_norm: totals.grad_norm / u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gae_simple_cases() {
        let (a, r) = compute_gae(&[0.0; 5], &[0.0; 5], &[false; 5], 0.0, 0.99, 0.95).unwrap();
        assert!(a.iter().chain(&r).all(|v| *v == 0.0));

        let (a, _) = compute_gae(&[1.0], &[0.0], &[false], 0.5, 0.99, 0.95).unwrap();
        assert!((a[0] - 1.495).abs() < 1e-12);

        let rewards = [0.3, -1.0, 2.0];
        let values = [0.1, 0.4, -0.2];
        let (a, _) = compute_gae(&rewards, &values, &[false, true, false], 7.0, 0.0, 0.9).unwrap();
        for t in 0..3 {
            assert!((a[t] - (rewards[t] - values[t])).abs() < 1e-15);
        }
        assert!(compute_gae(&[1.0, 2.0], &[0.0], &[false, false], 0.0, 0.9, 0.9).is_err());
    }

    #[test]
    fn mean_action_log_prob() {
        let log_std = [0.8f64.ln(); NJ];
        let mean = [0.1, -0.2, 0.3, 0.0, 0.5, -0.5];
        let lp = gaussian_log_prob(&mean, &mean, &log_std);
        let expected: f64 = (0..NJ).map(|_| -(0.8 * (2.0 * std::f64::consts::PI).sqrt()).ln()).sum();
        assert!((lp - expected).abs() < 1e-12);
    }

    #[test]
    fn entropy_closed_form() {
        let h = gaussian_entropy(&[0.8f64.ln(); NJ]);
        let expected = 6.0 * 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * 0.64).ln();
        assert!((h - expected).abs() < 1e-12);
    }

    #[test]
    fn surrogate_clipping() {
        let (v, flows) = clipped_surrogate(1.5, 2.0, 0.2);
        assert!((v - 2.4).abs() < 1e-12);
        assert!(!flows);
        let (v, flows) = clipped_surrogate(1.0, -0.7, 0.2);
        assert_eq!(v, -0.7);
        assert!(flows);
        let (v, flows) = clipped_surrogate(0.5, -1.0, 0.2);
        assert!((v + 0.8).abs() < 1e-12);
        assert!(!flows);
    }

    #[test]
    fn unit_ratio_surrogate_is_zero_after_normalization() {
        let mut adv: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 3.0 + 1.0).collect();
        normalize_advantages(&mut adv);
        let surrogate: f64 = adv.iter().map(|a| clipped_surrogate(1.0, *a, 0.2).0).sum::<f64>() / 50.0;
        assert!(surrogate.abs() < 1e-12);
        let var = adv.iter().map(|a| a * a).sum::<f64>() / 50.0;
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn deterministic_act_and_zero_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = PpoConfig {
            policy_hidden: vec![16],
            value_hidden: vec![16],
            ..PpoConfig::default()
        };
        let mut agent = Agent::new(&cfg, &mut rng);
        let obs = vec![0.3; OBS_DIM];
        let a = policy_act::<ChaCha8Rng>(&agent, &obs, None).unwrap();
        let b = policy_act::<ChaCha8Rng>(&agent, &obs, None).unwrap();
        assert_eq!(a, b);
        agent.policy.mean = MlpParams::zeros(&agent.policy.mean.layer_dims, Activation::Elu, Activation::Identity);
        let z = policy_act::<ChaCha8Rng>(&agent, &obs, None).unwrap();
        assert_eq!(z.action, [0.0; NJ]);
        assert!(policy_act::<ChaCha8Rng>(&agent, &obs[..10], None).is_err());
    }

    #[test]
    fn episode_config_sampling() {
        let cfg = EpisodeConfig::default();
        cfg.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            let c = cfg.sample_command(&mut rng);
            assert!((-1.5..=3.0).contains(&c));
            counts[cfg.sample_init_mode(&mut rng) as usize] += 1;
        }
        assert!((counts[0] as f64 / 10_000.0 - 0.6).abs() < 0.03);
        let bad = EpisodeConfig {
            init_probs: [0.5, 0.5, 0.5],
            ..EpisodeConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
