//! State-dependent motion prior.
//!
//! Each transition is routed by a fixed projected-gravity gate to one of two
//! discriminators: a recovery discriminator over `[s_t, s_t+1]` and a
//! locomotion discriminator over `[s_t, s_t+1, v̂]`. The style reward is
//! `-log(1 - D)` of the selected discriminator, and the training reward is
//! `R_task + λ_amp · R_style`.

use std::cell::Cell;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clips::{sample_reference_loco_tagged, BehaviorTag, FeatureTable, Transition, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::nets::{adam_step, AdamConfig, AdamState, Activation, MlpParams, ParamGrads};
use crate::normalizer::RunningStats;
use crate::par;

pub const REC_INPUT_DIM: usize = 2 * FEATURE_DIM;
pub const LOCO_INPUT_DIM: usize = 2 * FEATURE_DIM + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Rec,
    Loco,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub threshold: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig { threshold: 0.6 }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 2.0) {
            return Err(Error::Config(format!("gate threshold must lie in (0, 2), got {}", self.threshold)));
        }
        Ok(())
    }
}

thread_local! {
    static GATE_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of gate evaluations performed on the current thread.
pub fn gate_call_count() -> u64 {
    GATE_CALLS.with(Cell::get)
}

/// `rec` iff `|g_z + 1| > threshold` (strict).
pub fn gate(gravity_z: f64, cfg: &GateConfig) -> Mode {
    GATE_CALLS.with(|c| c.set(c.get() + 1));
    if (gravity_z + 1.0).abs() > cfg.threshold {
        Mode::Rec
    } else {
        Mode::Loco
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmpConfig {
    pub lambda_amp: f64,
    pub v_max: f64,
}

impl Default for AmpConfig {
    fn default() -> Self {
        AmpConfig {
            lambda_amp: 0.5,
            v_max: 3.0,
        }
    }
}

impl AmpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_amp >= 0.0 && self.lambda_amp.is_finite()) {
            return Err(Error::Config("lambda_amp must be non-negative".into()));
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(Error::Config("v_max must be positive".into()));
        }
        Ok(())
    }
}

/// `clamp(v_cmd / v_max, 0, 1)`; backward commands map to 0.
pub fn normalize_command(v_cmd: f64, v_max: f64) -> f64 {
    (v_cmd / v_max).clamp(0.0, 1.0)
}

pub fn total_reward(task: f64, style: f64, lambda_amp: f64) -> f64 {
    task + lambda_amp * style
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lambda_gp: f64,
    /// Clamp applied to D before the log in the style reward.
    pub reward_eps: f64,
    pub optimizer: AdamConfig,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            lambda_gp: 10.0,
            reward_eps: 1e-4,
            optimizer: AdamConfig {
                lr: 5e-4,
                ..AdamConfig::default()
            },
        }
    }
}

impl DiscConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reward_eps > 0.0 && self.reward_eps <= 0.01) {
            return Err(Error::Config(format!("reward_eps must lie in (0, 0.01], got {}", self.reward_eps)));
        }
        if !(self.lambda_gp >= 0.0) {
            return Err(Error::Config("lambda_gp must be non-negative".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("discriminator hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Style reward for a clamped discriminator output.
pub fn style_reward_from_d(d: f64, eps: f64) -> f64 {
    let d = d.clamp(eps, 1.0 - eps);
    -(1.0 - d).ln()
}

/// Loss statistics from one discriminator update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiscStepStats {
    /// `0.5 * (BCE_ref + BCE_policy) + λ_gp · GP`.
    pub loss: f64,
    pub bce_reference: f64,
    pub bce_policy: f64,
    pub grad_penalty: f64,
    pub accuracy: f64,
    pub mean_d_reference: f64,
    pub mean_d_policy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorPair {
    pub rec: MlpParams,
    pub loco: MlpParams,
    /// Shared statistics over the 40 transition feature slots.
    pub normalizer: RunningStats,
    pub lambda_gp: f64,
    pub reward_eps: f64,
    pub rec_adam: AdamState,
    pub loco_adam: AdamState,
}

fn disc_dims(input: usize, hidden: &[usize]) -> Vec<usize> {
    let mut d = vec![input];
    d.extend_from_slice(hidden);
    d.push(1);
    d
}

impl DiscriminatorPair {
    pub fn new<R: Rng + ?Sized>(cfg: &DiscConfig, rng: &mut R) -> Self {
        let rec = MlpParams::init(&disc_dims(REC_INPUT_DIM, &cfg.hidden), cfg.activation, Activation::Sigmoid, 1.0, rng);
        let loco = MlpParams::init(&disc_dims(LOCO_INPUT_DIM, &cfg.hidden), cfg.activation, Activation::Sigmoid, 1.0, rng);
        let rec_adam = AdamState::new(&rec, cfg.optimizer);
        let loco_adam = AdamState::new(&loco, cfg.optimizer);
        DiscriminatorPair {
            rec,
            loco,
            normalizer: RunningStats::new(REC_INPUT_DIM, 10.0),
            lambda_gp: cfg.lambda_gp,
            reward_eps: cfg.reward_eps,
            rec_adam,
            loco_adam,
        }
    }

    pub fn net(&self, mode: Mode) -> &MlpParams {
        match mode {
            Mode::Rec => &self.rec,
            Mode::Loco => &self.loco,
        }
    }

    /// Normalized discriminator input; `condition` is appended unnormalized.
    pub fn input(&self, features: &[f64; REC_INPUT_DIM], condition: Option<f64>) -> Vec<f64> {
        let mut x = vec![0.0; REC_INPUT_DIM + condition.is_some() as usize];
        self.normalizer.normalize_into(features, &mut x[..REC_INPUT_DIM]);
        if let Some(v) = condition {
            x[REC_INPUT_DIM] = v;
        }
        x
    }

    fn check_contract(mode: Mode, condition: Option<f64>) -> Result<()> {
        match (mode, condition) {
            (Mode::Rec, None) => Ok(()),
            (Mode::Loco, Some(v)) if (0.0..=1.0).contains(&v) => Ok(()),
            (Mode::Loco, Some(v)) => Err(Error::ConditionOutOfRange(v)),
            (Mode::Rec, Some(_)) => Err(Error::ModeContract("recovery discriminator takes no condition")),
            (Mode::Loco, None) => Err(Error::ModeContract("locomotion discriminator requires a condition")),
        }
    }

    /// Raw discriminator probability for a transition in `mode`.
    pub fn probability(&self, features: &[f64; REC_INPUT_DIM], mode: Mode, condition: Option<f64>) -> Result<f64> {
        Self::check_contract(mode, condition)?;
        let x = self.input(features, condition);
        Ok(self.net(mode).forward(&x)?[0])
    }

    /// `-log(1 - clamp(D, ε, 1-ε))` from the discriminator selected by `mode`.
    pub fn style_reward(&self, transition: &Transition, mode: Mode, v_hat: Option<f64>) -> Result<f64> {
        if !transition.is_finite() {
            return Err(Error::NonFiniteOutput("style reward input"));
        }
        let d = self.probability(&transition.concat(), mode, v_hat)?;
        Ok(style_reward_from_d(d, self.reward_eps))
    }

    /// One Adam step of BCE plus reference-side gradient penalty for the
    /// discriminator of `mode`. Transitions must carry conditions iff `mode`
    /// is `Loco`. An empty side skips the update.
    pub fn train_step(&mut self, mode: Mode, policy: &[Transition], reference: &[Transition]) -> Result<Option<DiscStepStats>> {
        if policy.is_empty() || reference.is_empty() {
            return Ok(None);
        }
        for t in policy.iter().chain(reference) {
            Self::check_contract(mode, t.condition)?;
        }
        let pol: Vec<Vec<f64>> = policy.iter().map(|t| self.input(&t.concat(), t.condition)).collect();
        let refs: Vec<Vec<f64>> = reference.iter().map(|t| self.input(&t.concat(), t.condition)).collect();
        let lambda_gp = self.lambda_gp;
        let (net, adam) = match mode {
            Mode::Rec => (&mut self.rec, &mut self.rec_adam),
            Mode::Loco => (&mut self.loco, &mut self.loco_adam),
        };
        let (grads, stats) = bce_gp_gradient(net, &refs, &pol, lambda_gp)?;
        if !stats.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                what: "discriminator",
                diagnostics: format!(
                    "mode={mode:?} n_ref={} n_pol={} bce_ref={} bce_pol={} gp={}",
                    refs.len(),
                    pol.len(),
                    stats.bce_reference,
                    stats.bce_policy,
                    stats.grad_penalty
                ),
            });
        }
        adam_step(net, &grads, adam)?;
        Ok(Some(stats))
    }

    /// Folds policy transitions of either mode into the shared feature
    /// statistics.
    pub fn observe(&mut self, batch: &[GatedTransition]) {
        let rows: Vec<[f64; REC_INPUT_DIM]> = batch
            .iter()
            .map(|t| {
                let mut r = [0.0; REC_INPUT_DIM];
                r[..FEATURE_DIM].copy_from_slice(&t.feat_t);
                r[FEATURE_DIM..].copy_from_slice(&t.feat_t1);
                r
            })
            .collect();
        self.normalizer.update(rows.iter().map(|r| r.as_slice()));
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

struct Partial {
    grads: ParamGrads,
    bce: f64,
    gp: f64,
    correct: usize,
    d_sum: f64,
}

/// Gradient and statistics of `0.5 (BCE_ref + BCE_pol) + λ_gp · mean ‖∇ₓD(x_ref)‖²`.
pub fn bce_gp_gradient(
    net: &MlpParams,
    reference: &[Vec<f64>],
    policy: &[Vec<f64>],
    lambda_gp: f64,
) -> Result<(ParamGrads, DiscStepStats)> {
    const CHUNK: usize = 64;
    let n_ref = reference.len() as f64;
    let n_pol = policy.len() as f64;
    let reduce = |a: &mut Result<Partial>, b: Result<Partial>| {
        if let (Ok(a), Ok(b)) = (a.as_mut(), b.as_ref()) {
            a.grads.add_assign(&b.grads);
            a.bce += b.bce;
            a.gp += b.gp;
            a.correct += b.correct;
            a.d_sum += b.d_sum;
        } else if let (Ok(_), Err(_)) = (&a, &b) {
            *a = b;
        }
    };

    // Reference side: label 1, plus the gradient penalty.
    let ref_part = par::map_reduce_chunks(
        reference.len(),
        CHUNK,
        |range| -> Result<Partial> {
            let mut p = Partial {
                grads: ParamGrads::zeros_like(net),
                bce: 0.0,
                gp: 0.0,
                correct: 0,
                d_sum: 0.0,
            };
            for x in &reference[range] {
                let cache = net.forward_cached(x)?;
                let logit = cache.output_preactivation()[0];
                let d = cache.output()[0];
                p.bce += softplus(-logit);
                p.d_sum += d;
                p.correct += (d > 0.5) as usize;
                // d/dlogit softplus(-logit) = sigmoid(logit) - 1
                net.backward_from_preactivation(&cache, vec![(d - 1.0) / (2.0 * n_ref)], &mut p.grads);
                if lambda_gp > 0.0 {
                    let mut scratch = ParamGrads::zeros_like(net);
                    let g = net.backward_accumulate(&cache, &[1.0], &mut scratch)?;
                    let norm_sq = net.directional_param_grad(&cache, &g, 2.0 * lambda_gp / n_ref, &mut p.grads)?;
                    p.gp += norm_sq;
                }
            }
            Ok(p)
        },
        reduce,
    )
    .expect("non-empty reference batch")?;

    let pol_part = par::map_reduce_chunks(
        policy.len(),
        CHUNK,
        |range| -> Result<Partial> {
            let mut p = Partial {
                grads: ParamGrads::zeros_like(net),
                bce: 0.0,
                gp: 0.0,
                correct: 0,
                d_sum: 0.0,
            };
            for x in &policy[range] {
                let cache = net.forward_cached(x)?;
                let logit = cache.output_preactivation()[0];
                let d = cache.output()[0];
                p.bce += softplus(logit);
                p.d_sum += d;
                p.correct += (d < 0.5) as usize;
                net.backward_from_preactivation(&cache, vec![d / (2.0 * n_pol)], &mut p.grads);
            }
            Ok(p)
        },
        reduce,
    )
    .expect("non-empty policy batch")?;

    let mut grads = ref_part.grads;
    grads.add_assign(&pol_part.grads);
    let bce_reference = ref_part.bce / n_ref;
    let bce_policy = pol_part.bce / n_pol;
    let grad_penalty = ref_part.gp / n_ref;
    let stats = DiscStepStats {
        loss: 0.5 * (bce_reference + bce_policy) + lambda_gp * grad_penalty,
        bce_reference,
        bce_policy,
        grad_penalty,
        accuracy: (ref_part.correct + pol_part.correct) as f64 / (n_ref + n_pol),
        mean_d_reference: ref_part.d_sum / n_ref,
        mean_d_policy: pol_part.d_sum / n_pol,
    };
    Ok((grads, stats))
}

/// A policy transition before routing: features, `g_z` at `s_t`, and the
/// episode's normalized command.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedTransition {
    pub feat_t: [f64; FEATURE_DIM],
    pub feat_t1: [f64; FEATURE_DIM],
    pub gravity_z: f64,
    pub v_hat: f64,
}

/// Stable partition by the gate. Locomotion outputs carry `v̂`, recovery
/// outputs carry no condition.
pub fn route_batch(batch: &[GatedTransition], cfg: &GateConfig) -> (Vec<Transition>, Vec<Transition>) {
    let mut rec = Vec::new();
    let mut loco = Vec::new();
    for t in batch {
        match gate(t.gravity_z, cfg) {
            Mode::Rec => rec.push(Transition {
                feat_t: t.feat_t,
                feat_t1: t.feat_t1,
                condition: None,
            }),
            Mode::Loco => loco.push(Transition {
                feat_t: t.feat_t,
                feat_t1: t.feat_t1,
                condition: Some(t.v_hat),
            }),
        }
    }
    (rec, loco)
}

/// Reference data: pooled recovery clips plus the walk and run clips.
#[derive(Debug, Clone)]
pub struct ReferenceMotions {
    pub recovery: Vec<FeatureTable>,
    pub walk: FeatureTable,
    pub run: FeatureTable,
}

impl ReferenceMotions {
    /// Uniform over all transitions of all recovery clips.
    pub fn sample_recovery<R: Rng + ?Sized>(&self, rng: &mut R) -> Transition {
        let total: usize = self.recovery.iter().map(FeatureTable::num_transitions).sum();
        let mut k = rng.random_range(0..total);
        for table in &self.recovery {
            if k < table.num_transitions() {
                return table.transition(k);
            }
            k -= table.num_transitions();
        }
        unreachable!("index below pooled total")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiscUpdate {
    pub rec: Option<DiscStepStats>,
    pub loco: Option<DiscStepStats>,
    pub walk_references: usize,
    pub run_references: usize,
}

/// One update of each discriminator on this iteration's routed policy
/// transitions, with one freshly drawn reference per policy sample.
pub fn update_discriminators<R: Rng + ?Sized>(
    pair: &mut DiscriminatorPair,
    rec_batch: &[Transition],
    loco_batch: &[Transition],
    refs: &ReferenceMotions,
    rng: &mut R,
) -> Result<DiscUpdate> {
    let mut out = DiscUpdate::default();
    if !rec_batch.is_empty() {
        let reference: Vec<Transition> = (0..rec_batch.len()).map(|_| refs.sample_recovery(rng)).collect();
        out.rec = pair.train_step(Mode::Rec, rec_batch, &reference)?;
    }
    if !loco_batch.is_empty() {
        let mut reference = Vec::with_capacity(loco_batch.len());
        for t in loco_batch {
            let v_hat = t.condition.ok_or(Error::ModeContract("locomotion batch entry without condition"))?;
            let (r, tag) = sample_reference_loco_tagged(&refs.walk, &refs.run, v_hat, rng)?;
            match tag {
                BehaviorTag::Run => out.run_references += 1,
                _ => out.walk_references += 1,
            }
            reference.push(r);
        }
        out.loco = pair.train_step(Mode::Loco, loco_batch, &reference)?;
    }
    Ok(out)
}
