use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::frozen::export_policy;
use crate::amp::{route_batch, update_discriminators, DiscriminatorPair, Mode, ReferenceMotions};
use crate::clips::{
    generate_getup_clip, generate_run_clip, generate_walk_clip, load_clip, save_clip, ClipConfig, FeatureTable, LyingStart,
    MotionClip,
};
use crate::error::{Error, Result};
use crate::ppo::{collect_rollout, ppo_update, Agent, EnvSlot, PpoOptimizer, PpoStats, RolloutBuffer, RolloutContext};
use crate::sim::BipedModel;

pub const METRICS_COLUMNS: [&str; 14] = [
    "iteration",
    "mean_task_reward",
    "mean_style_reward_rec",
    "mean_style_reward_loco",
    "frac_rec_gated",
    "disc_loss_rec",
    "disc_loss_loco",
    "policy_loss",
    "value_loss",
    "entropy",
    "approx_kl",
    "clip_frac",
    "mean_tracking_error",
    "episodes_completed",
];

pub const CLIP_FILES: [&str; 4] = ["walk.json", "run.json", "getup_prone.json", "getup_supine.json"];

/// One row of the metrics file.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub mean_task_reward: f64,
    pub mean_style_reward_rec: f64,
    pub mean_style_reward_loco: f64,
    pub frac_rec_gated: f64,
    pub disc_loss_rec: f64,
    pub disc_loss_loco: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub mean_tracking_error: f64,
    pub episodes_completed: usize,
}

impl IterationMetrics {
    pub fn csv_header() -> String {
        METRICS_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        let f = [
            self.mean_task_reward,
            self.mean_style_reward_rec,
            self.mean_style_reward_loco,
            self.frac_rec_gated,
            self.disc_loss_rec,
            self.disc_loss_loco,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.approx_kl,
            self.clip_frac,
            self.mean_tracking_error,
        ];
        let mut row = self.iteration.to_string();
        for v in f {
            row.push(',');
            row.push_str(&v.to_string());
        }
        row.push(',');
        row.push_str(&self.episodes_completed.to_string());
        row
    }

    /// Rollout-side columns. Means over an empty subset are reported as 0.
    fn from_buffer(iteration: usize, buffer: &RolloutBuffer) -> Self {
        let mean = |xs: &mut dyn Iterator<Item = f64>| {
            let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
            if n == 0 {
                0.0
            } else {
                s / n as f64
            }
        };
        let valid = || buffer.records.iter().filter(|r| r.valid);
        IterationMetrics {
            iteration,
            mean_task_reward: mean(&mut valid().map(|r| r.task_reward)),
            mean_style_reward_rec: mean(&mut valid().filter(|r| r.mode == Mode::Rec).map(|r| r.style_reward)),
            mean_style_reward_loco: mean(&mut valid().filter(|r| r.mode == Mode::Loco).map(|r| r.style_reward)),
            frac_rec_gated: mean(&mut buffer.records.iter().map(|r| (r.mode == Mode::Rec) as u8 as f64)),
            mean_tracking_error: mean(&mut valid().filter(|r| r.mode == Mode::Loco).map(|r| r.tracking_error)),
            episodes_completed: buffer.episodes_completed,
            ..Default::default()
        }
    }

    fn with_update(mut self, stats: &PpoStats) -> Self {
        self.policy_loss = stats.policy_loss;
        self.value_loss = stats.value_loss;
        self.entropy = stats.entropy;
        self.approx_kl = stats.approx_kl;
        self.clip_frac = stats.clip_frac;
        self
    }
}

/// Serialized training state sufficient for export and inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub seed: u64,
    pub model: BipedModel,
    pub agent: Agent,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }
}

fn generate_all(model: &BipedModel, cfg: &ClipConfig) -> Result<[MotionClip; 4]> {
    Ok([
        generate_walk_clip(model, cfg)?,
        generate_run_clip(model, cfg)?,
        generate_getup_clip(model, LyingStart::Prone, cfg)?,
        generate_getup_clip(model, LyingStart::Supine, cfg)?,
    ])
}

/// Writes the walk, run and both get-up clips into `out_dir`.
pub fn gen_clips(model: &BipedModel, cfg: &ClipConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let clips = generate_all(model, cfg)?;
    let mut paths = Vec::new();
    for (clip, file) in clips.iter().zip(CLIP_FILES) {
        clip.validate(model)?;
        let path = out_dir.join(file);
        save_clip(clip, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn reference_motions(cfg: &TrainConfig) -> Result<ReferenceMotions> {
    let [walk, run, prone, supine] = match &cfg.clips_dir {
        Some(dir) => {
            let load = |f: &str| load_clip(&dir.join(f), &cfg.model);
            [load(CLIP_FILES[0])?, load(CLIP_FILES[1])?, load(CLIP_FILES[2])?, load(CLIP_FILES[3])?]
        }
        None => generate_all(&cfg.model, &cfg.clips)?,
    };
    Ok(ReferenceMotions {
        recovery: vec![FeatureTable::new(&cfg.model, prone)?, FeatureTable::new(&cfg.model, supine)?],
        walk: FeatureTable::new(&cfg.model, walk)?,
        run: FeatureTable::new(&cfg.model, run)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub iterations: usize,
    pub metrics_path: PathBuf,
    pub policy_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub integration_errors: usize,
    pub last: IterationMetrics,
}

struct Trainer {
    cfg: TrainConfig,
    refs: ReferenceMotions,
    agent: Agent,
    opt: PpoOptimizer,
    disc: DiscriminatorPair,
    envs: Vec<EnvSlot>,
    rng: ChaCha8Rng,
    integration_errors: usize,
}

impl Trainer {
    fn new(cfg: TrainConfig) -> Result<Self> {
        let refs = reference_motions(&cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let agent = Agent::new(&cfg.ppo, &mut rng);
        let opt = PpoOptimizer::new(&agent, &cfg.ppo);
        let disc = DiscriminatorPair::new(&cfg.disc, &mut rng);
        let envs = (0..cfg.ppo.num_envs).map(|i| EnvSlot::new(&cfg.model, &cfg.episodes, cfg.seed, i)).collect();
        Ok(Trainer {
            cfg,
            refs,
            agent,
            opt,
            disc,
            envs,
            rng,
            integration_errors: 0,
        })
    }

    /// collect_rollout, update_discriminators, ppo_update.
    fn iterate(&mut self, iteration: usize) -> Result<IterationMetrics> {
        let cfg = &self.cfg;
        let ctx = RolloutContext {
            model: &cfg.model,
            weights: &cfg.rewards,
            rec_weights: cfg.rec_rewards.as_ref(),
            amp: &cfg.amp,
            gate: &cfg.gate,
            episodes: &cfg.episodes,
        };
        let buffer = collect_rollout(&mut self.envs, &self.agent, &self.disc, &ctx, cfg.ppo.horizon)?;
        self.integration_errors += buffer.integration_errors;
        let metrics = IterationMetrics::from_buffer(iteration, &buffer);

        let gated = buffer.gated_transitions();
        self.disc.observe(&gated);
        let (rec, loco) = route_batch(&gated, &cfg.gate);
        let upd = update_discriminators(&mut self.disc, &rec, &loco, &self.refs, &mut self.rng)?;

        let stats = ppo_update(&mut self.agent, &mut self.opt, &buffer, &cfg.ppo, &mut self.rng)?;
        self.agent
            .obs_norm
            .update(buffer.records.iter().map(|r| r.observation.as_slice()));

        let mut m = metrics.with_update(&stats);
        m.disc_loss_rec = upd.rec.map_or(0.0, |s| s.loss);
        m.disc_loss_loco = upd.loco.map_or(0.0, |s| s.loss);
        Ok(m)
    }

    fn checkpoint(&self, iteration: usize) -> Checkpoint {
        Checkpoint {
            iteration,
            seed: self.cfg.seed,
            model: self.cfg.model.clone(),
            agent: self.agent.clone(),
        }
    }
}

/// Full training run writing `metrics.csv`, checkpoints, `config.toml` and
/// the frozen `policy.bin` into `out_dir`. Metrics rows are flushed as they
/// are produced, so an aborted run leaves a valid partial file.
pub fn train(cfg: &TrainConfig, out_dir: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    if cfg.single_thread {
        let cfg = cfg.clone();
        let out = out_dir.to_path_buf();
        crate::par::single_threaded(move || train_inner(&cfg, &out))
    } else {
        train_inner(cfg, out_dir)
    }
}

fn train_inner(cfg: &TrainConfig, out_dir: &Path) -> Result<TrainSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cfg_path = out_dir.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()?).map_err(|e| Error::io(&cfg_path, e))?;
    let ckpt_dir = out_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;

    let metrics_path = out_dir.join("metrics.csv");
    let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    let io = |e| Error::io(out_dir.join("metrics.csv"), e);
    writeln!(metrics, "{}", IterationMetrics::csv_header()).map_err(io)?;
    metrics.flush().map_err(io)?;

    let mut trainer = Trainer::new(cfg.clone()).map_err(|e| Error::TrainingAborted {
        iteration: 0,
        source: Box::new(e),
    })?;
    let mut last = IterationMetrics::default();
    for it in 1..=cfg.iterations {
        last = trainer.iterate(it).map_err(|e| Error::TrainingAborted {
            iteration: it,
            source: Box::new(e),
        })?;
        writeln!(metrics, "{}", last.csv_row()).map_err(io)?;
        metrics.flush().map_err(io)?;
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
            trainer.checkpoint(it).save(&ckpt_dir.join(format!("iter_{it:06}.json")))?;
        }
    }

    let checkpoint_path = ckpt_dir.join("final.json");
    trainer.checkpoint(cfg.iterations).save(&checkpoint_path)?;
    let policy_path = out_dir.join("policy.bin");
    export_policy(&trainer.agent, &cfg.model, &policy_path)?;
    Ok(TrainSummary {
        iterations: cfg.iterations,
        metrics_path,
        policy_path,
        checkpoint_path,
        integration_errors: trainer.integration_errors,
        last,
    })
}
