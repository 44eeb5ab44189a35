//! Deployment-side rollouts of a frozen policy and the evaluation suites.
//!
//! Nothing here consults the training-time gate: the frozen network alone
//! drives the robot through recovery and locomotion.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::frozen::FrozenPolicy;
use crate::error::{Error, Result};
use crate::rewards::{compute_task_reward, RewardTerms, RewardWeights};
use crate::sim::{self, make_obs_frame, BipedModel, InitMode, ObsHistory, NJ, NQ};

/// Tilt and height bounds of the recovery proxy.
pub const RECOVERY_MAX_PITCH: f64 = 0.3;
pub const RECOVERY_HEIGHT_FRACTION: f64 = 0.8;
pub const RECOVERY_HOLD_SECONDS: f64 = 3.0;
pub const RECOVERY_WINDOW_SECONDS: f64 = 10.0;
/// Tracking error ignores this initial settling period.
pub const TRACKING_SETTLE_SECONDS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub init: InitMode,
    /// `(start time in s, command in m/s)`, sorted by time.
    pub schedule: Vec<(f64, f64)>,
    pub steps: usize,
    pub seed: u64,
}

pub const PRESET_NAMES: [&str; 8] = [
    "stand",
    "walk",
    "run",
    "prone_recovery",
    "supine_recovery",
    "supine_walk_run",
    "prone_walk_run",
    "track:<v>",
];

impl Scenario {
    fn new(name: &str, init: InitMode, schedule: Vec<(f64, f64)>, steps: usize) -> Self {
        Scenario {
            name: name.to_string(),
            init,
            schedule,
            steps,
            seed: 0,
        }
    }

    /// Named presets; `track:<v>` is an upright start at constant command `v`.
    pub fn preset(name: &str) -> Result<Self> {
        let walk_run = vec![(0.0, 0.0), (4.0, 0.8), (8.0, 2.5)];
        Ok(match name {
            "stand" => Scenario::new(name, InitMode::Upright, vec![(0.0, 0.0)], 500),
            "walk" => Scenario::new(name, InitMode::Upright, vec![(0.0, 0.8)], 500),
            "run" => Scenario::new(name, InitMode::Upright, vec![(0.0, 2.5)], 500),
            "prone_recovery" => Scenario::new(name, InitMode::Prone, vec![(0.0, 0.0)], 500),
            "supine_recovery" => Scenario::new(name, InitMode::Supine, vec![(0.0, 0.0)], 500),
            "supine_walk_run" => Scenario::new(name, InitMode::Supine, walk_run, 600),
            "prone_walk_run" => Scenario::new(name, InitMode::Prone, walk_run, 600),
            _ => {
                let v = name
                    .strip_prefix("track:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::UnknownPreset(name.to_string()))?;
                Scenario::new(name, InitMode::Upright, vec![(0.0, v)], 500)
            }
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn command_at(&self, time: f64) -> f64 {
        self.schedule
            .iter()
            .take_while(|(t, _)| *t <= time + 1e-9)
            .last()
            .map_or(0.0, |(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub time: f64,
    pub q: [f64; NQ],
    pub qd: [f64; NQ],
    pub action: [f64; NJ],
    pub gravity_z: f64,
    pub command: f64,
    pub terms: RewardTerms,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolloutSummary {
    pub scenario: String,
    pub seed: u64,
    pub steps_completed: usize,
    pub mean_tracking_error: f64,
    pub recovered: bool,
    pub time_to_recover: Option<f64>,
    pub blowup: bool,
}

/// Upright-hold detector for the recovery proxy.
#[derive(Debug, Clone)]
pub struct RecoveryMonitor {
    min_height: f64,
    hold_steps: usize,
    window_steps: usize,
    run: usize,
    step: usize,
    recovered_at: Option<usize>,
}

impl RecoveryMonitor {
    pub fn new(model: &BipedModel) -> Self {
        let dt = model.dt_ctrl();
        RecoveryMonitor {
            min_height: RECOVERY_HEIGHT_FRACTION * model.standing_height(),
            hold_steps: (RECOVERY_HOLD_SECONDS / dt).round() as usize,
            window_steps: (RECOVERY_WINDOW_SECONDS / dt).round() as usize,
            run: 0,
            step: 0,
            recovered_at: None,
        }
    }

    /// Feeds the state reached after one control step.
    pub fn observe(&mut self, pitch: f64, root_z: f64) {
        self.step += 1;
        if self.step > self.window_steps || self.recovered_at.is_some() {
            return;
        }
        if pitch.abs() < RECOVERY_MAX_PITCH && root_z > self.min_height {
            self.run += 1;
            if self.run >= self.hold_steps {
                self.recovered_at = Some(self.step - self.run);
            }
        } else {
            self.run = 0;
        }
    }

    /// Step count before the qualifying hold began, if any.
    pub fn recovered_at(&self) -> Option<usize> {
        self.recovered_at
    }
}

/// Runs `frozen` deterministically through `scenario`.
pub fn rollout_frozen(
    frozen: &FrozenPolicy,
    model: &BipedModel,
    weights: &RewardWeights,
    scenario: &Scenario,
) -> Result<(Vec<TraceRow>, RolloutSummary)> {
    let dt = model.dt_ctrl();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut state = sim::reset(model, scenario.init, scenario.command_at(0.0), &mut rng);
    let mut history = ObsHistory::filled(make_obs_frame(model, &state));
    let mut monitor = RecoveryMonitor::new(model);
    let mut trace = Vec::with_capacity(scenario.steps);
    let settle = (TRACKING_SETTLE_SECONDS / dt).round() as usize;
    let (mut err_sum, mut err_n) = (0.0, 0usize);
    let mut blowup = false;

    for k in 0..scenario.steps {
        state.command = scenario.command_at(k as f64 * dt);
        let action = frozen.act(&history.observation())?;
        let (next, info) = match sim::step(model, &state, &action) {
            Ok(r) => r,
            Err(Error::IntegrationBlowup { .. }) => {
                blowup = true;
                break;
            }
            Err(e) => return Err(e),
        };
        state = next;
        let terms = compute_task_reward(&state, &action, &info.torques, weights);
        if k >= settle {
            err_sum += (state.qd[0] - state.command).abs();
            err_n += 1;
        }
        monitor.observe(state.q[2], state.q[1]);
        trace.push(TraceRow {
            time: state.time,
            q: state.q,
            qd: state.qd,
            action: state.prev_action,
            gravity_z: state.gravity_z(),
            command: state.command,
            terms,
        });
        history.push(make_obs_frame(model, &state));
    }

    let recovered_at = if blowup { None } else { monitor.recovered_at() };
    let summary = RolloutSummary {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        steps_completed: trace.len(),
        mean_tracking_error: if err_n > 0 { err_sum / err_n as f64 } else { 0.0 },
        recovered: recovered_at.is_some(),
        time_to_recover: recovered_at.map(|s| s as f64 * dt),
        blowup,
    };
    Ok((trace, summary))
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut out = String::from("time");
    for i in 0..NQ {
        out.push_str(&format!(",q{i}"));
    }
    for i in 0..NQ {
        out.push_str(&format!(",qd{i}"));
    }
    for i in 0..NJ {
        out.push_str(&format!(",action{i}"));
    }
    out.push_str(",g_z,command,r_cmd,r_smooth,r_posture,r_energy,r_fall,r_task\n");
    for r in rows {
        out.push_str(&r.time.to_string());
        for v in r.q.iter().chain(&r.qd).chain(&r.action) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        let t = &r.terms;
        for v in [r.gravity_z, r.command, t.cmd, t.smooth, t.posture, t.energy, t.fall, t.total] {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalKind {
    Sweep,
    Prone,
    Supine,
    Continuity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub kind: EvalKind,
    pub command: Option<f64>,
    #[serde(flatten)]
    pub summary: RolloutSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    /// Mean tracking error over the sweep commands inside [-0.5, 1.0] m/s.
    pub sweep_tracking_error: f64,
    pub prone_success_rate: f64,
    pub supine_success_rate: f64,
    pub prone_trials: usize,
    pub supine_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub suite: String,
    pub summary: EvalSummary,
    pub rows: Vec<EvalRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub sweep: Vec<f64>,
    pub recovery_trials: usize,
    pub continuity: Vec<&'static str>,
}

pub const SUITE_NAMES: [&str; 3] = ["standard", "quick", "fast"];
const NORMAL_SWEEP: [f64; 7] = [-0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0];

impl Suite {
    pub fn preset(name: &str) -> Result<Self> {
        let continuity = vec!["supine_walk_run", "prone_walk_run"];
        Ok(match name {
            "standard" => Suite {
                sweep: NORMAL_SWEEP.to_vec(),
                recovery_trials: 20,
                continuity,
            },
            "quick" => Suite {
                sweep: vec![-0.5, 0.25, 1.0],
                recovery_trials: 2,
                continuity: vec!["supine_walk_run"],
            },
            "fast" => Suite {
                sweep: NORMAL_SWEEP.iter().copied().chain([-1.5, -1.0, 1.5, 2.0, 2.5, 3.0]).collect(),
                recovery_trials: 20,
                continuity,
            },
            other => return Err(Error::UnknownPreset(other.to_string())),
        })
    }
}

/// Runs a suite; scenarios are independent and may run in parallel.
pub fn evaluate(frozen: &FrozenPolicy, model: &BipedModel, weights: &RewardWeights, suite_name: &str) -> Result<EvalReport> {
    let suite = Suite::preset(suite_name)?;
    let mut jobs: Vec<(EvalKind, Option<f64>, Scenario)> = Vec::new();
    for &v in &suite.sweep {
        jobs.push((EvalKind::Sweep, Some(v), Scenario::preset(&format!("track:{v}"))?));
    }
    for k in 0..suite.recovery_trials as u64 {
        jobs.push((EvalKind::Prone, None, Scenario::preset("prone_recovery")?.with_seed(k)));
        jobs.push((EvalKind::Supine, None, Scenario::preset("supine_recovery")?.with_seed(k)));
    }
    for name in &suite.continuity {
        jobs.push((EvalKind::Continuity, None, Scenario::preset(name)?));
    }
    let results = crate::par::map_indexed(jobs.len(), |i| rollout_frozen(frozen, model, weights, &jobs[i].2).map(|(_, s)| s));
    let mut rows = Vec::with_capacity(jobs.len());
    for ((kind, command, _), summary) in jobs.into_iter().zip(results) {
        rows.push(EvalRow {
            kind,
            command,
            summary: summary?,
        });
    }

    let rate = |kind: EvalKind| {
        let sel: Vec<&EvalRow> = rows.iter().filter(|r| r.kind == kind).collect();
        let ok = sel.iter().filter(|r| r.summary.recovered).count();
        (if sel.is_empty() { 0.0 } else { ok as f64 / sel.len() as f64 }, sel.len())
    };
    let normal: Vec<f64> = rows
        .iter()
        .filter(|r| r.kind == EvalKind::Sweep && r.command.is_some_and(|v| (-0.5..=1.0).contains(&v)))
        .map(|r| if r.summary.blowup { f64::INFINITY } else { r.summary.mean_tracking_error })
        .collect();
    let (prone_success_rate, prone_trials) = rate(EvalKind::Prone);
    let (supine_success_rate, supine_trials) = rate(EvalKind::Supine);
    Ok(EvalReport {
        suite: suite_name.to_string(),
        summary: EvalSummary {
            sweep_tracking_error: normal.iter().sum::<f64>() / normal.len().max(1) as f64,
            prone_success_rate,
            supine_success_rate,
            prone_trials,
            supine_trials,
        },
        rows,
    })
}

/// Writes `report.json` and `eval.csv` into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Serde(e.to_string()))?;
    let path = dir.join("report.json");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;

    let path = dir.join("eval.csv");
    let mut out = Vec::new();
    let io = |e| Error::io(dir.join("eval.csv"), e);
    writeln!(out, "kind,scenario,seed,command,steps_completed,mean_tracking_error,recovered,time_to_recover,blowup").map_err(io)?;
    for r in &report.rows {
        let s = &r.summary;
        let kind = match r.kind {
            EvalKind::Sweep => "sweep",
            EvalKind::Prone => "prone",
            EvalKind::Supine => "supine",
            EvalKind::Continuity => "continuity",
        };
        writeln!(
            out,
            "{kind},{},{},{},{},{},{},{},{}",
            s.scenario,
            s.seed,
            r.command.map_or(String::new(), |v| v.to_string()),
            s.steps_completed,
            s.mean_tracking_error,
            s.recovered,
            s.time_to_recover.map_or(String::new(), |v| v.to_string()),
            s.blowup
        )
        .map_err(io)?;
    }
    std::fs::write(&path, out).map_err(|e| Error::io(&path, e))
}
