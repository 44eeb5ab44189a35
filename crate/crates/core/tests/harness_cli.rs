use std::path::Path;
use std::process::Command;

use gamp::harness::eval::{evaluate, rollout_frozen, Scenario};
use gamp::harness::frozen::FrozenPolicy;
use gamp::harness::train::{Checkpoint, METRICS_COLUMNS};
use gamp::harness::{train, TrainConfig};
use gamp::ppo::{Agent, PpoConfig};
use gamp::rewards::RewardWeights;
use gamp::sim::BipedModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.ppo.num_envs = 4;
    cfg.ppo.horizon = 16;
    cfg.ppo.policy_hidden = vec![16, 16];
    cfg.ppo.value_hidden = vec![16, 16];
    cfg.disc.hidden = vec![16];
    cfg.iterations = 3;
    cfg.checkpoint_every = 2;
    cfg.single_thread = true;
    cfg
}

fn metrics(dir: &Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), METRICS_COLUMNS.join(","));
    lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn smoke_run_writes_finite_metrics_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let summary = train(&tiny_config(), dir.path()).unwrap();
    let rows = metrics(dir.path());
    assert_eq!(rows.len(), 3);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), METRICS_COLUMNS.len());
        assert_eq!(r[0], (i + 1) as f64);
        assert!(r.iter().all(|v| v.is_finite()));
        assert!((0.0..=1.0).contains(&r[4]));
    }
    assert!(rows[0][4] > 0.0, "lying starts must be gated to recovery at iteration 1");
    assert!(dir.path().join("checkpoints/iter_000002.json").exists());
    assert!(summary.policy_path.exists());
    let ck = Checkpoint::load(&summary.checkpoint_path).unwrap();
    assert_eq!(ck.iteration, 3);
    let cfg = TrainConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(cfg.ppo.num_envs, 4);
}

#[test]
fn upright_only_start_is_never_gated_to_recovery_early() {
    let mut cfg = tiny_config();
    cfg.iterations = 1;
    cfg.ppo.horizon = 8;
    cfg.episodes.init_probs = [1.0, 0.0, 0.0];
    let dir = tempfile::tempdir().unwrap();
    train(&cfg, dir.path()).unwrap();
    assert_eq!(metrics(dir.path())[0][4], 0.0);
}

#[test]
fn invalid_config_aborts_before_training() {
    let mut cfg = tiny_config();
    cfg.ppo.gamma = 2.0;
    let dir = tempfile::tempdir().unwrap();
    assert!(train(&cfg, dir.path()).is_err());
    assert!(!dir.path().join("metrics.csv").exists());
}

#[test]
fn frozen_rollout_summary_is_finite() {
    let model = BipedModel::default();
    let agent = Agent::new(&PpoConfig::default(), &mut ChaCha8Rng::seed_from_u64(3));
    let frozen = FrozenPolicy::from_agent(&agent, &model);
    let (trace, s) = rollout_frozen(&frozen, &model, &RewardWeights::default(), &Scenario::preset("stand").unwrap()).unwrap();
    assert_eq!(trace.len(), 500);
    assert!(s.mean_tracking_error.is_finite());
    assert!(!s.blowup);
    let again = rollout_frozen(&frozen, &model, &RewardWeights::default(), &Scenario::preset("stand").unwrap()).unwrap();
    assert_eq!(trace, again.0);
}

#[test]
fn quick_suite_on_untrained_policy() {
    let model = BipedModel::default();
    let agent = Agent::new(&PpoConfig::default(), &mut ChaCha8Rng::seed_from_u64(4));
    let frozen = FrozenPolicy::from_agent(&agent, &model);
    let report = evaluate(&frozen, &model, &RewardWeights::default(), "quick").unwrap();
    let sweep = report.rows.iter().filter(|r| r.command.is_some()).count();
    assert_eq!(sweep, 3);
    assert_eq!(report.summary.prone_trials, 2);
    assert!(report.summary.sweep_tracking_error.is_finite());
    let dir = tempfile::tempdir().unwrap();
    gamp::harness::write_report(&report, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + report.rows.len());
    assert!(dir.path().join("report.json").exists());
}

fn gamp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gamp"))
}

#[test]
fn cli_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg_path = d.join("tiny.toml");
    std::fs::write(&cfg_path, tiny_config().to_toml_string().unwrap()).unwrap();

    let out = gamp().args(["gen-clips", "--config"]).arg(&cfg_path).arg("--out").arg(d.join("clips")).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_dir(d.join("clips")).unwrap().count(), 4);

    let run = d.join("run");
    let out = gamp()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&run)
        .args(["--seed", "5", "--iters", "2", "--single-thread"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(metrics(&run).len(), 2);

    let exported = d.join("exported.bin");
    let out = gamp()
        .arg("export")
        .arg("--checkpoint")
        .arg(run.join("checkpoints/final.json"))
        .arg("--out")
        .arg(&exported)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&exported).unwrap(), std::fs::read(run.join("policy.bin")).unwrap());

    let trace = d.join("trace.csv");
    let out = gamp()
        .arg("rollout")
        .arg("--policy")
        .arg(&exported)
        .args(["--scenario", "supine_walk_run", "--steps", "40", "--trace"])
        .arg(&trace)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&trace).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 1 + 9 + 9 + 6 + 1 + 1 + 6);
    assert_eq!(text.lines().count(), 41);

    let out = gamp()
        .arg("eval")
        .arg("--policy")
        .arg(&exported)
        .arg("--out")
        .arg(d.join("eval"))
        .args(["--suite", "quick"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("eval/eval.csv").exists());
}

#[test]
fn cli_failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[ppo]\nnum_env = 3\n").unwrap();
    let out = gamp().args(["train", "--config"]).arg(&bad).arg("--out").arg(dir.path().join("r")).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("num_env"), "{err}");

    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"GAMQ....").unwrap();
    let out = gamp()
        .arg("rollout")
        .arg("--policy")
        .arg(&junk)
        .args(["--scenario", "stand", "--steps", "5", "--trace"])
        .arg(dir.path().join("t.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));

    let out = gamp()
        .arg("eval")
        .arg("--policy")
        .arg(&junk)
        .arg("--out")
        .arg(dir.path())
        .args(["--suite", "nope"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn abort_reports_iteration_and_keeps_partial_metrics() {
    let mut cfg = tiny_config();
    cfg.iterations = 5;
    cfg.ppo.lr = 1e300;
    let dir = tempfile::tempdir().unwrap();
    let err = train(&cfg, dir.path()).unwrap_err();
    let msg = err.to_string();
    let gamp::Error::TrainingAborted { iteration, .. } = err else {
        panic!("unexpected error {msg}");
    };
    assert!(msg.contains(&format!("iteration {iteration}")), "{msg}");
    assert_eq!(metrics(dir.path()).len(), iteration - 1);
}
