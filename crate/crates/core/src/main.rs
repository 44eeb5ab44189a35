use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gamp::harness::{self, Checkpoint, Scenario, TrainConfig};
use gamp::{Error, Result};

#[derive(Parser)]
#[command(name = "gamp", version, about = "Gated adversarial motion priors for a planar biped")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the walk, run and get-up reference clips.
    GenClips {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy and export it as `policy.bin` in the output directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        single_thread: bool,
    },
    /// Run an evaluation suite (standard, quick, fast) on a frozen policy.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "standard")]
        suite: String,
        /// Training config providing model and reward constants.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Export a JSON checkpoint as a frozen policy.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out a frozen policy in a named scenario and write a trace.
    Rollout {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenClips { config, out } => {
            let cfg = load_config(config.as_deref())?;
            for p in harness::gen_clips(&cfg.model, &cfg.clips, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Train {
            config,
            out,
            seed,
            iters,
            single_thread,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = iters {
                cfg.iterations = n;
            }
            cfg.single_thread |= single_thread;
            cfg.out_dir = Some(out.clone());
            let summary = harness::train(&cfg, &out)?;
            println!(
                "trained {} iterations; metrics {}; policy {}; integration errors {}",
                summary.iterations,
                summary.metrics_path.display(),
                summary.policy_path.display(),
                summary.integration_errors
            );
        }
        Command::Eval {
            policy,
            out,
            suite,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let frozen = harness::load_frozen(&policy)?;
            let report = harness::evaluate(&frozen, &cfg.model, &cfg.rewards, &suite)?;
            harness::write_report(&report, &out)?;
            let s = &report.summary;
            println!(
                "suite {}: sweep tracking error {:.4} m/s, prone success {:.2}, supine success {:.2}",
                report.suite, s.sweep_tracking_error, s.prone_success_rate, s.supine_success_rate
            );
        }
        Command::Export { checkpoint, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            harness::export_policy(&ckpt.agent, &ckpt.model, &out)?;
            println!("{}", out.display());
        }
        Command::Rollout {
            policy,
            scenario,
            steps,
            trace,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let frozen = harness::load_frozen(&policy)?;
            let sc = Scenario::preset(&scenario)?.with_steps(steps);
            let (rows, summary) = harness::rollout_frozen(&frozen, &cfg.model, &cfg.rewards, &sc)?;
            harness::write_trace_csv(&trace, &rows)?;
            println!(
                "{}",
                serde_json::to_string(&summary).map_err(|e| Error::Serde(e.to_string()))?
            );
        }
    }
    Ok(())
}

fn one_line(e: &Error) -> String {
    let mut msg = e.to_string();
    let mut src = std::error::Error::source(e);
    while let Some(s) = src {
        let text = s.to_string();
        if !msg.contains(&text) {
            msg.push_str(": ");
            msg.push_str(&text);
        }
        src = s.source();
    }
    msg.replace('\n', " ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}
