use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use recurseg::config::ExperimentConfig;
use recurseg::pipeline::{self, cmd_eval, cmd_gen_candidates, cmd_recurse, cmd_report, cmd_run, cmd_train_seed};
use recurseg::recursion::StepOutcome;
use recurseg::review::{http, ReviewService};
use recurseg::synth::{cmd_synth, SynthOptions};
use recurseg::{Error, Result};

/// Recursive semi-supervised segmentation.
///
/// Settings in the config file can be overridden with `--section.key=value`
/// (or `--rng_seed=N`) anywhere on the command line.
#[derive(Parser)]
#[command(name = "recurseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and a matching experiment config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        n_pix: usize,
        #[arg(long, default_value_t = 64)]
        n_img: usize,
        #[arg(long, default_value_t = 24)]
        n_test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run (or resume) the whole pipeline, then evaluate.
    Run {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Validate the config and print the stage plan only.
        #[arg(long)]
        dry_run: bool,
        /// Return instead of waiting when a human review round is open.
        #[arg(long)]
        no_wait: bool,
    },
    /// Seed training on the pixel-labelled set.
    TrainSeed {
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Write weak-label candidates for the current recursion.
    GenCandidates {
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Serve the review API for an experiment directory.
    ReviewServe {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, default_value = "127.0.0.1:8787")]
        addr: SocketAddr,
        /// Bearer token required on every request (also RECURSEG_REVIEW_TOKEN).
        #[arg(long, env = "RECURSEG_REVIEW_TOKEN")]
        token: Option<String>,
    },
    /// Apply the pending selection and run recursions.
    Recurse {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Recursions to run; all remaining by default.
        #[arg(long)]
        steps: Option<u32>,
        #[arg(long)]
        no_wait: bool,
    },
    /// Evaluate two checkpoints on held-out manifests.
    Eval {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Defaults to the experiment's seed checkpoint.
        #[arg(long)]
        before: Option<PathBuf>,
        /// Defaults to the experiment's latest checkpoint.
        #[arg(long)]
        after: Option<PathBuf>,
        /// Defaults to the config's test manifests.
        #[arg(long = "manifest")]
        manifests: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the experiment's history and latest report.
    Report {
        #[command(flatten)]
        cfg: ConfigArg,
    },
}

const TOP_LEVEL_KEYS: [&str; 2] = ["rng_seed", "refine_each_recursion"];

/// Splits `--section.key=value` overrides from ordinary arguments.
fn split_overrides(args: impl IntoIterator<Item = String>) -> (Vec<String>, Vec<String>) {
    let mut plain = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        let is_override = a
            .strip_prefix("--")
            .and_then(|s| s.split_once('='))
            .is_some_and(|(k, _)| k.contains('.') || TOP_LEVEL_KEYS.contains(&k));
        if is_override {
            overrides.push(a);
        } else {
            plain.push(a);
        }
    }
    (plain, overrides)
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn outcome_json(o: &StepOutcome) -> serde_json::Value {
    match o {
        StepOutcome::Advanced(stage) => json!({ "status": "advanced", "stage": stage }),
        StepOutcome::AwaitingReview { recursion, open_session } => {
            json!({ "status": "awaiting_review", "recursion": recursion, "open_session": open_session })
        }
        StepOutcome::Finished(reason) => json!({ "status": "finished", "stop_reason": reason }),
    }
}

fn load(cfg: &ConfigArg, overrides: &[String]) -> Result<ExperimentConfig> {
    ExperimentConfig::load(&cfg.config, overrides).map_err(|e| e.in_stage("config"))
}

fn execute(command: Command, overrides: &[String]) -> Result<()> {
    match command {
        Command::Synth { out, n_pix, n_img, n_test, seed } => {
            let opts = SynthOptions { n_pix, n_img, n_test, seed };
            let files = cmd_synth(&out, &opts).map_err(|e| e.in_stage("synth"))?;
            print_json(&json!({
                "d_pix": files.d_pix, "d_img": files.d_img, "test": files.test, "config": files.config,
            }));
        }
        Command::Run { cfg, dry_run, no_wait } => {
            let cfg = load(&cfg, overrides)?;
            if dry_run {
                pipeline::load_experiment_data(&cfg).map_err(|e| e.in_stage("load"))?;
                print!("{}", pipeline::stage_plan(&cfg));
                return Ok(());
            }
            let s = cmd_run(&cfg, !no_wait)?;
            print_json(&json!({
                "outcome": outcome_json(&s.outcome),
                "recursion_index": s.recursion_index,
                "accepted": s.accepted,
                "report": s.report.as_ref().map(|r| &r.table),
            }));
        }
        Command::TrainSeed { cfg } => {
            let st = cmd_train_seed(&load(&cfg, overrides)?)?;
            print_json(&json!({ "stage": st.stage, "checkpoint": st.checkpoints.get(&0) }));
        }
        Command::GenCandidates { cfg } => {
            let st = cmd_gen_candidates(&load(&cfg, overrides)?)?;
            print_json(&json!({ "stage": st.stage, "recursion_index": st.recursion_index, "pending": st.pending.len() }));
        }
        Command::ReviewServe { cfg, addr, token } => {
            let cfg = load(&cfg, overrides)?;
            let taxonomy = pipeline::experiment_taxonomy(&cfg).map_err(|e| e.in_stage("review-serve"))?;
            let service = Arc::new(ReviewService::new(&cfg.paths.experiment_dir, taxonomy));
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Serde(e.to_string()))?;
            rt.block_on(http::serve(addr, service, token)).map_err(|e| e.in_stage("review-serve"))?;
        }
        Command::Recurse { cfg, steps, no_wait } => {
            let o = cmd_recurse(&load(&cfg, overrides)?, steps, !no_wait)?;
            print_json(&outcome_json(&o));
        }
        Command::Eval { cfg, before, after, manifests, out } => {
            let cfg = load(&cfg, overrides)?;
            let exp = &cfg.paths.experiment_dir;
            let files = if before.is_none() && after.is_none() && manifests.is_empty() {
                let state = pipeline::read_state(exp).map_err(|e| e.in_stage("eval"))?;
                pipeline::evaluate_experiment(&cfg, &state, out.as_deref())?
            } else {
                let state = pipeline::read_state(exp).ok();
                let pick = |given: Option<PathBuf>, first: bool| -> Result<PathBuf> {
                    if let Some(p) = given {
                        return Ok(p);
                    }
                    let st = state.as_ref().ok_or_else(|| Error::Checkpoint("no experiment state".into()))?;
                    let ck = if first { st.checkpoints.values().next() } else { st.checkpoints.values().next_back() };
                    ck.map(|c| exp.join(&c.path))
                        .ok_or_else(|| Error::Checkpoint("experiment has no checkpoints".into()))
                };
                let before = pick(before, true).map_err(|e| e.in_stage("eval"))?;
                let after = pick(after, false).map_err(|e| e.in_stage("eval"))?;
                let manifests = if manifests.is_empty() { cfg.paths.test.clone() } else { manifests };
                let out = out.unwrap_or_else(|| pipeline::report_dir(exp));
                cmd_eval(&cfg, &before, &after, &manifests, &out).map_err(|e| e.in_stage("eval"))?
            };
            print!("{}", std::fs::read_to_string(&files.table).map_err(|e| Error::Report(e.to_string()))?);
        }
        Command::Report { cfg } => {
            let cfg = load(&cfg, overrides)?;
            print!("{}", cmd_report(&cfg.paths.experiment_dir).map_err(|e| e.in_stage("report"))?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args());
    let cli = Cli::parse_from(args);
    init_logging();
    match execute(cli.command, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let stage = e.stage().unwrap_or("cli").to_string();
            tracing::error!(stage, error = %e, "failed");
            eprintln!("error: {e}");
            ExitCode::from(if e.stage().is_some() { 2 } else { 1 })
        }
    }
}
