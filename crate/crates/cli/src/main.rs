//! `gpg`: train graph convolutional swarm policies, evaluate them, transfer
//! them to larger swarms and compare them with centralized CAPT.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 internal failure.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::Utc;
use clap::{Args, Parser, Subcommand};
use gpg_core::capt::{self, CaptError};
use gpg_core::reinforce::{self, EvalOptions, TrainError};
use gpg_core::world::{FormationSpec, WorldError};
use gpg_core::Checkpoint;

use config::{parse_formation, ExperimentConfig, LoadedConfig};
use output::{ManifestInfo, RunOutput, OUT_DIR_ENV};

#[derive(Debug)]
pub enum Failure {
    User(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::User(_) => 1,
            Failure::Internal(_) => 2,
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let msg = e.to_string();
        match e {
            TrainError::Config(_)
            | TrainError::Graph(_)
            | TrainError::FeatureWidthMismatch { .. }
            | TrainError::SensingMismatch { .. }
            | TrainError::TopologyMismatch { .. } => Failure::User(msg),
            TrainError::World(w) => w.into(),
            TrainError::Gcn(_)
            | TrainError::EmptyBatch
            | TrainError::NonFiniteGradient
            | TrainError::NonFiniteStreak(_) => Failure::Internal(msg),
        }
    }
}

impl From<WorldError> for Failure {
    fn from(e: WorldError) -> Self {
        let msg = e.to_string();
        match e {
            WorldError::SpawnInfeasible { .. }
            | WorldError::GoalCountMismatch { .. }
            | WorldError::InvalidFormation(_)
            | WorldError::Config(_) => Failure::User(msg),
            _ => Failure::Internal(msg),
        }
    }
}

impl From<CaptError> for Failure {
    fn from(e: CaptError) -> Self {
        let msg = e.to_string();
        match e {
            CaptError::Train(t) => t.into(),
            CaptError::World(w) => w.into(),
            CaptError::ObstaclesUnsupported
            | CaptError::CountMismatch { .. }
            | CaptError::InvalidSpeed(_)
            | CaptError::InvalidStep(_) => Failure::User(msg),
            CaptError::NotSquare { .. } | CaptError::NonFiniteCost { .. } => Failure::Internal(msg),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "gpg",
    version,
    about = "Graph policy gradients for unlabeled motion planning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write its checkpoint, training log and manifest.
    Train {
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Collect each batch on this many threads.
        #[arg(long, value_name = "N")]
        parallel_episodes: Option<usize>,
    },
    /// Evaluate a checkpoint in the world of a config.
    Eval {
        checkpoint: PathBuf,
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Run a checkpoint unchanged on a larger swarm.
    Transfer {
        checkpoint: PathBuf,
        large_config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Compare time-to-goals of a checkpoint against CAPT.
    Compare {
        checkpoint: PathBuf,
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated formation names from the config (default: all).
        #[arg(long, value_delimiter = ',')]
        formations: Vec<String>,
        #[arg(long)]
        episodes: Option<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the environment and the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    episodes: Option<usize>,
    /// Act with the policy mean.
    #[arg(long, conflicts_with = "stochastic")]
    deterministic: bool,
    /// Sample actions from the policy.
    #[arg(long)]
    stochastic: bool,
    /// Goal layout: circle:R, line:S, grid:S or random.
    #[arg(long, value_parser = parse_formation)]
    formation: Option<FormationSpec>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::User(m) => eprintln!("error: {m}"),
                Failure::Internal(m) => eprintln!("internal error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train {
            config,
            run,
            parallel_episodes,
        } => cmd_train(&config, &run, parallel_episodes),
        Command::Eval {
            checkpoint,
            config,
            run,
            eval,
        } => cmd_eval(&checkpoint, &config, &run, &eval, false),
        Command::Transfer {
            checkpoint,
            large_config,
            run,
            eval,
        } => cmd_eval(&checkpoint, &large_config, &run, &eval, true),
        Command::Compare {
            checkpoint,
            config,
            run,
            formations,
            episodes,
        } => cmd_compare(&checkpoint, &config, &run, &formations, episodes),
    }
}

fn resolve_seed(run: &RunArgs, config: &ExperimentConfig) -> Result<u64, Failure> {
    run.seed.or(config.seed).ok_or_else(|| {
        Failure::User("no seed given: pass --seed or set `seed` in the config".into())
    })
}

fn resolve_out(run: &RunArgs, config: &ExperimentConfig, command: &str) -> PathBuf {
    run.out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(command))
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, String), Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::User(format!("cannot read {}: {e}", path.display())))?;
    let ck = Checkpoint::from_toml(&text)
        .map_err(|e| Failure::User(format!("{}: {e}", path.display())))?;
    Ok((ck, text))
}

fn cmd_train(path: &Path, run: &RunArgs, threads: Option<usize>) -> Result<(), Failure> {
    let started = Utc::now();
    let LoadedConfig { config, text } = ExperimentConfig::load(path)?;
    let seed = resolve_seed(run, &config)?;
    let mut train = config.train.clone();
    train.seed = seed;
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::User(
                "--parallel-episodes must be at least 1".into(),
            ));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Internal(e.to_string()))?;
        train.parallel_episodes = true;
    }
    let out_dir = resolve_out(run, &config, "train");

    let every = (train.total_updates / 20).max(1);
    let outcome = reinforce::train_with(&train, |r| {
        if (r.update + 1) % every == 0 {
            eprintln!(
                "update {:>5}  return {:>9.3}  coverage {:.2}  collisions {:.2}",
                r.update + 1,
                r.mean_return,
                r.coverage,
                r.collisions
            );
        }
    })?;

    let checkpoint = Checkpoint {
        policy: outcome.policy,
        world: train.world.clone(),
    }
    .to_toml()
    .map_err(|e| Failure::Internal(e.to_string()))?;
    let mut out = RunOutput::create(out_dir)?;
    out.write("checkpoint.toml", &checkpoint)?;
    out.write("train_log.csv", &outcome.log.to_csv())?;
    let dir = out.finish(ManifestInfo {
        command: "train",
        seed,
        config_text: &text,
        checkpoint_text: None,
        started,
    })?;
    if let Some((coverage, ret)) = outcome.log.tail_stats(100) {
        println!("final_100_coverage = {coverage}\nfinal_100_mean_return = {ret}");
    }
    println!("output_dir = {}", dir.display());
    Ok(())
}

fn cmd_eval(
    ck_path: &Path,
    path: &Path,
    run: &RunArgs,
    args: &EvalArgs,
    transfer: bool,
) -> Result<(), Failure> {
    let started = Utc::now();
    let (ck, ck_text) = load_checkpoint(ck_path)?;
    let LoadedConfig { config, text } = ExperimentConfig::load(path)?;
    let seed = resolve_seed(run, &config)?;
    let world = &config.train.world;
    let formation = args
        .formation
        .clone()
        .unwrap_or_else(|| config.eval_formation().clone());
    formation.layout(world.n_goals)?;
    let options = EvalOptions {
        episodes: args.episodes.unwrap_or(config.eval.episodes),
        seed,
        deterministic: if args.deterministic || args.stochastic {
            args.deterministic
        } else {
            config.eval.deterministic
        },
        record_trajectories: config.eval.dump_trajectories,
    };
    let command = if transfer { "transfer" } else { "eval" };
    let report = if transfer {
        reinforce::transfer_eval(&ck.policy, world, &config.train.graph, &formation, &options)?
    } else {
        reinforce::evaluate(&ck.policy, world, &formation, &options)?
    };

    let mut out = RunOutput::create(resolve_out(run, &config, command))?;
    let text_report = output::report_text(&report);
    out.write(&format!("{command}_report.txt"), &text_report)?;
    if options.record_trajectories {
        out.write("trajectories.csv", &output::trajectories_csv(&report))?;
        out.write(
            "goals.csv",
            &output::goals_csv(world, &formation, &options)?,
        )?;
    }
    let dir = out.finish(ManifestInfo {
        command,
        seed,
        config_text: &text,
        checkpoint_text: Some(&ck_text),
        started,
    })?;
    print!("{text_report}");
    println!("output_dir = {}", dir.display());
    Ok(())
}

fn cmd_compare(
    ck_path: &Path,
    path: &Path,
    run: &RunArgs,
    names: &[String],
    episodes: Option<usize>,
) -> Result<(), Failure> {
    let started = Utc::now();
    let (ck, ck_text) = load_checkpoint(ck_path)?;
    let LoadedConfig { config, text } = ExperimentConfig::load(path)?;
    let seed = resolve_seed(run, &config)?;
    if !config.train.world.obstacles.is_empty() {
        return Err(CaptError::ObstaclesUnsupported.into());
    }
    if config.formations.is_empty() {
        return Err(Failure::User(format!(
            "{}: no [[formations]] to compare",
            path.display()
        )));
    }
    let mut formations = Vec::new();
    if names.is_empty() {
        formations.extend(
            config
                .formations
                .iter()
                .map(|f| (f.name.clone(), f.formation.clone())),
        );
    } else {
        for name in names {
            let f = config
                .formations
                .iter()
                .find(|f| &f.name == name)
                .ok_or_else(|| {
                    Failure::User(format!("no formation named `{name}` in the config"))
                })?;
            formations.push((f.name.clone(), f.formation.clone()));
        }
    }
    let episodes = episodes.unwrap_or(config.eval.episodes);
    let report = capt::compare(&ck.policy, &config.train.world, &formations, episodes, seed)?;

    let csv = report.to_csv();
    let mut out = RunOutput::create(resolve_out(run, &config, "compare"))?;
    out.write("comparison.csv", &csv)?;
    let dir = out.finish(ManifestInfo {
        command: "compare",
        seed,
        config_text: &text,
        checkpoint_text: Some(&ck_text),
        started,
    })?;
    print!("{csv}");
    println!("# output_dir = {}", dir.display());
    Ok(())
}
