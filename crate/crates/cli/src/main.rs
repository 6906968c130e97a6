//! `mmncd`: generate synthetic multi-modal data, train, evaluate, cluster
//! exported embeddings and run the loss ablation grid.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use mmncd_core::stlclu::ClusterParams;

use crate::config::ConfigArgs;
use crate::error::CliError;
use crate::manifest::{DEFAULT_OUT_DIR, OUT_DIR_ENV};

#[derive(Parser, Debug)]
#[command(name = "mmncd", version, about = "Multi-modal novel class discovery on synthetic data")]
struct Cli {
    /// Root under which every run gets its own directory.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = DEFAULT_OUT_DIR)]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Generate(GenerateArgs),
    /// Pretrain and train on a dataset, writing a checkpoint and logs.
    Train(TrainArgs),
    /// Evaluate a checkpoint: retrieval metrics, PR curve, embeddings.
    Eval(EvalArgs),
    /// Cluster an embeddings CSV with the relaxing DBSCAN schedule.
    Cluster(ClusterArgs),
    /// Train every combination of TD, SS and clustering over several seeds.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset path; defaults to dataset.ds inside the run directory.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Continue from a checkpoint written with the same configuration.
    #[arg(long, value_name = "CKPT")]
    resume: Option<PathBuf>,
    /// Stop once this many epochs (pretraining included) are done.
    #[arg(long, value_name = "EPOCH")]
    stop_after: Option<u32>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_name = "CKPT")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Remove modality J from every sample that has another one; repeatable.
    #[arg(long = "drop-modality", value_name = "J")]
    drop_modality: Vec<usize>,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// CSV with header id,c0,...,label; label -1 marks unlabeled rows.
    #[arg(long, value_name = "PATH")]
    embeddings: PathBuf,
    /// Neighborhood radius. Without it, eps and min-pts are calibrated on labeled rows.
    #[arg(long, requires = "min_pts")]
    eps: Option<f64>,
    /// Density threshold, counting the point itself; given together with --eps.
    #[arg(long, requires = "eps")]
    min_pts: Option<usize>,
    /// Number of relaxation steps to run.
    #[arg(long, default_value_t = 1)]
    epochs: u32,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    seeds: Vec<u64>,
    /// Training epochs at which mAP is reported.
    #[arg(long, value_delimiter = ',', default_values_t = [5u32, 10, 20, 30, 40])]
    milestones: Vec<u32>,
}

fn run(cli: &Cli, matches: &ArgMatches) -> Result<PathBuf, CliError> {
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    let root = cli.out_dir.as_path();
    match &cli.command {
        Command::Generate(a) => commands::generate(root, &a.config.resolve(sub)?, a.out.as_deref()),
        Command::Train(a) => commands::train(
            root,
            &a.config.resolve(sub)?,
            &commands::TrainOptions {
                data: &a.data,
                resume: a.resume.as_deref(),
                stop_after: a.stop_after,
            },
        ),
        Command::Eval(a) => commands::eval(root, &a.config.resolve(sub)?, &a.checkpoint, &a.data, &a.drop_modality),
        Command::Cluster(a) => {
            let config = a.config.resolve(sub)?;
            let params = match (a.eps, a.min_pts) {
                (Some(eps), Some(min_pts)) => Some(ClusterParams::new(eps, min_pts)?),
                _ => None,
            };
            if a.epochs == 0 {
                return Err(CliError::Usage("--epochs must be at least 1".into()));
            }
            commands::cluster(
                root,
                &config,
                &commands::ClusterOptions {
                    embeddings: &a.embeddings,
                    params,
                    epochs: a.epochs,
                },
            )
        }
        Command::Ablate(a) => {
            if a.seeds.is_empty() {
                return Err(CliError::Usage("--seeds needs at least one seed".into()));
            }
            commands::ablate(
                root,
                &a.config.resolve(sub)?,
                &commands::AblateOptions {
                    data: &a.data,
                    seeds: &a.seeds,
                    milestones: &a.milestones,
                },
            )
        }
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(&cli, &matches) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
