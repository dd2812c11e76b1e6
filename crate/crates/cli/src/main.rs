use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use intformer::training::Profile;
use intformer_cli::commands::{self, EvalArgs};
use intformer_cli::config::{resolve, Overrides};

#[derive(Parser)]
#[command(name = "intformer", version, about = "Pedestrian crossing anticipation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config, or a run manifest to re-execute.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Hyperparameter preset: pie, jaad_beh, jaad_all or synthetic.
    #[arg(long)]
    profile: Option<Profile>,
    /// Seed for the video split, initialization, shuffling and dropout.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            profile: self.profile,
            seed: self.seed,
            out: self.out.clone(),
            masks: None,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic annotation file and frames.
    Synth(Common),
    /// Train a model and keep the best validation checkpoint.
    Train(Common),
    /// Evaluate a checkpoint on a data split.
    Eval {
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate one model per input mask and seed.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated masks such as `I---,-B-S` or `all`.
        #[arg(long, value_delimiter = ',')]
        masks: Option<Vec<String>>,
    },
    /// Describe a checkpoint, annotation file or config.
    Inspect {
        path: PathBuf,
        /// Config supplying load and window options for annotation files.
        #[arg(long, short)]
        config: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(c) => {
            let cfg = resolve(c.config.as_deref(), &c.overrides())?;
            commands::synth(&cfg, c.config.as_deref(), c.force)
        }
        Command::Train(c) => {
            let cfg = resolve(c.config.as_deref(), &c.overrides())?;
            commands::train(&cfg, c.config.as_deref(), c.force)
        }
        Command::Eval { checkpoint, common: c } => {
            let args = EvalArgs {
                checkpoint: &checkpoint,
                config_path: c.config.as_deref(),
                force: c.force,
            };
            commands::eval(&args, c.overrides())
        }
        Command::Ablate { common: c, masks } => {
            let ov = Overrides {
                masks,
                ..c.overrides()
            };
            let cfg = resolve(c.config.as_deref(), &ov)?;
            commands::ablate(&cfg, c.config.as_deref(), c.force)
        }
        Command::Inspect { path, config } => commands::inspect(&path, config.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
