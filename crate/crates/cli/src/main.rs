//! `saia`: preparation and operation phases of split client/server inference.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Ctx;
use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "saia", version, about = "Split client/server inference with a learned routing unit")]
struct Cli {
    /// Experiment config (JSON). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config field, e.g. `--set du.epsilon=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Directory all artifacts are written to.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build client-view features and split them into train/meta/test.
    PrepareFeatures {
        /// Extract image features from `<dir>/<class>/<image>.ppm` instead.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Also write rotated/flipped copies to data/augmented.csv.
        #[arg(long)]
        augment: bool,
    },
    /// Train the client-side model on the training partition.
    TrainEmbedded {
        /// Augmented rows; only those derived from training images are used.
        #[arg(long)]
        extra_train: Option<PathBuf>,
    },
    /// Write server-side posterior tables and the ensemble manifest.
    ExportPosteriors,
    /// Label the meta partition with keep/send targets.
    GenMeta,
    /// Train the decision unit at `du.epsilon`.
    TrainDu,
    /// Serve the ensemble over TCP until killed.
    Serve {
        /// host:port; defaults to the configured socket endpoint.
        #[arg(long)]
        endpoint: Option<String>,
    },
    /// Route the test partition through the trained units.
    Run,
    /// Train a decision unit per ε and write sweep.csv.
    Sweep,
    /// Random-routing baseline; writes baseline.csv.
    Baseline {
        /// Evaluate at the fractions a sweep reached.
        #[arg(long)]
        fractions_from: Option<PathBuf>,
    },
    /// Summarize sweep.csv (and baseline.csv when present).
    Report {
        #[arg(long)]
        sweep: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::PrepareFeatures { .. } => "prepare-features",
            Command::TrainEmbedded { .. } => "train-embedded",
            Command::ExportPosteriors => "export-posteriors",
            Command::GenMeta => "gen-meta",
            Command::TrainDu => "train-du",
            Command::Serve { .. } => "serve",
            Command::Run => "run",
            Command::Sweep => "sweep",
            Command::Baseline { .. } => "baseline",
            Command::Report { .. } => "report",
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let cfg = config::load(cli.config.as_deref(), &cli.overrides)?;
    let mut ctx = Ctx::new(cli.command.name(), cfg, cli.out)?;
    match &cli.command {
        Command::PrepareFeatures { images, augment } => commands::prepare_features(&mut ctx, images.as_deref(), *augment)?,
        Command::TrainEmbedded { extra_train } => commands::train_embedded_cmd(&mut ctx, extra_train.as_deref())?,
        Command::ExportPosteriors => commands::export_posteriors(&mut ctx)?,
        Command::GenMeta => commands::gen_meta(&mut ctx)?,
        Command::TrainDu => commands::train_du_cmd(&mut ctx)?,
        Command::Serve { endpoint } => return commands::serve(ctx, endpoint.as_deref()),
        Command::Run => commands::run(&mut ctx)?,
        Command::Sweep => commands::sweep(&mut ctx)?,
        Command::Baseline { fractions_from } => commands::baseline(&mut ctx, fractions_from.as_deref())?,
        Command::Report { sweep, baseline } => commands::report(&mut ctx, sweep.as_deref(), baseline.as_deref())?,
    }
    ctx.finish()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::FAILURE
        }
    }
}
