//! `noduleseg`: median denoise → recurrent per-pixel probabilities →
//! genetic refinement, exposed as composable subcommands.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use noduleseg_cli::commands::{self, ModelSource};
use noduleseg_cli::config::PipelineConfig;
use noduleseg_cli::manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "noduleseg",
    version,
    about = "Lung-nodule segmentation: median denoise, recurrent segmentation, genetic refinement"
)]
struct Cli {
    /// Pipeline configuration JSON; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the one in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory all artifacts are written into.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic image/mask pairs from a phantom spec.
    Phantom {
        /// Phantom geometry JSON.
        spec: PathBuf,
        /// Number of pairs to generate.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Median-denoise, window, and gamma-correct one image.
    Preprocess {
        /// Input PGM.
        image: PathBuf,
    },
    /// Train a network on img_N.pgm/mask_N.pgm pairs.
    Train {
        /// Directory holding the training pairs.
        data_dir: PathBuf,
    },
    /// Probability map, binary mask, and overlay from a trained model.
    Segment {
        /// Input PGM.
        image: PathBuf,
        /// Model checkpoint JSON.
        #[arg(long)]
        model: PathBuf,
    },
    /// Refine a mask by window-wise energy minimization.
    Refine {
        /// Mask to refine (PGM).
        mask: PathBuf,
        /// Probability map backing the data term (PGM).
        #[arg(long)]
        probmap: PathBuf,
        /// Intensity image backing the smoothness term (PGM).
        #[arg(long)]
        image: PathBuf,
    },
    /// Score a predicted mask against ground truth.
    Eval {
        /// Predicted mask (PGM).
        pred: PathBuf,
        /// Ground-truth mask (PGM).
        truth: PathBuf,
    },
    /// Preprocess, segment, refine, and optionally evaluate one image.
    Pipeline {
        /// Input PGM.
        image: PathBuf,
        /// Ground-truth mask; enables the eval stage.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Existing model checkpoint.
        #[arg(long, conflicts_with = "train_dir")]
        model: Option<PathBuf>,
        /// Train a model first from pairs in this directory.
        #[arg(long)]
        train_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(manifest) => {
            println!(
                "{}: {} artifact(s), manifest written",
                manifest.command,
                manifest.artifacts.len()
            );
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<RunManifest> {
    let mut config = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli.out.as_path();
    match cli.command {
        Command::Phantom { spec, count } => {
            commands::cmd_phantom(&spec, count, config.seed, out)
        }
        Command::Preprocess { image } => commands::cmd_preprocess(&image, &config, out),
        Command::Train { data_dir } => commands::cmd_train(&data_dir, &config, out),
        Command::Segment { image, model } => {
            commands::cmd_segment(&image, &model, &config, out)
        }
        Command::Refine {
            mask,
            probmap,
            image,
        } => commands::cmd_refine(&mask, &probmap, &image, &config, out),
        Command::Eval { pred, truth } => commands::cmd_eval(&pred, &truth, &config, out),
        Command::Pipeline {
            image,
            truth,
            model,
            train_dir,
        } => {
            let source = match (model, train_dir) {
                (Some(path), None) => ModelSource::Checkpoint(path),
                (None, Some(dir)) => ModelSource::TrainDir(dir),
                _ => anyhow::bail!("exactly one of --model or --train-dir is required"),
            };
            commands::cmd_pipeline(&image, truth.as_deref(), &source, &config, out)
        }
    }
}
