//! `wsol`: synthesise corpora, train the joint topic model, extract and
//! evaluate boxes, transfer priors across domains and smooth box tracks.

mod commands;
mod error;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "wsol",
    version,
    about = "Weakly supervised object localisation with a joint topic model"
)]
pub struct Cli {
    /// Worker threads for per-image phases; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a corpus and its ground truth from the generative model.
    Synth(SynthArgs),
    /// Fit the model to a corpus.
    Train(TrainArgs),
    /// Infer boxes for every image of a corpus under a trained model.
    Localise(LocaliseArgs),
    /// CorLoc of detections against ground-truth boxes.
    Evaluate(EvaluateArgs),
    /// Turn a trained model into an appearance prior for another corpus.
    Transfer(TransferArgs),
    /// Kalman-smooth a per-frame box track.
    Smooth(SmoothArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML file with synthesis settings.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for corpus.txt, truth.json, ground_truth.csv and manifest.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub num_images: Option<usize>,
    #[arg(long)]
    pub tokens_per_image: Option<usize>,
    #[arg(long)]
    pub num_classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelFlags {
    /// TOML file with model, prior and heat-map settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub num_bg_topics: Option<usize>,
    #[arg(long)]
    pub topics_per_class: Option<usize>,
    #[arg(long)]
    pub ssl_alpha: Option<f64>,
    #[arg(long)]
    pub similarity_weight: Option<f64>,
    /// Strength of a transferred prior.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory for model.json, elbo.csv, detection files and manifest.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// `uniform`, `data`, or a path to a trained model or prior JSON file.
    #[arg(long, default_value = "data")]
    pub prior: String,
    /// Inter-class similarity matrix CSV; enables the prior update.
    #[arg(long)]
    pub similarity: Option<PathBuf>,
    /// Keep images flagged unlabeled (semi-supervised); otherwise they are dropped.
    #[arg(long)]
    pub ssl: bool,
    /// CSV `source_name,target_name` for a model prior.
    #[arg(long)]
    pub class_map: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Gaussian,
    Sampling,
}

#[derive(Debug, Args)]
pub struct LocaliseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub strategy: StrategyArg,
    /// Detections CSV in pixel coordinates.
    #[arg(long)]
    pub out: PathBuf,
    /// Write one PGM heat map per (image, class) into this directory.
    #[arg(long)]
    pub heatmaps: Option<PathBuf>,
    /// Localise every class in every image, including unlabeled ones.
    #[arg(long)]
    pub force_all_classes: bool,
    /// TOML file; only its `[heatmap]` table is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    /// IoU > 0.5.
    Strict,
    /// IoU ≥ 0.5.
    Inclusive,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// Defaults to one more than the largest class id seen.
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long, value_enum, default_value = "strict")]
    pub rule: RuleArg,
    /// CSV copy of the table printed to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// Trained source-domain model.
    #[arg(long)]
    pub model: PathBuf,
    /// Target corpus; supplies class names and vocabulary sizes.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Prior JSON, usable as `train --prior`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub class_map: Option<PathBuf>,
    /// Reset background rows to 1 instead of copying them.
    #[arg(long)]
    pub no_background: bool,
    #[command(flatten)]
    pub model_flags: ModelFlags,
}

#[derive(Debug, Args)]
pub struct SmoothArgs {
    /// CSV `frame,x_min,y_min,x_max,y_max,score`.
    #[arg(long)]
    pub track: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Process noise `q` in `Q = q·I`.
    #[arg(long, default_value_t = wsol::video::DEFAULT_PROCESS_NOISE)]
    pub process_noise: f64,
    /// Observation noise `r` in `R = r·I`.
    #[arg(long, default_value_t = wsol::video::DEFAULT_OBSERVATION_NOISE)]
    pub observation_noise: f64,
    /// With `--image-height`: the track is in pixels and is normalised for
    /// smoothing, so the noise levels keep their unit-square meaning.
    #[arg(long, requires = "image_height")]
    pub image_width: Option<u32>,
    #[arg(long, requires = "image_width")]
    pub image_height: Option<u32>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("{}", CliError::Usage("--threads must be at least 1".into()));
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("{}", CliError::Runtime(format!("thread pool: {e}")));
            return ExitCode::from(4);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("run `wsol --help` for usage");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
