mod commands;

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stylemix::tcps::Bin;
use tracing::Level;

/// Style-transfer data augmentation for domain-generalized segmentation.
#[derive(Parser, Debug)]
#[command(name = "stylemix", version)]
pub struct Cli {
    /// JSON configuration file; omitted keys take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random decision; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Texture-complexity scores for every image in a directory.
    Score(ScoreArgs),
    /// Select a seeded style pool and write its listing.
    Pool(PoolArgs),
    /// Build the N-times stylized dataset and its manifest.
    Stylize(StylizeArgs),
    /// Emit the training item list for a number of epochs.
    Sample(SampleArgs),
    /// Write photometric distortion, blur and mirror examples for one image.
    DistortPreview(PreviewArgs),
    /// Per-class IoU and mIoU of predictions against ground truth.
    Eval(EvalArgs),
    /// List the tensors of a weight archive and verify its checksum.
    WeightsInfo(WeightsInfoArgs),
    /// Write an archive of random weights with the full network layout.
    WeightsSynth(WeightsSynthArgs),
    /// Print the effective configuration as JSON.
    PrintConfig,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Directory of images to score (searched recursively).
    pub dir: PathBuf,
    /// Scores file to write.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PoolArgs {
    /// Style image directory; defaults to the configured style source.
    pub dir: Option<PathBuf>,
    /// Pool listing to write.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Number of styles to keep.
    #[arg(long)]
    pub size: Option<usize>,
    /// Keep only styles of this complexity bin.
    #[arg(long, value_parser = parse_bin)]
    pub filter: Option<Bin>,
    /// Scores file to use for --filter instead of scoring on the fly.
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StylizeArgs {
    /// Content image directory.
    #[arg(long)]
    pub images: PathBuf,
    /// Label directory matched to images by relative path.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Style directory; overrides the configured style source.
    #[arg(long)]
    pub styles: Option<PathBuf>,
    /// Pool listing from `stylemix pool`; skips pool selection.
    #[arg(long, conflicts_with = "styles")]
    pub pool: Option<PathBuf>,
    /// SMDW weight archive.
    #[arg(long)]
    pub weights: PathBuf,
    /// Output directory for images and manifest.json.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// manifest.json written by `stylemix stylize`.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub epochs: u64,
    /// Item list to write; stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PreviewArgs {
    pub image: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Number of examples.
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Only the photometric distortion, without blur and mirror.
    #[arg(long)]
    pub pmd_only: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Prediction directory (class ids 0-18).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth directory (native label ids).
    #[arg(long)]
    pub gt: PathBuf,
    /// Built-in map (cityscapes, gtav, bdd, identity) or a map file.
    #[arg(long, default_value = "cityscapes")]
    pub label_map: String,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct WeightsInfoArgs {
    pub archive: PathBuf,
}

#[derive(Args, Debug)]
pub struct WeightsSynthArgs {
    #[arg(long, short)]
    pub out: PathBuf,
}

fn parse_bin(s: &str) -> Result<Bin, String> {
    s.parse().map_err(|e: stylemix::Error| e.to_string())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => Level::INFO,
        1 => Level::DEBUG,
        _ => Level::TRACE,
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(level)
        .with_target(false)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    init_logging(cli.verbose);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
