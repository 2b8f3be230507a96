use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Learnable camera ISP for weakly paired RAW/sRGB data.
#[derive(Debug, Parser)]
#[command(name = "wildisp", version)]
pub struct Cli {
    /// Worker threads (1 keeps every run bitwise reproducible).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    /// Seed overriding any seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// JSON config; explicit flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Minimum level of the JSON log lines on stderr.
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    pub log_level: LogLevel,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl From<LogLevel> for log::Level {
    fn from(l: LogLevel) -> Self {
        match l {
            LogLevel::Error => log::Level::Error,
            LogLevel::Warn => log::Level::Warn,
            LogLevel::Info => log::Level::Info,
            LogLevel::Debug => log::Level::Debug,
            LogLevel::Trace => log::Level::Trace,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gamma-process a RAW4 file into a PPM visualization.
    Preprocess {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit, apply or compare parametric color maps.
    #[command(subcommand)]
    Colormap(ColormapCmd),
    /// Forward-backward consistency mask of two flow fields.
    Flowmask {
        #[arg(long)]
        fwd: PathBuf,
        #[arg(long)]
        bwd: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        alpha1: Option<f64>,
        #[arg(long)]
        alpha2: Option<f64>,
        /// Sample the backward flow at the forward-displaced position.
        #[arg(long)]
        displaced: bool,
    },
    /// Warp an image by a flow field or by a homography fitted to point pairs.
    Warp {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, conflicts_with = "points", required_unless_present = "points")]
        flow: Option<PathBuf>,
        /// JSON list of `[x_src, y_src, x_dst, y_dst]` rows.
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic weakly paired dataset with known ground truth.
    Synth(SynthArgs),
    /// Cut a capture into scored crop pairs and write a filtered manifest.
    Crops(CropsArgs),
    /// Train the ISP, the color predictor, or both jointly.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Run the full pipeline on one RAW file and write its intermediates.
    Infer {
        #[arg(long)]
        raw: PathBuf,
        /// Checkpoint holding `P` and `F` (and `G` after joint training).
        #[arg(long)]
        ckpt: PathBuf,
        /// Separate color predictor checkpoint.
        #[arg(long)]
        color_ckpt: Option<PathBuf>,
        /// Known color image instead of a predictor, at RAW or target resolution.
        #[arg(long, conflicts_with = "color_ckpt")]
        color: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Run a variant grid on synthetic data and tabulate PSNR/SSIM.
    Ablate(AblateArgs),
}

#[derive(Debug, Subcommand)]
pub enum ColormapCmd {
    /// Fit a map from `x` to `c` and save it as JSON.
    Fit {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        c: PathBuf,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a saved map to an image.
    Apply {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean fit residual of every variant on synthetic pairs.
    Bench {
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// RAW height (targets are twice as large).
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub occluders: Option<usize>,
    /// Identity color transform and no misalignment.
    #[arg(long)]
    pub identity: bool,
}

#[derive(Debug, Args)]
pub struct CropsArgs {
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// RAW crop size; target crops are twice as large.
    #[arg(long, default_value_t = 160)]
    pub crop: usize,
    #[arg(long, default_value_t = 160)]
    pub stride: usize,
    /// Minimum NCC for a pair to be kept.
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub threshold: f64,
    /// Point pairs (RAW-resolution target coordinates to RAW coordinates)
    /// used to align the target by a homography before cropping.
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long, default_value = "capture")]
    pub capture: String,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct TrainOpts {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint path; the resolved config is written next to it as `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// `no_align`, `aligned_loss` or `mask`.
    #[arg(long)]
    pub align: Option<String>,
    /// Color map variant.
    #[arg(long)]
    pub variant: Option<String>,
    /// Disable the color hint for `F`.
    #[arg(long)]
    pub no_color_hint: bool,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub log_every: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum TrainCmd {
    /// Train `P` and `F`.
    Isp {
        #[command(flatten)]
        opts: TrainOpts,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train `G`.
    Color {
        #[command(flatten)]
        opts: TrainOpts,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Fine-tune `P`, `F` and `G` together from separate checkpoints.
    Joint {
        #[command(flatten)]
        opts: TrainOpts,
        #[arg(long)]
        isp: PathBuf,
        #[arg(long)]
        color: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset manifest (requires `--ckpt`).
    #[arg(long, requires = "ckpt", conflicts_with_all = ["pred", "gt"])]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub color_ckpt: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Single prediction to score (requires `--gt`).
    #[arg(long, requires = "gt")]
    pub pred: Option<PathBuf>,
    #[arg(long, requires = "pred")]
    pub gt: Option<PathBuf>,
    /// Flow from prediction pixels into the ground truth.
    #[arg(long, requires = "pred")]
    pub flow: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub border: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// `colormap`, `loss` or `colorpred`.
    #[arg(long)]
    pub grid: Option<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub train_samples: Option<usize>,
    #[arg(long)]
    pub test_samples: Option<usize>,
    /// Directory for `ablation.json` and `ablation.md`.
    #[arg(long)]
    pub out: PathBuf,
}
