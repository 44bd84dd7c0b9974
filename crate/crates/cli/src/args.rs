use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sixdgen::fusion::FusionKind;
use sixdgen::postopt::FocalMode;
use sixdgen::sixd::Modality;

/// 6D (RGB + XYZ) video generation toolkit.
#[derive(Debug, Parser)]
#[command(name = "sixdgen", version, args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the initial XYZ plane for an H×W frame.
    InitXyz(InitXyzArgs),
    /// Encode T×H×W×3 frames into a latent grid, or decode one back.
    Encode(EncodeArgs),
    /// Compute normalization statistics over XYZ latents.
    Stats(StatsArgs),
    /// Fuse RGB and XYZ latents into one tensor, or split a fused tensor.
    Fuse(FuseArgs),
    /// Print the token interaction distance of fusion strategies.
    Distance(DistanceArgs),
    /// Train the velocity model on the synthetic moving-quad dataset.
    Train(TrainArgs),
    /// Generate a 6D clip from a first frame with a trained checkpoint.
    Sample(SampleArgs),
    /// Recover per-frame pinhole cameras and depth from XYZ frames.
    RecoverCamera(RecoverArgs),
    /// Filter a JSON-lines clip manifest.
    Curate(CurateArgs),
    /// Export one frame of a 6D clip as a colored PLY point cloud.
    ToPly(ToPlyArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON object of flag values; flags given on the command line win.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModalityArg {
    Rgb,
    Xyz,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Rgb => Modality::Rgb,
            ModalityArg::Xyz => Modality::Xyz,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CombineArg {
    Intersection,
    Union,
}

fn parse_kind(s: &str) -> Result<FusionKind, String> {
    s.parse().map_err(|e: sixdgen::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<FocalMode, String> {
    s.parse().map_err(|e: sixdgen::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct InitXyzArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub width: usize,
    /// Output TNSR (H×W×3).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CodecArgs {
    /// Frames per latent step after the first frame.
    #[arg(long, default_value_t = 4)]
    pub temporal: usize,
    /// Spatial block edge in pixels.
    #[arg(long, default_value_t = 8)]
    pub spatial: usize,
    /// Seed of the codec's mixing matrices.
    #[arg(long, default_value_t = 0x5EED_C0DE)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Input TNSR: T×H×W×3 frames, or a T×C×H×W latent with --decode.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "rgb")]
    pub modality: ModalityArg,
    /// Decode a latent back to frames.
    #[arg(long)]
    pub decode: bool,
    /// Statistics JSON from `stats`; XYZ latents are standardized with it.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[command(flatten)]
    pub codec: CodecArgs,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: Common,
    /// XYZ latent TNSR files.
    #[arg(long, num_args = 1.., required = true)]
    pub latents: Vec<PathBuf>,
    /// Output JSON `{mean, std}`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[command(flatten)]
    pub common: Common,
    /// Split `--input` into `--rgb` and `--xyz` instead of fusing.
    #[arg(long)]
    pub unfuse: bool,
    /// RGB latent (input when fusing, output with --unfuse).
    #[arg(long)]
    pub rgb: PathBuf,
    /// XYZ latent (input when fusing, output with --unfuse).
    #[arg(long)]
    pub xyz: PathBuf,
    /// Fused TNSR (output when fusing, input with --unfuse).
    #[arg(long)]
    pub fused: PathBuf,
    /// Strategy JSON sidecar; defaults to the fused path with `.json` appended.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    /// channel, batch, frame, height or width.
    #[arg(long, value_parser = parse_kind, default_value = "width")]
    pub strategy: FusionKind,
    /// Place the XYZ block first.
    #[arg(long)]
    pub xyz_first: bool,
}

#[derive(Debug, Args)]
pub struct DistanceArgs {
    #[command(flatten)]
    pub common: Common,
    /// Strategy to report; every strategy when omitted.
    #[arg(long, value_parser = parse_kind)]
    pub strategy: Option<FusionKind>,
    /// Latent frames.
    #[arg(long)]
    pub frames: usize,
    /// Token rows.
    #[arg(long)]
    pub rows: usize,
    /// Token columns.
    #[arg(long)]
    pub cols: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 100)]
    pub warmup: usize,
    #[arg(long, value_parser = parse_kind, default_value = "width")]
    pub strategy: FusionKind,
    /// Transformer hidden size.
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 4)]
    pub blocks: usize,
    /// Patch size over (time, height, width).
    #[arg(long, num_args = 3, value_delimiter = ',', default_values_t = [1, 2, 2])]
    pub patch: Vec<usize>,
    /// Training clips.
    #[arg(long, default_value_t = 64)]
    pub videos: usize,
    /// Held-out clips.
    #[arg(long, default_value_t = 16)]
    pub heldout: usize,
    /// Frames per clip (1 + a multiple of 4).
    #[arg(long, default_value_t = 5)]
    pub frames: usize,
    /// Clip height in pixels (a multiple of 8).
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    /// Clip width in pixels (a multiple of 8).
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    /// Print the loss every N steps (0 disables).
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// First frame (PPM) matching the checkpoint's resolution.
    #[arg(long)]
    pub first_frame: PathBuf,
    /// Output RGB frames (TNSR, T×H×W×3 in [0, 1]).
    #[arg(long)]
    pub out_rgb: PathBuf,
    /// Output XYZ frames (TNSR, T×H×W×3).
    #[arg(long)]
    pub out_xyz: PathBuf,
    /// Frames to generate; defaults to the training clip length.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Euler integration steps.
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    #[command(flatten)]
    pub common: Common,
    /// XYZ frames (TNSR, T×H×W×3 or H×W×3).
    #[arg(long)]
    pub xyz: PathBuf,
    /// Output camera JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// shared-k or per-frame-k.
    #[arg(long, value_parser = parse_mode, default_value = "shared-k")]
    pub mode: FocalMode,
    /// Output depth maps (TNSR, T×H×W; 0 marks unusable pixels).
    #[arg(long)]
    pub depth: Option<PathBuf>,
    /// Output per-frame solver report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iterations: usize,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Input manifest (JSON lines); file paths inside resolve against its directory.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output manifest with keep flags and rejection reasons.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 15.0)]
    pub luma_min: f64,
    #[arg(long, default_value_t = 240.0)]
    pub luma_max: f64,
    /// Confidence threshold for the high-confidence pixel ratio.
    #[arg(long, default_value_t = 1.5)]
    pub tau: f64,
    /// Percentage kept by each confidence selection.
    #[arg(long, default_value_t = 30.0)]
    pub top_r: f64,
    #[arg(long, default_value_t = 90.0)]
    pub alignment_percentile: f64,
    #[arg(long, default_value_t = 90.0)]
    pub velocity_percentile: f64,
    #[arg(long, default_value_t = 90.0)]
    pub acceleration_percentile: f64,
    #[arg(long, default_value_t = 90.0)]
    pub curvature_percentile: f64,
    /// Curvature denominator offset.
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    /// How the two confidence selections combine.
    #[arg(long, value_enum, default_value = "intersection")]
    pub combine: CombineArg,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ToPlyArgs {
    #[command(flatten)]
    pub common: Common,
    /// RGB frames (TNSR, T×H×W×3 in [0, 1]).
    #[arg(long)]
    pub rgb: PathBuf,
    /// XYZ frames (TNSR, T×H×W×3).
    #[arg(long)]
    pub xyz: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[arg(long)]
    pub out: PathBuf,
}
