use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "slnet",
    version,
    about = "Sparse/low-rank background removal for SMLM stacks"
)]
#[command(args_override_self = true)]
pub struct Cli {
    /// Worker threads for frame-parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// key = value file supplying defaults for any flag; flags given on the
    /// command line win. Run manifests are valid config files.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Where to write the run manifest (default: next to the primary output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic STORM stack with ground truth.
    Synth(SynthArgs),
    /// Train an SLNet model on a stack.
    Train(TrainArgs),
    /// Split a stack into sparse and low-rank parts.
    Decompose(DecomposeArgs),
    /// Median or rolling-ball background subtraction.
    Baseline(BaselineArgs),
    /// Detect and fit emitters.
    Localize(LocalizeArgs),
    /// Histogram-render a localization table.
    Render(RenderArgs),
    /// Sparsity, localization error and SQUIRREL scores.
    Metrics(MetricsArgs),
    /// Train over a grid of alpha, mu and seeds and report output sparsity.
    Sweep(SweepArgs),
    /// Time every decomposition method on a stack.
    Bench(BenchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Decompose(_) => "decompose",
            Command::Baseline(_) => "baseline",
            Command::Localize(_) => "localize",
            Command::Render(_) => "render",
            Command::Metrics(_) => "metrics",
            Command::Sweep(_) => "sweep",
            Command::Bench(_) => "bench",
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output TIFF stack.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth CSV (frame, emitter, x_px, y_px of every active emitter).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Noiseless time-averaged signal + background, as a one-page 16-bit TIFF.
    #[arg(long)]
    pub widefield: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 300)]
    pub frames: usize,
    #[arg(long, default_value_t = 40)]
    pub emitters: usize,
    /// PSF standard deviation in pixels.
    #[arg(long, default_value_t = 1.3)]
    pub psf_sigma: f64,
    /// Per-frame probability that an emitter is on.
    #[arg(long, default_value_t = 0.05)]
    pub blink_prob: f64,
    #[arg(long, default_value_t = 1500.0)]
    pub photons: f64,
    #[arg(long, default_value_t = 1.5)]
    pub read_noise: f64,
    /// Disable Poisson shot noise.
    #[arg(long)]
    pub no_shot_noise: bool,
    /// Number of independently modulated background patterns; 1 uses the
    /// built-in three-blob pattern.
    #[arg(long, default_value_t = 1)]
    pub background_rank: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16, value_parser = parse_bit_depth)]
    pub bit_depth: u8,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_model: PathBuf,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub out_report: Option<PathBuf>,
    #[command(flatten)]
    pub hp: HyperArgs,
    /// Train on the first N frames only.
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Debug, Args, Clone)]
pub struct HyperArgs {
    /// Singular value shrinkage threshold.
    #[arg(long, default_value_t = 0.01)]
    pub mu: f64,
    /// Weight of the sparse term.
    #[arg(long, default_value_t = 12.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Frame offset between triplet members.
    #[arg(long, default_value_t = 50)]
    pub delta: usize,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 3)]
    pub kernel: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = NormArg::Max)]
    pub normalization: NormArg,
    #[arg(long, value_enum, default_value_t = GradientArg::StraightThrough)]
    pub gradient: GradientArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    Max,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradientArg {
    StraightThrough,
    Subspace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Slnet,
    Rpca,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Trained weights (slnet backend).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Backend::Slnet)]
    pub backend: Backend,
    #[arg(long)]
    pub out_sparse: PathBuf,
    #[arg(long)]
    pub out_lowrank: Option<PathBuf>,
    /// Frame offset between triplet members.
    #[arg(long, default_value_t = 50)]
    pub delta: usize,
    /// Shrinkage threshold, used only with --shrink-at-inference.
    #[arg(long, default_value_t = 0.01)]
    pub mu: f64,
    /// Apply the singular value shrinkage to the network output.
    #[arg(long)]
    pub shrink_at_inference: bool,
    /// RPCA weight; defaults to 1/sqrt(max(3, pixels)).
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 16, value_parser = parse_bit_depth)]
    pub bit_depth: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineMethod {
    Median,
    Rollingball,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub method: BaselineMethod,
    /// Rolling-ball radius in pixels.
    #[arg(long, default_value_t = 10)]
    pub radius: usize,
    #[arg(long, default_value_t = 16, value_parser = parse_bit_depth)]
    pub bit_depth: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ThresholdMode {
    /// Peaks of the second wavelet plane above k times the first plane's std.
    Wavelet,
    /// median + k * 1.4826 * MAD of the frame.
    Robust,
    /// A fixed intensity.
    Absolute,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ThresholdMode::Wavelet)]
    pub threshold_mode: ThresholdMode,
    /// Factor k, or the intensity for --threshold-mode absolute.
    #[arg(long, default_value_t = 1.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 4.0)]
    pub min_separation: f64,
    #[arg(long, default_value_t = 3)]
    pub roi_radius: usize,
    #[arg(long, default_value_t = 100.0)]
    pub pixel_size: f64,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub locs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Camera frame width in pixels.
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    #[arg(long, default_value_t = 4)]
    pub magnification: usize,
    #[arg(long, default_value_t = 100.0)]
    pub pixel_size: f64,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Output CSV with `metric,value` rows.
    #[arg(long)]
    pub out: PathBuf,
    /// Stack whose sparsity is reported.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Localization CSV for localization error and SQUIRREL scores.
    #[arg(long)]
    pub locs: Option<PathBuf>,
    /// Ground-truth CSV written by `synth`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Widefield TIFF written by `synth`.
    #[arg(long)]
    pub widefield: Option<PathBuf>,
    #[arg(long, default_value_t = 1.5)]
    pub match_radius: f64,
    #[arg(long, default_value_t = 4)]
    pub magnification: usize,
    /// Blur applied to the rendering before comparison, in rendered pixels
    /// (default: 1.3 * magnification).
    #[arg(long)]
    pub blur_sigma: Option<f64>,
    #[arg(long, default_value_t = 100.0)]
    pub pixel_size: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,3,12,30")]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    pub mus: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 50)]
    pub delta: usize,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Include the SLNet backend using these weights.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub delta: usize,
    #[arg(long, default_value_t = 10)]
    pub radius: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
}

fn parse_bit_depth(s: &str) -> Result<u8, String> {
    match s {
        "8" => Ok(8),
        "16" => Ok(16),
        _ => Err(format!("bit depth must be 8 or 16, got '{s}'")),
    }
}
