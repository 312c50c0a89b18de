use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "radar4d", version, about = "4D radar tensor pre-processing and distillation tools")]
pub struct Cli {
    /// Worker threads for frame and voxel parallelism (default: all cores)
    #[arg(long, global = true, env = "RADAR4D_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic scene to a 4DRT file
    GenScene(GenSceneArgs),
    /// Extract a point cloud from one or more 4DRT files
    Preproc(PreprocArgs),
    /// Print size statistics for RPC1 clouds
    Stats(StatsArgs),
    /// Run several modes/percentiles on one tensor and print a size table
    Compare(CompareArgs),
    /// Splat box labels into a BEV heatmap (PGM + CSV)
    Heatmap(HeatmapArgs),
    /// Masked MSE between a teacher and a student cloud
    DistillDemo(DistillArgs),
    /// Aggregate + densify forward passes on lifted BEV features
    FusionDemo(FusionArgs),
    /// Wall time per pipeline stage
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    PolarPercentile,
    Cartesian,
    Cfar,
    Tlp,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::PolarPercentile => "polar-percentile",
            Mode::Cartesian => "cartesian",
            Mode::Cfar => "cfar",
            Mode::Tlp => "tlp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Azimuth,
    Range,
    Elevation,
}

#[derive(Debug, Args)]
pub struct GenSceneArgs {
    /// Scene description (TOML); a built-in demo scene when omitted
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Overrides the scene's noise seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output 4DRT path
    #[arg(long)]
    pub out: PathBuf,
}

/// Window and threshold flags shared by the CFAR-based modes.
#[derive(Debug, Clone, Args)]
pub struct CfarArgs {
    /// CFAR (cfar mode) or TLP (tlp mode) config file; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training cells per side: one value for every axis, or azimuth,range[,elevation]
    #[arg(long, value_delimiter = ',')]
    pub training: Option<Vec<usize>>,
    /// Guard cells per side, same layout as --training
    #[arg(long, value_delimiter = ',')]
    pub guard: Option<Vec<usize>>,
    /// Axes the window spans
    #[arg(long, value_delimiter = ',')]
    pub axes: Option<Vec<Axis>>,
    /// Threshold multiplier
    #[arg(long, conflicts_with = "pfa")]
    pub alpha: Option<f64>,
    /// Target false-alarm rate; sets the multiplier from the window size
    #[arg(long)]
    pub pfa: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PreprocArgs {
    /// Input 4DRT file; repeat for a batch
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output RPC1 file, or a directory when several inputs are given
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "polar-percentile")]
    pub mode: Mode,
    /// Percentile; the stage-2 percentile in tlp mode
    /// [default: 99.9 polar-percentile, 90 cartesian]
    #[arg(long)]
    pub r: Option<f64>,
    /// Cartesian voxel edge in meters
    #[arg(long, default_value_t = 0.4)]
    pub voxel: f64,
    /// Also write the resampled voxel volume (cartesian mode, single input)
    #[arg(long)]
    pub voxels_out: Option<PathBuf>,
    /// Also write the cloud as CSV (single input)
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub cfar: CfarArgs,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// RPC1 files
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Percentiles to compare; repeat the flag [default: 99.9 and 90]
    #[arg(long = "r")]
    pub rs: Vec<f64>,
    /// Modes to run; percentile modes run once per --r
    #[arg(long = "mode", value_enum)]
    pub modes: Vec<Mode>,
    #[arg(long, default_value_t = 0.4)]
    pub voxel: f64,
    #[command(flatten)]
    pub cfar: CfarArgs,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    /// Label file (TOML, [[labels]] tables)
    #[arg(long)]
    pub labels: PathBuf,
    /// Output PGM image
    #[arg(long)]
    pub out: PathBuf,
    /// Output CSV of the heatmap values
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// BEV cell edge in meters
    #[arg(long, default_value_t = 0.4)]
    pub cell: f64,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub student: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 0.4)]
    pub cell: f64,
    /// Detection loss to combine with the distillation loss
    #[arg(long, default_value_t = 0.0)]
    pub l_detect: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
}

#[derive(Debug, Args)]
pub struct FusionArgs {
    /// Tensor from which the teacher and student clouds are extracted
    #[arg(long, required_unless_present = "teachers", conflicts_with_all = ["teachers", "student"])]
    pub input: Option<PathBuf>,
    /// Teacher RPC1 cloud; give exactly three
    #[arg(long = "teacher", requires = "student")]
    pub teachers: Vec<PathBuf>,
    /// Student RPC1 cloud
    #[arg(long)]
    pub student: Option<PathBuf>,
    /// Labels for the loss mask; unmasked when omitted
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// BEV height and width in cells
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 128)]
    pub fused_width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Copies of the frame processed in the parallel batch stage
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 99.9)]
    pub r: f64,
    #[arg(long, default_value_t = 0.4)]
    pub voxel: f64,
}
