//! Command-line driver: manifest in, tensors/CSV/JSON/SVG out.

mod commands;
pub mod plot;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::ErfRegion;
use crate::cam::WeightFilter;
use crate::error::{Error, Result};
use crate::scoring::{Protocol, ReferenceScore, Variant};

#[derive(Debug, Parser)]
#[command(name = "wsol", version, about = "CAM/PC1 localization maps, MaxBoxAcc scoring and feature-map diagnostics")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Dataset manifest (JSON).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Scalar type used for all computation and written tensors.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalized class activation map per image (ground-truth class).
    Cam(CamArgs),
    /// Polarity-corrected PC1 map per image plus contribution rates.
    Pc1(Pc1Args),
    /// MaxBoxAcc / MaxBoxAccV2 over saved heatmaps.
    Score(ScoreArgs),
    /// Per-channel weight, activation area and pooled value.
    Stats(StatsArgs),
    /// Effective receptive field area ratios and AUC of a contribution map.
    Erf(ErfArgs),
    /// Held-out reconstruction error of channel maps vs dictionary size.
    Complexity(ComplexityArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterMode {
    All,
    Positive,
    Negative,
    Band,
}

#[derive(Debug, Clone, Args)]
pub struct ImageSelection {
    /// Restrict to these image ids (comma separated). Default: every image.
    #[arg(long, value_delimiter = ',')]
    pub images: Option<Vec<String>>,
    /// Restrict to one split.
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    TrainWeaksup,
    TrainFullsup,
    Test,
}

#[derive(Debug, Clone, Args)]
pub struct CamArgs {
    #[command(flatten)]
    pub selection: ImageSelection,
    /// Classifier weights (N, C); overrides the manifest's `weights`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FilterMode::All)]
    pub filter: FilterMode,
    /// Band filter keeps channels with band_lo < w <= band_hi.
    #[arg(long)]
    pub band_lo: Option<f64>,
    #[arg(long)]
    pub band_hi: Option<f64>,
}

impl CamArgs {
    pub fn weight_filter(&self) -> Result<WeightFilter> {
        match (self.filter, self.band_lo, self.band_hi) {
            (FilterMode::All, ..) => Ok(WeightFilter::All),
            (FilterMode::Positive, ..) => Ok(WeightFilter::PositiveOnly),
            (FilterMode::Negative, ..) => Ok(WeightFilter::NegativeOnly),
            (FilterMode::Band, Some(lo), Some(hi)) => WeightFilter::band(lo, hi),
            (FilterMode::Band, ..) => Err(Error::InvalidConfig("--filter band needs --band-lo and --band-hi".into())),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Pc1Args {
    #[command(flatten)]
    pub selection: ImageSelection,
    /// Also fit one PCA over all selected images pooled together.
    #[arg(long)]
    pub batch: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    V1,
    V2,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::V1 => Variant::V1,
            VariantArg::V2 => Variant::V2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Honest,
    Optimistic,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Honest => Protocol::Honest,
            ProtocolArg::Optimistic => Protocol::Optimistic,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    /// Directory holding `<image_id>.<kind>.npy` heatmaps.
    #[arg(long)]
    pub heatmaps: PathBuf,
    /// Heatmap file suffix, e.g. `cam` or `pc1`.
    #[arg(long, default_value = "cam")]
    pub kind: String,
    #[arg(long, value_enum, default_value_t = VariantArg::V1)]
    pub variant: VariantArg,
    /// Points in the threshold grid over [0, 1] (101 or 1001).
    #[arg(long, default_value_t = 101)]
    pub grid: usize,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Honest)]
    pub protocol: ProtocolArg,
    /// Known score to compare the final number against.
    #[arg(long, value_enum)]
    pub reference: Option<ReferenceArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReferenceArg {
    ReplknetCam,
    ReplknetPc1,
}

impl From<ReferenceArg> for ReferenceScore {
    fn from(r: ReferenceArg) -> Self {
        match r {
            ReferenceArg::ReplknetCam => ReferenceScore::ReplknetCam,
            ReferenceArg::ReplknetPc1 => ReferenceScore::ReplknetPc1,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub selection: ImageSelection,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Raw activation level for the activation-area statistic.
    #[arg(long, default_value_t = crate::analysis::DEFAULT_RAW_THRESHOLD)]
    pub raw_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegionArg {
    CenteredSquare,
    TopPixels,
}

impl From<RegionArg> for ErfRegion {
    fn from(r: RegionArg) -> Self {
        match r {
            RegionArg::CenteredSquare => ErfRegion::CenteredSquare,
            RegionArg::TopPixels => ErfRegion::TopPixels,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ErfArgs {
    /// Nonnegative (H, W) contribution map; (1, H, W) is also accepted.
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long, value_enum, default_value_t = RegionArg::CenteredSquare)]
    pub region: RegionArg,
}

#[derive(Debug, Clone, Args)]
pub struct ComplexityArgs {
    #[command(flatten)]
    pub selection: ImageSelection,
    /// Dictionary sizes, ascending.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    pub components: Vec<usize>,
    #[arg(long, default_value_t = crate::analysis::DEFAULT_SPARSITY)]
    pub sparsity: usize,
    #[arg(long, default_value_t = crate::analysis::DEFAULT_ITERS)]
    pub iters: usize,
    /// Share of sampled channel maps used for learning; the rest are held out.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Upper bound on sampled channel maps.
    #[arg(long, default_value_t = 2000)]
    pub max_maps: usize,
}

/// Runs a parsed command inside a pool of `--threads` workers.
pub fn run(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if cli.global.threads > 0 {
        pool = pool.num_threads(cli.global.threads);
    }
    let pool = pool.build().map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    std::fs::create_dir_all(&cli.global.out)?;
    pool.install(|| match cli.global.precision {
        Precision::F32 => commands::dispatch::<f32>(&cli.global, &cli.command),
        Precision::F64 => commands::dispatch::<f64>(&cli.global, &cli.command),
    })
}
