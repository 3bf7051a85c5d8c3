mod case;
mod eval;
mod output;
mod synth;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use segqc_core::detection::{DEFAULT_MIN_AREA_MM2, DEFAULT_MIN_D, DEFAULT_THRESHOLD};
use segqc_core::extraction::{BandSource, ExtractionParams, MinComponent};
use segqc_core::metrics::{DiceEstMode, Metric, MetricConfig, DEFAULT_EPSILON};

/// Segmentation quality control from voxel error probabilities.
#[derive(Debug, Parser)]
#[command(name = "segqc", version)]
struct Cli {
    /// Worker threads for per-case work (0 = all cores).
    #[arg(long, global = true, env = "SEGQC_JOBS", default_value_t = 0)]
    jobs: usize,

    /// Omit the generation timestamp so outputs are byte-reproducible.
    #[arg(long, global = true)]
    no_timestamp: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimated Dice, IoU, RVD and ARVD of a mask from its error probabilities.
    Metrics(case::MetricsArgs),
    /// Remove the boundary band and small components from an estimated error.
    ExtractError(case::ExtractArgs),
    /// Bounding boxes of error regions.
    Detect(case::DetectArgs),
    /// Rank the cases of a manifest worst first.
    Rank(case::RankArgs),
    /// Rank the slices of one volume worst first.
    RankSlices(case::RankSlicesArgs),
    /// Quality estimate from an ensemble of test-time-augmentation masks.
    TtaEstimate(case::TtaArgs),
    /// MAE, Pearson and paired t-test of estimated against true metrics.
    EvalMetrics(eval::EvalMetricsArgs),
    /// Precision and recall of detected error regions over IoU thresholds.
    EvalDetect(eval::EvalDetectArgs),
    /// 3D and 2D correction curves for every ranking policy.
    EvalCorrection(eval::EvalCorrectionArgs),
    /// Write a synthetic dataset with a manifest.
    Synth(synth::SynthArgs),
}

/// Settings shared by every command.
#[derive(Debug, Clone, Copy)]
pub struct Context {
    pub no_timestamp: bool,
}

#[derive(Debug, Clone, Args)]
pub struct MetricOpts {
    /// Estimated-Dice denominator convention.
    #[arg(long, default_value = "standard")]
    pub mode: DiceEstMode,
    /// Stabilizer added to every estimate denominator.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
}

impl MetricOpts {
    pub fn config(&self) -> anyhow::Result<MetricConfig> {
        Ok(MetricConfig::new(self.epsilon, self.mode)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SizeUnit {
    Vox,
    Mm2,
}

#[derive(Debug, Clone, Args)]
pub struct ExtractOpts {
    /// Half-width of the square structuring element.
    #[arg(long, default_value_t = 1)]
    pub radius: usize,
    /// Times the structuring element is applied.
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
    /// Smallest component kept after band removal.
    #[arg(long, default_value_t = 10.0)]
    pub min_size: f64,
    #[arg(long, value_enum, default_value = "vox")]
    pub min_size_unit: SizeUnit,
    /// Contour the band is built around: the error itself or the mask.
    #[arg(long, default_value = "self")]
    pub band_source: BandSource,
}

impl ExtractOpts {
    pub fn params(&self) -> ExtractionParams {
        ExtractionParams {
            radius: self.radius,
            iterations: self.iterations,
            min_component: match self.min_size_unit {
                SizeUnit::Vox => MinComponent::Voxels(self.min_size),
                SizeUnit::Mm2 => MinComponent::Mm2(self.min_size),
            },
            band_source: self.band_source,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DetectOpts {
    /// Boxes closer than this many voxels are unified.
    #[arg(long, default_value_t = DEFAULT_MIN_D)]
    pub min_d: usize,
    /// Boxes smaller than this area are dropped.
    #[arg(long, default_value_t = DEFAULT_MIN_AREA_MM2)]
    pub min_area_mm2: f64,
    /// Error probability threshold for binarization.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Keep boxes larger than half the slice.
    #[arg(long)]
    pub keep_oversized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Dice,
    Iou,
    Arvd,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Dice => Metric::Dice,
            MetricArg::Iou => Metric::Iou,
            MetricArg::Arvd => Metric::Arvd,
        }
    }
}

/// Error raised for invalid flag combinations; exits with the usage code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_PRECONDITION: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<segqc_core::Error>() {
            return match e {
                segqc_core::Error::Precondition(_) => EXIT_PRECONDITION,
                segqc_core::Error::InvalidParameter(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = Context {
        no_timestamp: cli.no_timestamp,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build()?;
    pool.install(|| match cli.command {
        Command::Metrics(a) => case::metrics(&a, ctx),
        Command::ExtractError(a) => case::extract_error(&a),
        Command::Detect(a) => case::detect(&a),
        Command::Rank(a) => case::rank(&a),
        Command::RankSlices(a) => case::rank_slices(&a),
        Command::TtaEstimate(a) => case::tta_estimate(&a),
        Command::EvalMetrics(a) => eval::eval_metrics(&a),
        Command::EvalDetect(a) => eval::eval_detect(&a),
        Command::EvalCorrection(a) => eval::eval_correction(&a),
        Command::Synth(a) => synth::synth(&a),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
