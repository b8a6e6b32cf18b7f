//! Command-line pipelines over the `ssd-core` detector.
//!
//! Every subcommand is deterministic given its input files and `--seed`.
//! Tables go to stdout unless `--out` names a file, which is then written
//! atomically.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Environment variable capping the worker threads used for batch scoring.
pub const THREADS_ENV: &str = "SSD_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ssd", version, about = "Feature-space out-of-distribution detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic feature file.
    Synth(SynthArgs),
    /// Fit a detector on the training part of an in-distribution feature file.
    Fit(FitArgs),
    /// Choose a score threshold on calibration features.
    Calibrate(CalibrateArgs),
    /// Score every row of a feature file.
    Score(ScoreArgs),
    /// Flag scores above a calibrated threshold.
    Classify(ClassifyArgs),
    /// AUROC, AUPR and FPR at a target TPR on an in/out test pair.
    Evaluate(EvaluateArgs),
    /// Fit a detector that also uses a few known outliers.
    Fewshot(FewshotArgs),
    /// Per-eigenvector discrimination table for a single-cluster model.
    EigenReport(EigenReportArgs),
    /// Train the toy contrastive encoder and compare detection before and after.
    TrainToy(TrainToyArgs),
    /// AUROC table over cluster counts.
    SweepClusters(SweepClustersArgs),
    /// Few-shot AUROC table over augmentation counts.
    SweepAugment(SweepAugmentArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Named construction: canonical-in, canonical-ood, near-in, near-ood, blobs.
    #[arg(long, conflicts_with = "spec")]
    pub preset: Option<String>,
    /// JSON synthesis spec (overrides --d/--n; --seed still applies).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Feature file to write; `.bin`/`.ssdf` selects the binary format.
    #[arg(long)]
    pub out: PathBuf,
    /// Force the output format (csv or binary).
    #[arg(long)]
    pub format: Option<String>,
    /// Also write one component label per line.
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// In-distribution features.
    pub features: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = positive)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of rows used for fitting; the rest is held out for calibration.
    #[arg(long, default_value_t = 0.9)]
    pub split: f64,
    /// Model features as given instead of ℓ2-normalizing them.
    #[arg(long)]
    pub no_normalize: bool,
    /// Model file to write.
    #[arg(long)]
    pub model: PathBuf,
    /// Save the held-out calibration rows here.
    #[arg(long)]
    pub cal_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Calibration features.
    #[arg(long, conflicts_with = "features", required_unless_present = "features")]
    pub cal: Option<PathBuf>,
    /// In-distribution features to re-split exactly as `fit` did.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, default_value_t = 0.9)]
    pub split: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.95)]
    pub tpr: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    pub features: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Score table written by `score`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Calibration written by `calibrate`.
    #[arg(long)]
    pub calibration: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ScoreKind {
    /// Mahalanobis distance to the nearest cluster (or the few-shot score).
    Ssd,
    /// Squared euclidean distance to the nearest cluster mean.
    Euclid,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// In-distribution test features.
    #[arg(long = "in")]
    pub in_test: PathBuf,
    /// Outlier test features.
    #[arg(long)]
    pub ood: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub tpr: f64,
    #[arg(long, value_enum, default_value_t = ScoreKind::Ssd)]
    pub score: ScoreKind,
    /// Emit JSON instead of TSV.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct FewshotArgs {
    /// In-distribution training features.
    #[arg(long = "in")]
    pub in_features: PathBuf,
    /// Known outliers; `--k` of them are drawn with `--seed`.
    #[arg(long)]
    pub shots: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub augment: usize,
    #[arg(long, default_value_t = 0.1)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use the plain sample covariance of the outliers.
    #[arg(long)]
    pub no_shrinkage: bool,
    #[arg(long)]
    pub no_normalize: bool,
    /// Few-shot model file to write.
    #[arg(long)]
    pub model: PathBuf,
    /// In-distribution test features for the comparison table.
    #[arg(long, requires = "eval_ood")]
    pub eval_in: Option<PathBuf>,
    /// Outlier test features for the comparison table.
    #[arg(long, requires = "eval_in")]
    pub eval_ood: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    pub tpr: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct EigenReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub in_test: PathBuf,
    #[arg(long)]
    pub ood: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 2.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0.5)]
    pub jitter: f64,
    /// Draw fresh views every step instead of one fixed pair per item.
    #[arg(long)]
    pub resample: bool,
    /// Items per step (0 = all).
    #[arg(long, default_value_t = 0)]
    pub batch: usize,
    /// Train with class labels (SupCon) instead of NT-Xent.
    #[arg(long)]
    pub supervised: bool,
    /// Write the `step,loss` trace here.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Write the trained encoder weights (JSON) here.
    #[arg(long)]
    pub encoder_out: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SweepClustersArgs {
    /// In-distribution training features.
    #[arg(long = "in")]
    pub in_features: PathBuf,
    #[arg(long)]
    pub in_test: PathBuf,
    #[arg(long)]
    pub ood: PathBuf,
    /// Comma-separated cluster counts.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub clusters: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.95)]
    pub tpr: f64,
    #[arg(long)]
    pub no_normalize: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SweepAugmentArgs {
    #[arg(long = "in")]
    pub in_features: PathBuf,
    #[arg(long)]
    pub shots: PathBuf,
    #[arg(long)]
    pub in_test: PathBuf,
    #[arg(long)]
    pub ood: PathBuf,
    /// Comma-separated augmentation counts.
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20")]
    pub augment: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0.1)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.95)]
    pub tpr: f64,
    #[arg(long)]
    pub no_normalize: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match with_thread_cap(|| commands::run(&cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn with_thread_cap(f: impl FnOnce() -> anyhow::Result<()> + Send) -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return f();
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()?
        .install(f)
}
