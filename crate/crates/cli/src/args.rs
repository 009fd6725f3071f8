use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use slisemap::data::CsvOptions;
use slisemap::{DistanceKind, Hyperparameters, ModelFamily, OptimiserSettings};

/// Supervised local-surrogate manifold embeddings: fit, evaluate, compare,
/// cluster and plot.
#[derive(Debug, Parser)]
#[command(name = "slisemap", version, about)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlobalArgs {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0, env = "SLISEMAP_SEED")]
    pub seed: u64,
    /// Worker threads; 0 uses all available cores. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0, env = "SLISEMAP_THREADS")]
    pub threads: usize,
    /// Log more (-v: debug, -vv: trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    #[serde(skip)]
    pub verbose: u8,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    #[serde(skip)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalise a CSV dataset and fit an embedding with local models.
    Fit(FitArgs),
    /// Compute quality metrics for a fitted solution.
    Evaluate(EvaluateArgs),
    /// Compare the fitted embedding against PCA and external embeddings.
    Compare(CompareArgs),
    /// k-means clustering of the local-model coefficients.
    Cluster(ClusterArgs),
    /// Write SVG plots of a solution.
    Plot(PlotArgs),
    /// Generate piecewise-linear synthetic data.
    Synth(SynthArgs),
    /// fit, cluster, plot and evaluate in one go.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyArg {
    Regression,
    Classification,
}

impl From<FamilyArg> for ModelFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Regression => ModelFamily::Regression,
            FamilyArg::Classification => ModelFamily::Classification,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceArg {
    Euclidean,
    Squared,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Name of the target column.
    #[arg(long, env = "SLISEMAP_TARGET")]
    pub target: String,
    /// Field delimiter.
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Columns to ignore (comma separated or repeated).
    #[arg(long, value_delimiter = ',')]
    pub ignore: Vec<String>,
    /// Local-model family.
    #[arg(long, value_enum, default_value_t = FamilyArg::Regression, env = "SLISEMAP_FAMILY")]
    pub family: FamilyArg,
}

impl DataArgs {
    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            delimiter: self.delimiter as u8,
            ignore: self.ignore.clone(),
            family: self.family.into(),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HyperArgs {
    /// Embedding dimension.
    #[arg(long, default_value_t = 2, env = "SLISEMAP_DIM")]
    pub dim: usize,
    /// Embedding radius.
    #[arg(long, default_value_t = 3.5, env = "SLISEMAP_RADIUS")]
    pub radius: f64,
    /// Lasso penalty on every coefficient.
    #[arg(long, default_value_t = 1e-4, env = "SLISEMAP_LASSO")]
    pub lasso: f64,
    /// Ridge penalty on every coefficient.
    #[arg(long, default_value_t = 1e-4, env = "SLISEMAP_RIDGE")]
    pub ridge: f64,
    /// Embedding distance inside the softmax kernel.
    #[arg(long, value_enum, default_value_t = DistanceArg::Euclidean, env = "SLISEMAP_DISTANCE")]
    pub distance: DistanceArg,
    /// Leave the intercept out of the penalties.
    #[arg(long)]
    pub no_intercept_penalty: bool,
    /// L-BFGS iterations per optimisation phase.
    #[arg(long, default_value_t = 500, env = "SLISEMAP_MAX_ITERATIONS")]
    pub max_iterations: usize,
    /// Gradient infinity-norm stopping tolerance.
    #[arg(long, default_value_t = 1e-4, env = "SLISEMAP_TOLERANCE")]
    pub tolerance: f64,
    /// L-BFGS history size.
    #[arg(long, default_value_t = 10, env = "SLISEMAP_HISTORY")]
    pub history: usize,
    /// Maximum escape-and-reoptimise rounds.
    #[arg(long, default_value_t = 2, env = "SLISEMAP_ESCAPE_ROUNDS")]
    pub escape_rounds: usize,
}

impl HyperArgs {
    pub fn build(&self, family: FamilyArg, seed: u64) -> Hyperparameters {
        Hyperparameters {
            dim: self.dim,
            radius: self.radius,
            lambda_lasso: self.lasso,
            lambda_ridge: self.ridge,
            family: family.into(),
            distance: match self.distance {
                DistanceArg::Euclidean => DistanceKind::Euclidean,
                DistanceArg::Squared => DistanceKind::SquaredEuclidean,
            },
            penalise_intercept: !self.no_intercept_penalty,
            optimiser: OptimiserSettings {
                max_iterations: self.max_iterations,
                gradient_tolerance: self.tolerance,
                history: self.history,
                escape_rounds: self.escape_rounds,
            },
            seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Solution JSON to write.
    #[arg(long, default_value = "solution.json")]
    pub out: PathBuf,
    /// Also write the embedding as headerless CSV.
    #[arg(long)]
    pub embedding_csv: Option<PathBuf>,
    /// Also write the coefficients as CSV.
    #[arg(long)]
    pub coefficients_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct QualityArgs {
    /// Neighbourhood size as a fraction of the items.
    #[arg(long, default_value_t = 0.1)]
    pub k_fraction: f64,
    /// Quantile of the global model's losses used as coverage threshold.
    #[arg(long, default_value_t = 0.3)]
    pub coverage_quantile: f64,
    /// Fixed coverage threshold (overrides the quantile); accepts `inf`.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Count each item among its own neighbours.
    #[arg(long)]
    pub include_self: bool,
}

impl QualityArgs {
    pub fn options(&self) -> slisemap::evaluation::QualityOptions {
        slisemap::evaluation::QualityOptions {
            k_fraction: self.k_fraction,
            coverage_quantile: self.coverage_quantile,
            include_self: self.include_self,
            threshold: self.threshold,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    /// Solution JSON produced by `fit`.
    #[arg(long)]
    pub solution: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Fidelity and coverage of the local models (default when nothing else is requested).
    #[arg(long)]
    pub quality: bool,
    /// Permutation loss over this many seeds.
    #[arg(long, value_name = "SEEDS", num_args = 0..=1, default_missing_value = "5")]
    pub permutation: Option<usize>,
    /// Resampling experiment over these sample sizes, e.g. `100,200,400`.
    #[arg(long, value_delimiter = ',', value_name = "SIZES")]
    pub stability: Vec<usize>,
    /// Repetitions per size in the resampling experiment.
    #[arg(long, default_value_t = 10)]
    pub repetitions: usize,
    /// CSV for the resampling experiment rows (default: next to `--out`).
    #[arg(long)]
    pub stability_out: Option<PathBuf>,
    #[command(flatten)]
    pub quality_options: QualityArgs,
    /// Metric report JSON to write.
    #[arg(long, default_value = "metrics.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// External embedding as `label=path` (headerless CSV, one row per data row).
    #[arg(long = "external", value_name = "LABEL=PATH")]
    pub externals: Vec<String>,
    /// Number of resamples.
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    /// Fraction of rows drawn (without replacement) in each resample.
    #[arg(long, default_value_t = 0.8)]
    pub fraction: f64,
    /// Keep PCA and external coordinates at their own scale instead of rescaling them to the radius.
    #[arg(long)]
    pub no_rescale: bool,
    #[command(flatten)]
    pub quality_options: QualityArgs,
    /// Comparison table JSON to write.
    #[arg(long, default_value = "comparison.json")]
    pub out: PathBuf,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClusterArgs {
    /// Solution JSON produced by `fit`.
    #[arg(long)]
    pub solution: PathBuf,
    /// Number of clusters.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    /// k-means++ restarts.
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    /// Dataset the solution was fitted on, for per-cluster target medians.
    #[arg(long, requires = "target")]
    pub data: Option<PathBuf>,
    #[arg(long, env = "SLISEMAP_TARGET")]
    pub target: Option<String>,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    #[arg(long, value_delimiter = ',')]
    pub ignore: Vec<String>,
    /// Cluster summary JSON to write.
    #[arg(long, default_value = "clusters.json")]
    pub out: PathBuf,
    /// Per-cluster coefficient table (default: `--out` with a `.csv` extension).
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    /// Embedding coloured by cluster.
    Scatter,
    /// Mean coefficients per cluster.
    Coefficients,
    /// Binned median target over the embedding.
    Heatmap,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlotOptions {
    /// Cells per side of the heat-map grid.
    #[arg(long, default_value_t = 20)]
    pub grid_size: usize,
    /// Lower bound of the heat-map colour scale (default: smallest cell median).
    #[arg(long, allow_hyphen_values = true)]
    pub color_min: Option<f64>,
    /// Upper bound of the heat-map colour scale (default: largest cell median).
    #[arg(long, allow_hyphen_values = true)]
    pub color_max: Option<f64>,
    /// Image width in pixels.
    #[arg(long, default_value_t = 640)]
    pub width: u32,
    /// Image height in pixels.
    #[arg(long, default_value_t = 480)]
    pub height: u32,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlotArgs {
    /// Solution JSON produced by `fit`.
    #[arg(long)]
    pub solution: PathBuf,
    /// Cluster summary JSON produced by `cluster`.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Dataset the solution was fitted on (needed for the heat map).
    #[arg(long, requires = "target")]
    pub data: Option<PathBuf>,
    #[arg(long, env = "SLISEMAP_TARGET")]
    pub target: Option<String>,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    #[arg(long, value_delimiter = ',')]
    pub ignore: Vec<String>,
    /// Plots to draw (default: all).
    #[arg(long = "kind", value_enum)]
    pub kinds: Vec<PlotKind>,
    #[command(flatten)]
    pub plot: PlotOptions,
    /// Directory for the SVG files.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub m: usize,
    /// Number of linear regimes.
    #[arg(long, default_value_t = 3)]
    pub regimes: usize,
    /// Standard deviation of the target noise.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Spread of the regime feature means; 0 draws all features from one distribution.
    #[arg(long, default_value_t = 0.0)]
    pub x_separation: f64,
    /// Scale of the random regime coefficients.
    #[arg(long, default_value_t = 1.0)]
    pub coefficient_scale: f64,
    /// Targets are sigmoid probabilities instead of linear responses.
    #[arg(long, value_enum, default_value_t = FamilyArg::Regression)]
    pub family: FamilyArg,
    /// Replace the targets with independent noise.
    #[arg(long)]
    pub pure_noise: bool,
    /// Dataset CSV to write (features `x1..xm`, target `y`).
    #[arg(long, default_value = "synthetic.csv")]
    pub out: PathBuf,
    /// Also write the generating regimes and coefficients as JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Number of clusters.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    /// k-means++ restarts.
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    /// Also compute the permutation loss over this many seeds.
    #[arg(long, default_value_t = 0)]
    pub permutation: usize,
    #[command(flatten)]
    pub quality_options: QualityArgs,
    #[command(flatten)]
    pub plot: PlotOptions,
    /// Output directory.
    #[arg(long, default_value = "slisemap-out")]
    pub out: PathBuf,
}
