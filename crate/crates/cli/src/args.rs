use std::path::PathBuf;

use cafe_core::cafe::Estimator;
use cafe_core::models::{ModelKind, UnlearningMode};
use cafe_core::robustness::Method as BenchMethod;
use cafe_core::sem::{Contrast, InterventionStrategy};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "cafe",
    version,
    about = "Check whether a tabular model still depends on features it was meant to forget",
    after_help = "Exit status: 0 unlearned (or no verdict requested), 2 residual influence, 1 error.\n\
                  CAFE_THREADS caps the number of worker threads."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score the unlearning target and decide whether influence remains.
    Verify(VerifyArgs),
    /// Sample a dataset from a generator spec.
    Generate(GenerateArgs),
    /// Put scores from reports and score files side by side.
    Compare(CompareArgs),
    /// Time the estimators on one dataset.
    Bench(BenchArgs),
    /// Measure how rankings move when the graph is edited.
    Perturb(PerturbArgs),
    /// Score the target under each built-in model family.
    Sweep(SweepArgs),
    /// Fit a built-in model, optionally without the unlearning target.
    Train(TrainArgs),
    /// Answer the line protocol on stdin/stdout with a built-in model.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Causal graph file (JSON).
    #[arg(long)]
    pub graph: PathBuf,
    /// Dataset (CSV, header in graph order).
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
#[group(required = true, multiple = false)]
pub struct ModelSource {
    /// Built-in model file written by `cafe train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Shell command speaking the line protocol.
    #[arg(long)]
    pub external_cmd: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TargetArgs {
    /// Features the model should no longer depend on.
    #[arg(long, value_delimiter = ',', required = true)]
    pub target_features: Vec<String>,
    /// Rows in the target, e.g. `age > 50 & sex = 1`; all rows when omitted.
    #[arg(long = "where", default_value = "")]
    pub selector: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodFlag {
    Fuzz,
    Cafe,
    Perm,
    Fairness,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FuzzModeFlag {
    /// Total, direct and indirect scores.
    Total,
    /// As `total`, ranked by direct influence.
    Direct,
    /// As `total`, plus one score per directed path to the outcome.
    Paths,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyFlag {
    Empirical,
    Grid,
    FixedPair,
    Observed,
}

impl From<StrategyFlag> for InterventionStrategy {
    fn from(s: StrategyFlag) -> Self {
        match s {
            StrategyFlag::Empirical => InterventionStrategy::Empirical,
            StrategyFlag::Grid => InterventionStrategy::DomainGrid,
            StrategyFlag::FixedPair => InterventionStrategy::FixedPair,
            StrategyFlag::Observed => InterventionStrategy::Observed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorFlag {
    Regression,
    Stratified,
}

impl From<EstimatorFlag> for Estimator {
    fn from(e: EstimatorFlag) -> Self {
        match e {
            EstimatorFlag::Regression => Estimator::Regression,
            EstimatorFlag::Stratified => Estimator::Stratified,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchFlag {
    Cafe,
    Fuzz,
    Permutation,
}

impl From<BenchFlag> for BenchMethod {
    fn from(m: BenchFlag) -> Self {
        match m {
            BenchFlag::Cafe => BenchMethod::Cafe,
            BenchFlag::Fuzz => BenchMethod::Fuzz,
            BenchFlag::Permutation => BenchMethod::Permutation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UnlearnFlag {
    /// Drop the target features from the inputs.
    Features,
    /// Drop the target rows from the training data.
    Rows,
    Both,
}

impl From<UnlearnFlag> for UnlearningMode {
    fn from(m: UnlearnFlag) -> Self {
        match m {
            UnlearnFlag::Features => UnlearningMode::Features,
            UnlearnFlag::Rows => UnlearningMode::Rows,
            UnlearnFlag::Both => UnlearningMode::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricFlag {
    Rmse,
    Accuracy,
}

/// `FEATURE=BASELINE:TREATMENT`
pub fn parse_contrast(text: &str) -> Result<(String, Contrast), String> {
    let (name, pair) = text
        .split_once('=')
        .ok_or_else(|| format!("expected FEATURE=BASELINE:TREATMENT, got `{text}`"))?;
    let (a, b) = pair
        .split_once(':')
        .ok_or_else(|| format!("expected BASELINE:TREATMENT after `=`, got `{pair}`"))?;
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("`{s}` is not a finite number"))
    };
    Ok((name.trim().to_string(), Contrast::new(num(a)?, num(b)?)))
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelSource,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Methods to run; repeat or separate with commas.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "cafe")]
    pub method: Vec<MethodFlag>,
    #[arg(long, value_enum, default_value = "total")]
    pub mode: FuzzModeFlag,
    /// Verdict threshold on |Σ total|; defaults to 1% of the outcome's standard deviation.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Interventions per instance and feature for fuzzing.
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report file (JSON); flat CSV tables are written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "regression")]
    pub estimator: EstimatorFlag,
    /// How fuzzing picks intervention values; fixed-pair uses each feature's contrast.
    #[arg(long, value_enum, default_value = "fixed-pair")]
    pub strategy: StrategyFlag,
    /// Fixed contrast for a feature, `FEATURE=BASELINE:TREATMENT`; repeatable.
    #[arg(long, value_parser = parse_contrast)]
    pub contrast: Vec<(String, Contrast)>,
    /// Add resampled structural noise when propagating interventions.
    #[arg(long)]
    pub stochastic: bool,
    /// Maximum number of strata for the stratified estimator.
    #[arg(long, default_value_t = 64)]
    pub strata_cap: usize,
    /// Bootstrap resamples for a range on each total effect.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Also score every non-target feature, for ranking context.
    #[arg(long)]
    pub rank_all: bool,
    /// Extra subgroup to score separately; repeatable.
    #[arg(long)]
    pub subgroup: Vec<String>,
    /// Privileged group for fairness metrics; every feature in turn when omitted.
    #[arg(long)]
    pub protected: Option<String>,
    /// Predictions at or above this count as positive; defaults to the median output.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum, default_value = "rmse")]
    pub metric: MetricFlag,
    /// Shuffles per feature for permutation importance.
    #[arg(long, default_value_t = 5)]
    pub perm_repeats: usize,
}

impl VerifyArgs {
    pub fn runs(&self, m: MethodFlag) -> bool {
        self.method.contains(&MethodFlag::All) || self.method.contains(&m)
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// Generator spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Directory for data.csv, graph.json and truth.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Override the spec's row count.
    #[arg(long)]
    pub rows: Option<usize>,
    /// Override the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Report files (JSON) and score files (CSV with `feature,score`).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Comparison table (CSV).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelSource,
    #[command(flatten)]
    pub target: TargetArgs,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "cafe,fuzz,permutation"
    )]
    pub methods: Vec<BenchFlag>,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
    /// Worker threads for timed runs.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PerturbKind {
    AddEdges,
    RemoveEdges,
    FullyConnect,
}

#[derive(Debug, Clone, Args)]
pub struct PerturbArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelSource,
    #[arg(long, value_enum)]
    pub kind: PerturbKind,
    /// Share of edges to add or remove, in (0, 1].
    #[arg(long, default_value_t = 0.2)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Perturbations to draw, with seeds `seed, seed+1, ...`.
    #[arg(long, default_value_t = 1)]
    pub runs: u64,
    #[arg(long, value_enum, default_value = "regression")]
    pub estimator: EstimatorFlag,
    /// Results (JSON), including every perturbed edge list.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub target: TargetArgs,
    #[arg(long, value_delimiter = ',', default_value = "linear,tree-ensemble,network")]
    pub kinds: Vec<ModelKind>,
    #[arg(long, value_enum, default_value = "features")]
    pub unlearn: UnlearnFlag,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "linear")]
    pub kind: ModelKind,
    /// Target features to unlearn; the model is trained on everything when omitted.
    #[arg(long, value_delimiter = ',')]
    pub target_features: Vec<String>,
    /// Rows to forget when unlearning rows.
    #[arg(long = "where", default_value = "")]
    pub selector: String,
    #[arg(long, value_enum, default_value = "features")]
    pub unlearn: UnlearnFlag,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub trees: usize,
    #[arg(long, default_value_t = 6)]
    pub depth: usize,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 500)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
}
