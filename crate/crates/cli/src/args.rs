use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "stratx", version, about = "Stratified rerandomized experiments with Lasso-adjusted effect estimates")]
pub struct Cli {
    /// Worker threads for simulation (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a treatment assignment for the units in a CSV file.
    Design(DesignArgs),
    /// Estimate the average treatment effect from observed data.
    Analyze(AnalyzeArgs),
    /// Run simulation cells and write summary tables.
    Simulate(SimulateArgs),
    /// Run the built-in property suites.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// JSON file mapping columns to roles: {"outcome", "assignment", "block", "design": [..], "covariates": [..]}.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Outcome column (overrides the schema).
    #[arg(long)]
    pub outcome: Option<String>,
    /// Assignment column with 0/1 values (overrides the schema).
    #[arg(long)]
    pub assignment: Option<String>,
    /// Block column (overrides the schema).
    #[arg(long)]
    pub block: Option<String>,
    /// Design covariates balanced by rerandomization, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub design_cols: Vec<String>,
    /// Adjustment covariates, comma separated. Default: every column without another role.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Directory for output files; JSON and CSV are both written there.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Format printed on stdout.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DesignChoice {
    Complete,
    Stratified,
    Rerand,
    StratRerand,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = DesignChoice::Stratified)]
    pub design: DesignChoice,
    /// Rerandomization acceptance probability.
    #[arg(long, default_value_t = 0.001)]
    pub pa: f64,
    /// Share of each block assigned to treatment.
    #[arg(long, default_value_t = 0.5)]
    pub treated_fraction: f64,
    /// Give up after this many rejected proposals.
    #[arg(long)]
    pub max_draws: Option<usize>,
    #[arg(long, env = "STRATX_SEED", default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodChoice {
    Unadj,
    Lasso,
    Lasso2,
    All,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = MethodChoice::All)]
    pub method: MethodChoice,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Acceptance probability of the rerandomized design; with design
    /// covariates this adds the rerandomization-aware unadjusted variance.
    #[arg(long, conflicts_with = "threshold")]
    pub pa: Option<f64>,
    /// Rerandomization threshold a, as an alternative to --pa.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, env = "STRATX_SEED", default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    Ms,
    Fl,
    Msfl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BlockArg {
    No,
    Eq,
    Uneq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RerandArg {
    No,
    Yes,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ScenarioArg::Ms])]
    pub scenario: Vec<ScenarioArg>,
    #[arg(long, value_delimiter = ',', default_values_t = [200, 500])]
    pub n: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [BlockArg::No, BlockArg::Eq, BlockArg::Uneq])]
    pub block: Vec<BlockArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [RerandArg::No, RerandArg::Yes])]
    pub rerand: Vec<RerandArg>,
    #[arg(long, default_value_t = 1000)]
    pub replications: usize,
    /// Bootstrap resamples for standard errors.
    #[arg(long, default_value_t = 500)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0.001)]
    pub pa: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, env = "STRATX_SEED", default_value_t = 2024)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, env = "STRATX_SEED", default_value_t = 1)]
    pub seed: u64,
    /// Stratified draws per layout in the tail-bound suite.
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    /// Random problems in the KKT suite.
    #[arg(long, default_value_t = 50)]
    pub kkt_problems: usize,
    /// Scales σ_a in the mean tail bound; values below 1 make the bound
    /// wrong on purpose.
    #[arg(long, default_value_t = 1.0, hide = true)]
    pub inject_sigma_scale: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}
