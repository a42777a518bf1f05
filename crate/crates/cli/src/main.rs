mod commands;
mod error;
mod inputs;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::output::{Format, RunContext};

/// Factorial policy experiments: design, analysis and simulation.
#[derive(Debug, Parser)]
#[command(name = "factorlab", version)]
struct Cli {
    /// Report format.
    #[arg(long, value_enum, default_value = "text", global = true)]
    format: Format,

    /// Output path. Commands that produce a design or dataset write it here
    /// (plus `<out>.manifest.json`); others write their report here.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for every random step of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a design from a factor-space file and report its balance.
    Design(DesignArgs),
    /// Sample sizes per level and the factorial velocity figures.
    Power(PowerArgs),
    /// Randomize units from a CSV onto the arms of a design.
    Assign(AssignArgs),
    /// Fit the main-effects or covariate-interaction model.
    Fit(FitArgs),
    /// Nearest-neighbour effect estimates for two variants.
    Cate(CateArgs),
    /// Optimal policies from a fitted model or a coefficients file.
    Optimize(OptimizeArgs),
    /// Test the fitted model against the holdout arm.
    Validate(ValidateArgs),
    /// Inverse-propensity value of a targeting policy.
    Erupt(EruptArgs),
    /// Generate a synthetic dataset from a simulation config.
    Simulate(SimulateArgs),
    /// Recompute the bundled case-study tables and compare with the fixtures.
    ReproducePaper(ReproduceArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DesignKind {
    Full,
    Regular,
    PlackettBurman,
    Mixed,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Factor-space TOML file (not used by plackett-burman).
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    pub kind: DesignKind,
    /// Generator word for regular fractions, e.g. `D=ABC` (repeatable).
    #[arg(long = "generator")]
    pub generators: Vec<String>,
    /// Run count for plackett-burman and mixed designs.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Factor count for plackett-burman designs.
    #[arg(long)]
    pub factors: Option<usize>,
    /// Random restarts for the mixed-level search.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Add a randomly chosen holdout variant.
    #[arg(long)]
    pub holdout: bool,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    /// Factor-space TOML file; enables the velocity report and design totals.
    #[arg(long)]
    pub space: Option<PathBuf>,
    /// Outcome standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Minimum detectable effect.
    #[arg(long)]
    pub mde: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Target power 1 − β.
    #[arg(long, default_value_t = 0.8)]
    pub power: f64,
    #[arg(long)]
    pub two_sided: bool,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    #[arg(long)]
    pub design: PathBuf,
    /// CSV with a `unit_id` column followed by covariate columns.
    #[arg(long)]
    pub units: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Covariates entering the model (comma separated). Empty means a
    /// main-effects model.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Heteroskedasticity-robust standard errors.
    #[arg(long)]
    pub robust: bool,
    /// Fit on standardized covariates (results are reported in raw units).
    #[arg(long)]
    pub standardize: bool,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Also write the coefficients to this TOML file for `optimize`.
    #[arg(long)]
    pub coefficients_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Treated variant, level names separated by commas.
    #[arg(long)]
    pub a: String,
    /// Comparison variant.
    #[arg(long)]
    pub b: String,
    /// Query point, covariate values separated by commas (repeatable).
    #[arg(long = "at", required = true)]
    pub at: Vec<String>,
    #[arg(long, conflicts_with = "grid")]
    pub k: Option<usize>,
    /// Candidate K values for leave-one-out tuning.
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizeMode {
    Global,
    Personalized,
    Table,
    AllPolicies,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long, value_enum, default_value = "global")]
    pub mode: OptimizeMode,
    /// Coefficients TOML (as written by `fit --coefficients-out`); needs
    /// `--space`. Without it the model is fitted from `--design`/`--data`.
    #[arg(long, requires = "space")]
    pub coefficients: Option<PathBuf>,
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long)]
    pub design: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Covariate values for personalized and all-policies modes.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x: Vec<f64>,
    /// Covariate that the table mode sweeps.
    #[arg(long)]
    pub covariate: Option<String>,
    /// Integer range for the table mode, `lo..hi` inclusive.
    #[arg(long, default_value = "0..100")]
    pub grid: String,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Also run the segment comparison with this many groups.
    #[arg(long)]
    pub groups: Option<usize>,
    /// Covariates of the outcome model that forms segment groups
    /// (defaults to `--covariates`).
    #[arg(long, value_delimiter = ',')]
    pub outcome_covariates: Vec<String>,
    /// Treat the fit as independent of the arm means in the holdout test.
    #[arg(long)]
    pub independent: bool,
}

#[derive(Debug, Args)]
pub struct EruptArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `personalized`, `global`, or a variant's level names separated by commas.
    #[arg(long, default_value = "personalized")]
    pub policy: String,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation config TOML.
    #[arg(long)]
    pub config: PathBuf,
    /// Design TOML; defaults to the full factorial of the config's space.
    #[arg(long)]
    pub design: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub units: usize,
    /// Also compare the A/B/n and factorial estimators over this many
    /// replications.
    #[arg(long)]
    pub compare: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut ctx = RunContext {
        command: command_name(&cli.command).to_string(),
        arguments: std::env::args().skip(1).collect(),
        inputs: Vec::new(),
        seed: cli.seed,
    };
    let result = commands::run(&cli.command, &mut ctx).and_then(|outcome| {
        output::emit(&ctx, &outcome, cli.format, cli.out.as_deref())?;
        outcome.failure.map_or(Ok(()), |msg| Err(error::CliError::Check(msg)))
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Design(_) => "design",
        Command::Power(_) => "power",
        Command::Assign(_) => "assign",
        Command::Fit(_) => "fit",
        Command::Cate(_) => "cate",
        Command::Optimize(_) => "optimize",
        Command::Validate(_) => "validate",
        Command::Erupt(_) => "erupt",
        Command::Simulate(_) => "simulate",
        Command::ReproducePaper(_) => "reproduce-paper",
    }
}
