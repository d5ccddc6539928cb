use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spillsynth::cv::{GridKind, PenaltyValues};
use spillsynth::pipeline::{self, GridConfig, RunConfig, Stage};
use spillsynth::simulate::SimulationSpec;
use spillsynth::{Error, Result};

#[derive(Parser)]
#[command(version, about = "Penalized synthetic control for clustered panels with spillovers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the panel and assignment, print counts.
    Validate(RunArgs),
    /// Mahalanobis donor matching; writes matches.csv.
    Match(RunArgs),
    /// Penalty selection; writes penalties.csv and cv.csv.
    Cv(RunArgs),
    /// Effect estimates without placebo inference.
    Estimate(RunArgs),
    /// Estimates plus in-space placebo inference.
    Placebo(RunArgs),
    /// Full pipeline with every artifact.
    Run(RunArgs),
    /// Generate a synthetic panel with known effects.
    Simulate(SimArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with run settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    treated_unit: Option<String>,
    /// Label of the last pre-treatment period.
    #[arg(long)]
    last_pre_period: Option<i64>,
    #[arg(long = "outcome")]
    outcomes: Vec<String>,
    #[arg(long = "covariate")]
    covariates: Vec<String>,
    #[arg(long)]
    matches: Option<usize>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    log_grid: bool,
    /// Fixed penalties (all three together); skips cross-validation.
    #[arg(long, requires_all = ["lambda_neighbors", "lambda_star"])]
    lambda_treated: Option<f64>,
    #[arg(long, requires_all = ["lambda_treated", "lambda_star"])]
    lambda_neighbors: Option<f64>,
    #[arg(long, requires_all = ["lambda_treated", "lambda_neighbors"])]
    lambda_star: Option<f64>,
    #[arg(long)]
    rmspe_threshold: Option<f64>,
    #[arg(long)]
    include_treated_cluster: bool,
    #[arg(long)]
    standardize: bool,
}

#[derive(Args)]
struct SimArgs {
    /// TOML file with simulation settings; defaults otherwise.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output_dir: PathBuf,
}

fn missing(flag: &str) -> Error {
    Error::Config(format!("--{flag} is required without --config"))
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_toml_file(path)?,
            None => RunConfig {
                input: self.input.clone().ok_or_else(|| missing("input"))?,
                output_dir: self.output_dir.clone().ok_or_else(|| missing("output-dir"))?,
                treated_unit: self.treated_unit.clone().ok_or_else(|| missing("treated-unit"))?,
                last_pre_period: self.last_pre_period.ok_or_else(|| missing("last-pre-period"))?,
                outcomes: self.outcomes.clone(),
                covariates: self.covariates.clone(),
                matches: spillsynth::matching::DEFAULT_MATCHES,
                grid: GridConfig::default(),
                penalties: None,
                rmspe_threshold: spillsynth::placebo::DEFAULT_RMSPE_THRESHOLD,
                include_treated_cluster: false,
                standardize: false,
                seed: None,
            },
        };
        if let Some(x) = self.input {
            cfg.input = x;
        }
        if let Some(x) = self.output_dir {
            cfg.output_dir = x;
        }
        if let Some(x) = self.treated_unit {
            cfg.treated_unit = x;
        }
        if let Some(x) = self.last_pre_period {
            cfg.last_pre_period = x;
        }
        if !self.outcomes.is_empty() {
            cfg.outcomes = self.outcomes;
        }
        if !self.covariates.is_empty() {
            cfg.covariates = self.covariates;
        }
        if let Some(x) = self.matches {
            cfg.matches = x;
        }
        if let Some(x) = self.grid_size {
            cfg.grid.size = x;
        }
        if self.log_grid {
            cfg.grid.kind = GridKind::LogUniform;
        }
        if let (Some(a), Some(b), Some(c)) = (self.lambda_treated, self.lambda_neighbors, self.lambda_star) {
            cfg.penalties = Some(PenaltyValues {
                lambda_treated: a,
                lambda_neighbors: b,
                lambda_star: c,
            });
        }
        if let Some(x) = self.rmspe_threshold {
            cfg.rmspe_threshold = x;
        }
        cfg.include_treated_cluster |= self.include_treated_cluster;
        cfg.standardize |= self.standardize;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate(a) => {
            let (ds, report) = a.into_config()?.load_dataset()?;
            println!(
                "{} rows, {} units, {} clusters, {} periods ({} pre), {} variables; treated '{}'",
                report.rows,
                report.units,
                report.clusters,
                report.periods,
                ds.pre_periods(),
                report.variables,
                ds.unit_id(ds.treated_unit())
            );
        }
        Command::Match(a) => print_paths(&pipeline::run_matching(&a.into_config()?)?),
        Command::Cv(a) => print_paths(&pipeline::run_stage(&a.into_config()?, Stage::Penalties, "cv")?),
        Command::Estimate(a) => print_paths(&pipeline::run_stage(&a.into_config()?, Stage::Estimate, "estimate")?),
        Command::Placebo(a) => print_paths(&pipeline::run_stage(&a.into_config()?, Stage::Full, "placebo")?),
        Command::Run(a) => print_paths(&pipeline::run_pipeline(&a.into_config()?)?),
        Command::Simulate(a) => {
            let spec = match &a.spec {
                Some(p) => SimulationSpec::from_toml_str(&std::fs::read_to_string(p)?)?,
                None => SimulationSpec::default(),
            };
            print_paths(&pipeline::write_simulation(&spec, a.seed, &a.output_dir)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
