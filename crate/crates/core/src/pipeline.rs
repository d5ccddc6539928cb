//! End-to-end runs driven by a [`RunConfig`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::cv::{default_grid, select_penalties, CvReport, Grid, GridKind, PenaltyValues, DEFAULT_GRID_SIZE};
use crate::effects::{estimate_effects, Estimates};
use crate::error::{Error, Result};
use crate::io::{self, IngestReport, Table};
use crate::matching::{build_match_sets, DonorMatches, DEFAULT_MATCHES};
use crate::panel::{Assignment, PanelDataset};
use crate::simulate::{generate_synthetic_panel, SimulationSpec};
use crate::placebo::{filter_by_rmspe, run_placebos, summarize_all, PlaceboOptions, PlaceboRun, PlaceboSummary, DEFAULT_RMSPE_THRESHOLD};
use crate::synthesis::SynthContext;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_kind")]
    pub kind: GridKind,
    #[serde(default = "default_size")]
    pub size: usize,
    /// Candidates for `kind = "custom"`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
}

fn default_kind() -> GridKind {
    GridKind::Uniform
}

fn default_size() -> usize {
    DEFAULT_GRID_SIZE
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            kind: GridKind::Uniform,
            size: DEFAULT_GRID_SIZE,
            values: Vec::new(),
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid> {
        match self.kind {
            GridKind::Uniform if self.size == DEFAULT_GRID_SIZE => Ok(default_grid()),
            GridKind::Uniform => Grid::uniform(self.size),
            GridKind::LogUniform => Grid::log_uniform(self.size),
            GridKind::Custom => Grid::custom(self.values.clone()),
        }
    }
}

fn default_matches() -> usize {
    DEFAULT_MATCHES
}

fn default_threshold() -> f64 {
    DEFAULT_RMSPE_THRESHOLD
}

/// Everything a run needs. Relative paths in a config file are resolved
/// against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    pub output_dir: PathBuf,
    pub treated_unit: String,
    /// Label of the last pre-treatment period.
    pub last_pre_period: i64,
    pub outcomes: Vec<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default = "default_matches")]
    pub matches: usize,
    #[serde(default)]
    pub grid: GridConfig,
    /// Fixed penalties; cross-validation is skipped when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalties: Option<PenaltyValues>,
    #[serde(default = "default_threshold")]
    pub rmspe_threshold: f64,
    #[serde(default)]
    pub include_treated_cluster: bool,
    #[serde(default)]
    pub standardize: bool,
    /// Seed for the panel generator; ignored by estimation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.input.is_relative() {
            cfg.input = base.join(&cfg.input);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn assignment(&self) -> Assignment {
        Assignment {
            treated_unit: self.treated_unit.clone(),
            last_pre_period: self.last_pre_period,
            outcomes: self.outcomes.clone(),
            covariates: self.covariates.clone(),
        }
    }

    pub fn placebo_options(&self) -> PlaceboOptions {
        PlaceboOptions {
            rmspe_threshold: self.rmspe_threshold,
            include_treated_cluster: self.include_treated_cluster,
            standardize: self.standardize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outcomes.is_empty() {
            return Err(Error::Config("no outcome variables".into()));
        }
        if self.matches == 0 {
            return Err(Error::Config("matches must be at least 1".into()));
        }
        if !(self.rmspe_threshold > 0.0) {
            return Err(Error::Config(format!("rmspe_threshold = {} must be positive", self.rmspe_threshold)));
        }
        if let Some(p) = &self.penalties {
            p.validate()?;
        }
        self.grid.build()?;
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<(PanelDataset, IngestReport)> {
        self.validate()?;
        io::ingest_panel(&self.input, &self.assignment())
    }
}

/// Results for one outcome variable.
#[derive(Debug, Clone)]
pub struct VariableAnalysis {
    pub variable: usize,
    pub name: String,
    pub matches: Option<DonorMatches>,
    pub cv_reports: Vec<CvReport>,
    pub penalties: PenaltyValues,
    pub estimates: Estimates,
    pub placebo_runs: Vec<PlaceboRun>,
    pub summaries: Vec<PlaceboSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Penalty selection only (or echo of fixed penalties).
    Penalties,
    /// Penalties and effect estimates.
    Estimate,
    /// Everything, placebo inference included.
    Full,
}

/// Matching, penalty selection, estimation and (for [`Stage::Full`]) placebo
/// inference for every outcome.
pub fn analyze(ds: &PanelDataset, cfg: &RunConfig, stage: Stage) -> Result<Vec<VariableAnalysis>> {
    cfg.validate()?;
    let grid = cfg.grid.build()?;
    let mut out = Vec::new();
    for &v in ds.outcome_variables() {
        let name = ds.variables()[v].clone();
        let ctx = SynthContext::for_outcome(ds, v, cfg.standardize)?;
        let (matches, cv_reports, penalties) = match cfg.penalties {
            Some(p) => {
                info!("{name}: using fixed penalties");
                (None, Vec::new(), p)
            }
            None => {
                let matches = build_match_sets(ds, ctx.spec(), cfg.matches)?;
                let (pc, reports) = select_penalties(&ctx, &matches, &grid)?;
                info!(
                    "{name}: lambda_treated {}, lambda_neighbors {}, lambda_star {}",
                    pc.values.lambda_treated, pc.values.lambda_neighbors, pc.values.lambda_star
                );
                (Some(matches), reports, pc.values)
            }
        };
        // estimation is cheap next to CV, so it runs at every stage
        let estimates = estimate_effects(&ctx, &penalties)?;
        let (placebo_runs, summaries) = if stage == Stage::Full {
            let runs = run_placebos(ds, ctx.spec(), &penalties, &cfg.placebo_options())?;
            let runs = filter_by_rmspe(runs, cfg.rmspe_threshold);
            let mut summaries = Vec::new();
            for s in summarize_all(&estimates, &runs) {
                match s {
                    Ok(s) => summaries.push(s),
                    Err(e) => warn!("{name}: {e}"),
                }
            }
            (runs, summaries)
        } else {
            (Vec::new(), Vec::new())
        };
        out.push(VariableAnalysis {
            variable: v,
            name,
            matches,
            cv_reports,
            penalties,
            estimates,
            placebo_runs,
            summaries,
        });
    }
    Ok(out)
}

pub const WEIGHTS_FILE: &str = "weights.csv";
pub const BALANCE_FILE: &str = "balance.csv";
pub const PENALTIES_FILE: &str = "penalties.csv";
pub const RMSPE_FILE: &str = "rmspe.csv";
pub const EFFECTS_FILE: &str = "effects.csv";
pub const PLACEBO_FILE: &str = "placebo.csv";
pub const PLACEBO_SUMMARY_FILE: &str = "placebo_summary.csv";
pub const CV_FILE: &str = "cv.csv";
pub const MATCHES_FILE: &str = "matches.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: Option<u64>,
    config: &'a RunConfig,
    dataset: &'a IngestReport,
    penalties: BTreeMap<&'a str, PenaltyValues>,
    cv_skipped: bool,
    artifacts: Vec<String>,
}

fn concat(tables: impl IntoIterator<Item = Table>) -> Result<Table> {
    let mut out = Table::default();
    for t in tables {
        out.extend(t)?;
    }
    Ok(out)
}

/// Tables for the given stage, keyed by file name.
pub fn build_tables(ds: &PanelDataset, analyses: &[VariableAnalysis], stage: Stage) -> Result<Vec<(&'static str, Table)>> {
    let penalties: Vec<(String, PenaltyValues)> = analyses.iter().map(|a| (a.name.clone(), a.penalties)).collect();
    let mut files = vec![(PENALTIES_FILE, io::penalty_table(&penalties))];
    if analyses.iter().any(|a| !a.cv_reports.is_empty()) {
        files.push((CV_FILE, concat(analyses.iter().map(|a| io::cv_table(&a.name, &a.cv_reports)))?));
    }
    if stage == Stage::Penalties {
        return Ok(files);
    }
    files.push((WEIGHTS_FILE, concat(analyses.iter().map(|a| io::weights_table(ds, &a.estimates)))?));
    files.push((BALANCE_FILE, concat(analyses.iter().map(|a| io::balance_csv(ds, &a.estimates)))?));
    files.push((RMSPE_FILE, concat(analyses.iter().map(|a| io::rmspe_table(ds, &a.estimates, &a.placebo_runs)))?));
    files.push((EFFECTS_FILE, concat(analyses.iter().map(|a| io::effects_table(ds, &a.estimates)))?));
    if stage == Stage::Full {
        files.push((PLACEBO_FILE, concat(analyses.iter().map(|a| io::placebo_table(&a.name, &a.placebo_runs)))?));
        files.push((
            PLACEBO_SUMMARY_FILE,
            concat(analyses.iter().map(|a| io::placebo_summary_table(&a.name, &a.summaries)))?,
        ));
    }
    Ok(files)
}

/// Writes files into `dir`; if any write fails, the files written so far are removed.
pub fn write_files(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, bytes) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(&path);
            return Err(e.into());
        }
        written.push(path);
    }
    Ok(written)
}

/// Serializes the tables for `stage` plus a manifest and writes them to the
/// configured output directory.
pub fn emit(ds: &PanelDataset, report: &IngestReport, cfg: &RunConfig, analyses: &[VariableAnalysis], stage: Stage, command: &str) -> Result<Vec<PathBuf>> {
    let tables = build_tables(ds, analyses, stage)?;
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    for (name, t) in &tables {
        let mut buf = Vec::new();
        t.write_csv(&mut buf)?;
        files.push((name.to_string(), buf));
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: cfg.seed,
        config: cfg,
        dataset: report,
        penalties: analyses.iter().map(|a| (a.name.as_str(), a.penalties)).collect(),
        cv_skipped: cfg.penalties.is_some(),
        artifacts: tables.iter().map(|(n, _)| n.to_string()).collect(),
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    files.push((MANIFEST_FILE.to_string(), json));
    write_files(&cfg.output_dir, &files)
}

/// Full run: ingest, select penalties, estimate, placebo inference, and
/// write every artifact.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (ds, report) = cfg.load_dataset()?;
    let analyses = analyze(&ds, cfg, Stage::Full)?;
    emit(&ds, &report, cfg, &analyses, Stage::Full, "run")
}

/// Penalties only (`Stage::Penalties`), estimates (`Stage::Estimate`) or
/// the full run, writing the matching artifacts.
pub fn run_stage(cfg: &RunConfig, stage: Stage, command: &str) -> Result<Vec<PathBuf>> {
    let (ds, report) = cfg.load_dataset()?;
    let analyses = analyze(&ds, cfg, stage)?;
    emit(&ds, &report, cfg, &analyses, stage, command)
}

/// Donor matching for every outcome, written to `matches.csv`.
pub fn run_matching(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (ds, _) = cfg.load_dataset()?;
    let mut tables = Vec::new();
    for &v in ds.outcome_variables() {
        let ctx = SynthContext::for_outcome(&ds, v, cfg.standardize)?;
        let matches = build_match_sets(&ds, ctx.spec(), cfg.matches)?;
        tables.push(io::matches_table(&ds, &ds.variables()[v], &matches));
    }
    let mut buf = Vec::new();
    concat(tables)?.write_csv(&mut buf)?;
    write_files(&cfg.output_dir, &[(MATCHES_FILE.to_string(), buf)])
}

/// Writes a simulated panel (`panel.csv`), its ground truth (`truth.json`)
/// and a ready-to-run `config.toml` into `dir`.
pub fn write_simulation(spec: &SimulationSpec, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    let sim = generate_synthetic_panel(spec, seed)?;
    let mut panel = Vec::new();
    io::write_long_panel(&sim.dataset.to_long_panel(), &mut panel)?;
    let mut truth = serde_json::to_vec_pretty(&sim.truth)?;
    truth.push(b'\n');
    let asg = sim.dataset.assignment();
    let cfg = RunConfig {
        input: "panel.csv".into(),
        output_dir: "results".into(),
        treated_unit: asg.treated_unit,
        last_pre_period: asg.last_pre_period,
        outcomes: asg.outcomes,
        covariates: asg.covariates,
        matches: DEFAULT_MATCHES,
        grid: GridConfig::default(),
        penalties: None,
        rmspe_threshold: DEFAULT_RMSPE_THRESHOLD,
        include_treated_cluster: false,
        standardize: false,
        seed: Some(seed),
    };
    write_files(
        dir,
        &[
            ("panel.csv".into(), panel),
            ("truth.json".into(), truth),
            ("config.toml".into(), cfg.to_toml_string()?.into_bytes()),
        ],
    )
}
