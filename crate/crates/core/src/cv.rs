//! Penalty selection by leave-one-out cross-validation on post-treatment
//! outcomes of untreated units.
//!
//! Three penalties are selected:
//!
//! * `lambda_treated`: pseudo-treated units are the controls matched to the
//!   treated unit; donors are the other matched controls outside the
//!   pseudo-treated unit's own cluster.
//! * `lambda_neighbors`: the same, using the controls matched to the
//!   untreated units of the treated cluster (one pooled criterion).
//! * `lambda_star`: each untreated unit of the treated cluster is synthesized
//!   from the other untreated units of that cluster, unit-level features only.
//!
//! Each criterion is the pooled post-period RMSPE; the smallest λ attaining
//! the minimum wins.

use std::collections::BTreeSet;
use std::fmt;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::DonorMatches;
use crate::panel::FeatureMode;
use crate::solver::PreparedProblem;
use crate::synthesis::{predict, SynthContext};

/// Number of candidates in the default grid.
pub const DEFAULT_GRID_SIZE: usize = 10_000;
/// Two RMSPE values closer than `RMSPE_TIE_TOL · (1 + min)` count as tied.
pub const RMSPE_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Uniform,
    LogUniform,
    Custom,
}

/// Ascending, deduplicated candidate penalties in (0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    values: Vec<f64>,
    kind: GridKind,
}

impl Grid {
    /// {k/n : k = 1..n}
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("grid size must be at least 1".into()));
        }
        Ok(Self {
            values: (1..=n).map(|k| k as f64 / n as f64).collect(),
            kind: GridKind::Uniform,
        })
    }

    /// n points geometrically spaced from 1/n to 1.
    pub fn log_uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("grid size must be at least 1".into()));
        }
        if n == 1 {
            return Ok(Self {
                values: vec![1.0],
                kind: GridKind::LogUniform,
            });
        }
        let lo = (1.0 / n as f64).ln();
        let mut values: Vec<f64> = (0..n)
            .map(|k| (lo * (1.0 - k as f64 / (n - 1) as f64)).exp())
            .collect();
        values[n - 1] = 1.0;
        Ok(Self {
            values,
            kind: GridKind::LogUniform,
        })
    }

    pub fn custom(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("grid must not be empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0 && **v <= 1.0)) {
            return Err(Error::Config(format!("grid value {v} outside (0, 1]")));
        }
        values.sort_by(f64::total_cmp);
        values.dedup();
        Ok(Self {
            values,
            kind: GridKind::Custom,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn max(&self) -> f64 {
        *self.values.last().expect("grid is nonempty")
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            GridKind::Uniform => "uniform",
            GridKind::LogUniform => "log-uniform",
            GridKind::Custom => "custom",
        };
        write!(
            f,
            "{kind} grid of {} values in [{}, {}]",
            self.values.len(),
            self.values[0],
            self.max()
        )
    }
}

/// Uniform grid of 10000 points on (0, 1].
pub fn default_grid() -> Grid {
    Grid::uniform(DEFAULT_GRID_SIZE).expect("nonzero size")
}

/// The three penalties used by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyValues {
    pub lambda_treated: f64,
    pub lambda_neighbors: f64,
    pub lambda_star: f64,
}

impl PenaltyValues {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_treated", self.lambda_treated),
            ("lambda_neighbors", self.lambda_neighbors),
            ("lambda_star", self.lambda_star),
        ] {
            if !(v.is_finite() && v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} = {v} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Selected penalties plus grid metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub values: PenaltyValues,
    pub grid_size: usize,
    pub grid: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Treated,
    Neighbors,
    WithinCluster,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::Treated => "lambda_treated",
            Criterion::Neighbors => "lambda_neighbors",
            Criterion::WithinCluster => "lambda_star",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub lambda: f64,
    pub rmspe: f64,
}

/// Residuals of one pseudo-treated unit at the chosen penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoUnitDetail {
    pub unit: usize,
    pub donors: Vec<usize>,
    pub weights: Vec<f64>,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub criterion: Criterion,
    pub curve: Vec<CurvePoint>,
    pub chosen_lambda: f64,
    pub chosen_rmspe: f64,
    pub details: Vec<PseudoUnitDetail>,
    /// Pseudo-treated units left out because their donor pool was empty.
    pub skipped: Vec<usize>,
}

/// sqrt(Σ residual² / (#units · #periods)), summed in the given order.
pub fn pooled_rmspe(residuals: &[Vec<f64>]) -> f64 {
    let count: usize = residuals.iter().map(Vec::len).sum();
    if count == 0 {
        return f64::NAN;
    }
    let ss: f64 = residuals.iter().flatten().map(|r| r * r).sum();
    (ss / count as f64).sqrt()
}

/// Index of the chosen candidate: the first (smallest λ) within the tie
/// tolerance of the minimum.
pub fn select_minimum(curve: &[CurvePoint]) -> Option<usize> {
    let min = curve.iter().map(|p| p.rmspe).filter(|r| !r.is_nan()).min_by(f64::total_cmp)?;
    let tol = RMSPE_TIE_TOL * (1.0 + min);
    curve.iter().position(|p| p.rmspe <= min + tol)
}

struct PseudoTask {
    unit: usize,
    donors: Vec<usize>,
    mode: FeatureMode,
}

fn run_cv(ctx: &SynthContext<'_>, criterion: Criterion, tasks: Vec<PseudoTask>, skipped: Vec<usize>, grid: &Grid) -> Result<(f64, CvReport)> {
    if tasks.is_empty() {
        return Err(Error::AllPseudoUnitsSkipped);
    }
    let ds = ctx.dataset();
    let post = ds.post_periods();
    let var = ctx.outcome();

    // per task: sum of squared residuals for every grid value
    let sums: Vec<Vec<f64>> = tasks
        .par_iter()
        .map(|task| -> Result<Vec<f64>> {
            let base = ctx.problem(task.unit, &task.donors, task.mode, 0.0)?;
            let prepared = PreparedProblem::new(&base);
            grid.values()
                .iter()
                .map(|&lambda| {
                    let w = prepared.solve(&base.with_lambda(lambda)?)?;
                    Ok(post
                        .clone()
                        .map(|t| {
                            let r = ds.value(task.unit, var, t) - predict(ds, var, &task.donors, &w, t);
                            r * r
                        })
                        .sum())
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let denom = (post.len() * tasks.len()) as f64;
    let curve: Vec<CurvePoint> = grid
        .values()
        .iter()
        .enumerate()
        .map(|(k, &lambda)| CurvePoint {
            lambda,
            rmspe: (sums.iter().map(|s| s[k]).sum::<f64>() / denom).sqrt(),
        })
        .collect();
    let chosen = select_minimum(&curve).ok_or(Error::AllPseudoUnitsSkipped)?;
    let chosen_lambda = curve[chosen].lambda;

    let details = tasks
        .iter()
        .map(|task| {
            let fit = ctx.fit(task.unit, &task.donors, task.mode, chosen_lambda)?;
            let residuals = post
                .clone()
                .map(|t| ds.value(task.unit, var, t) - predict(ds, var, &task.donors, &fit.weights, t))
                .collect();
            Ok(PseudoUnitDetail {
                unit: task.unit,
                donors: task.donors.clone(),
                weights: fit.weights.weights,
                residuals,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let report = CvReport {
        criterion,
        chosen_lambda,
        chosen_rmspe: curve[chosen].rmspe,
        curve,
        details,
        skipped,
    };
    Ok((chosen_lambda, report))
}

/// `lambda_treated` (`Criterion::Treated`) or `lambda_neighbors` (`Criterion::Neighbors`).
pub fn cv_lambda_cross(ctx: &SynthContext<'_>, matches: &DonorMatches, which: Criterion, grid: &Grid) -> Result<(f64, CvReport)> {
    let pool: &BTreeSet<usize> = match which {
        Criterion::Treated => &matches.treated,
        Criterion::Neighbors => &matches.neighbors,
        Criterion::WithinCluster => {
            return Err(Error::Config("use cv_lambda_star for the within-cluster penalty".into()))
        }
    };
    if pool.is_empty() {
        return Err(Error::AllPseudoUnitsSkipped);
    }
    let ds = ctx.dataset();
    let mut tasks = Vec::new();
    let mut skipped = Vec::new();
    for &unit in pool {
        let cluster = ds.cluster_of(unit);
        let donors: Vec<usize> = pool.iter().copied().filter(|&d| ds.cluster_of(d) != cluster).collect();
        if donors.is_empty() {
            warn!(
                "{}: pseudo-treated unit '{}' has no matched donor outside its cluster; skipped",
                which.name(),
                ds.unit_id(unit)
            );
            skipped.push(unit);
        } else {
            tasks.push(PseudoTask {
                unit,
                donors,
                mode: FeatureMode::CrossCluster,
            });
        }
    }
    run_cv(ctx, which, tasks, skipped, grid)
}

/// `lambda_star`, from the untreated units of the treated cluster.
pub fn cv_lambda_star(ctx: &SynthContext<'_>, grid: &Grid) -> Result<(f64, CvReport)> {
    let ds = ctx.dataset();
    let neighbors = ds.neighbors();
    if neighbors.len() < 2 {
        return Err(Error::CvUndefined(format!(
            "treated cluster '{}' has {} unit(s); at least 3 are needed",
            ds.cluster_id(ds.treated_cluster()),
            neighbors.len() + 1
        )));
    }
    let tasks = neighbors
        .iter()
        .map(|&unit| PseudoTask {
            unit,
            donors: neighbors.iter().copied().filter(|&d| d != unit).collect(),
            mode: FeatureMode::WithinCluster,
        })
        .collect();
    run_cv(ctx, Criterion::WithinCluster, tasks, Vec::new(), grid)
}

/// All three penalties. When the treated cluster is too small for
/// within-cluster CV, `lambda_star` falls back to half the grid maximum.
pub fn select_penalties(ctx: &SynthContext<'_>, matches: &DonorMatches, grid: &Grid) -> Result<(PenaltyConfig, Vec<CvReport>)> {
    let (lambda_treated, r1) = cv_lambda_cross(ctx, matches, Criterion::Treated, grid)?;
    let (lambda_neighbors, r2) = cv_lambda_cross(ctx, matches, Criterion::Neighbors, grid)?;
    let mut reports = vec![r1, r2];
    let lambda_star = match cv_lambda_star(ctx, grid) {
        Ok((l, r)) => {
            reports.push(r);
            l
        }
        Err(Error::CvUndefined(msg)) => {
            let l = 0.5 * grid.max();
            warn!("within-cluster CV undefined ({msg}); lambda_star set to {l}");
            l
        }
        Err(e) => return Err(e),
    };
    Ok((
        PenaltyConfig {
            values: PenaltyValues {
                lambda_treated,
                lambda_neighbors,
                lambda_star,
            },
            grid_size: grid.len(),
            grid: grid.to_string(),
        },
        reports,
    ))
}
