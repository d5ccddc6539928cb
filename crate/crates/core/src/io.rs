//! Reading long-format panels and writing result tables.
//!
//! Input is a CSV with header `unit_id,cluster_id,time,variable,value`.
//! Result tables print numbers with 6 significant digits; panels written
//! back out use the shortest exact representation so they round-trip.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::cv::{CvReport, PenaltyValues};
use crate::effects::{BalanceLevel, Estimand, Estimates};
use crate::error::{Error, Result};
use crate::matching::DonorMatches;
use crate::panel::{Assignment, LongPanel, PanelDataset, Record};
use crate::placebo::{PlaceboRun, PlaceboSummary};

pub const PANEL_HEADER: [&str; 5] = ["unit_id", "cluster_id", "time", "variable", "value"];

/// Parses a long CSV. Row numbers in errors count the header as row 1.
pub fn read_long_panel<R: Read>(reader: R) -> Result<LongPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != PANEL_HEADER {
        return Err(Error::Schema {
            row: 1,
            message: format!("expected header '{}', got '{}'", PANEL_HEADER.join(","), header.join(",")),
        });
    }
    let mut records = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let row_no = k + 2;
        let row = row?;
        if row.len() != 5 {
            return Err(Error::Schema {
                row: row_no,
                message: format!("expected 5 fields, got {}", row.len()),
            });
        }
        let time = row[2].parse::<i64>().map_err(|_| Error::Schema {
            row: row_no,
            message: format!("time '{}' is not an integer", &row[2]),
        })?;
        let value = row[4].parse::<f64>().map_err(|_| Error::Schema {
            row: row_no,
            message: format!("value '{}' is not a number", &row[4]),
        })?;
        records.push(Record {
            unit_id: row[0].to_string(),
            cluster_id: row[1].to_string(),
            time,
            variable: row[3].to_string(),
            value,
        });
    }
    LongPanel::from_records(records, 2)
}

pub fn read_panel_file(path: &Path) -> Result<LongPanel> {
    read_long_panel(File::open(path)?)
}

/// Counts reported after ingestion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    pub rows: usize,
    pub units: usize,
    pub clusters: usize,
    pub periods: usize,
    pub variables: usize,
}

impl IngestReport {
    pub fn new(panel: &LongPanel) -> Self {
        Self {
            rows: panel.n_records(),
            units: panel.unit_ids().len(),
            clusters: panel.cluster_ids().len(),
            periods: panel.periods().len(),
            variables: panel.variables().len(),
        }
    }
}

/// Reads, checks balance, and applies the assignment.
pub fn ingest_panel(path: &Path, assignment: &Assignment) -> Result<(PanelDataset, IngestReport)> {
    let panel = read_panel_file(path)?;
    panel.check_balanced()?;
    let report = IngestReport::new(&panel);
    Ok((PanelDataset::new(panel, assignment)?, report))
}

pub fn write_long_panel<W: Write>(panel: &LongPanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PANEL_HEADER)?;
    for r in panel.records() {
        w.write_record([r.unit_id, r.cluster_id, r.time.to_string(), r.variable, r.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `x` rounded to 6 significant digits, shortest form.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("valid float");
    if rounded == 0.0 {
        "0".into()
    } else {
        rounded.to_string()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), fmt_num)
}

/// A header plus string rows, ready for CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Rows of `other` appended; headers must agree.
    pub fn extend(&mut self, other: Table) -> Result<()> {
        if self.header.is_empty() {
            *self = other;
            return Ok(());
        }
        if self.header != other.header {
            return Err(Error::Config("cannot concatenate tables with different columns".into()));
        }
        self.rows.extend(other.rows);
        Ok(())
    }
}

/// Donor weights. Rows: every unit. Columns: the treated unit's Y(0, z)
/// synthesis, one per neighbor, and the treated unit's Y(0, e*) synthesis.
/// "-" marks units outside a column's donor pool.
pub fn weights_table(ds: &PanelDataset, est: &Estimates) -> Table {
    let treated = ds.unit_id(ds.treated_unit());
    let mut cfs = vec![(format!("{treated} (1)"), &est.treated)];
    cfs.extend(est.neighbors.iter().map(|cf| (ds.unit_id(cf.unit).to_string(), cf)));
    cfs.extend(est.star.iter().map(|cf| (format!("{treated} (2)"), cf)));

    let mut table = Table::new(["variable".to_string(), "donor".to_string()].into_iter().chain(cfs.iter().map(|(l, _)| l.clone())));
    let var = &ds.variables()[est.variable];
    for u in 0..ds.n_units() {
        let mut row = vec![var.clone(), ds.unit_id(u).to_string()];
        for (_, cf) in &cfs {
            row.push(match cf.donors.iter().position(|&d| d == u) {
                Some(j) => fmt_num(cf.weights.weights[j]),
                None => "-".into(),
            });
        }
        table.push(row);
    }
    table
}

pub fn balance_csv(ds: &PanelDataset, est: &Estimates) -> Table {
    let b = est.balance(ds);
    let mut table = Table::new(["variable".to_string(), "level".into(), "period".into()].into_iter().chain(b.columns.iter().cloned()));
    let var = &ds.variables()[b.variable];
    for r in &b.rows {
        let level = match r.level {
            BalanceLevel::Unit => "unit",
            BalanceLevel::Neighborhood => "neighborhood",
        };
        let mut row = vec![var.clone(), level.into(), r.period.to_string()];
        row.extend(r.values.iter().map(|&v| fmt_num(v)));
        table.push(row);
    }
    table
}

/// One row per variable: λ for the direct effect, the neighbors and the
/// within-cluster synthesis.
pub fn penalty_table(rows: &[(String, PenaltyValues)]) -> Table {
    let mut table = Table::new(["variable", "lambda_treated", "lambda_neighbors", "lambda_star"]);
    for (var, p) in rows {
        table.push(vec![
            var.clone(),
            fmt_num(p.lambda_treated),
            fmt_num(p.lambda_neighbors),
            fmt_num(p.lambda_star),
        ]);
    }
    table
}

/// Pre-period RMSPE per unit and fit: treated-cluster units from the actual
/// estimates, control units from their placebo runs.
pub fn rmspe_table(ds: &PanelDataset, est: &Estimates, runs: &[PlaceboRun]) -> Table {
    let mut table = Table::new(["variable", "unit", "direct", "spillover", "unrealized"]);
    let var = &ds.variables()[est.variable];
    let mut push = |unit: &str, d: Option<f64>, s: Option<f64>, g: Option<f64>| {
        table.push(vec![var.clone(), unit.to_string(), fmt_opt(d), fmt_opt(s), fmt_opt(g)]);
    };
    push(
        ds.unit_id(est.treated.unit),
        Some(est.treated.pre_period_rmspe),
        None,
        est.star.as_ref().map(|s| s.pre_period_rmspe),
    );
    for cf in &est.neighbors {
        push(ds.unit_id(cf.unit), None, Some(cf.pre_period_rmspe), None);
    }
    for r in runs {
        push(&r.pseudo_id, r.rmspe_direct, r.rmspe_spillover, r.rmspe_unrealized);
    }
    table
}

fn estimand_label(ds: &PanelDataset, estimand: Estimand, unit: usize) -> String {
    match estimand {
        Estimand::SpilloverIndividual => format!("{}:{}", estimand.name(), ds.unit_id(unit)),
        e => e.name().to_string(),
    }
}

/// Long effect series. Individual spillovers are labelled
/// `spillover_individual:<unit>`.
pub fn effects_table(ds: &PanelDataset, est: &Estimates) -> Table {
    let mut table = Table::new(["estimand", "variable", "period", "value"]);
    let var = &ds.variables()[est.variable];
    for s in est.all_series() {
        let label = estimand_label(ds, s.estimand, s.unit);
        for (p, v) in s.periods.iter().zip(&s.values) {
            table.push(vec![label.clone(), var.clone(), p.to_string(), fmt_num(*v)]);
        }
    }
    table
}

/// Placebo effect values, excluded runs included and flagged. `rmspe` is the
/// RMSPE used for exclusion.
pub fn placebo_table(variable: &str, runs: &[PlaceboRun]) -> Table {
    let mut table = Table::new(["estimand", "variable", "period", "pseudo_unit", "value", "excluded", "rmspe"]);
    for r in runs {
        let excluded = r.excluded.as_ref().map(|e| e.reason()).unwrap_or_default();
        let rmspe = fmt_opt(r.rmspe_direct);
        match &r.estimates {
            Some(est) => {
                for s in est.aggregate_series() {
                    for (p, v) in s.periods.iter().zip(&s.values) {
                        table.push(vec![
                            s.estimand.name().into(),
                            variable.into(),
                            p.to_string(),
                            r.pseudo_id.clone(),
                            fmt_num(*v),
                            excluded.clone(),
                            rmspe.clone(),
                        ]);
                    }
                }
            }
            None => table.push(vec![
                Estimand::Direct.name().into(),
                variable.into(),
                String::new(),
                r.pseudo_id.clone(),
                String::new(),
                excluded.clone(),
                rmspe.clone(),
            ]),
        }
    }
    table
}

/// Rank tests per period plus the aggregate (`period` = "all").
pub fn placebo_summary_table(variable: &str, summaries: &[PlaceboSummary]) -> Table {
    let mut table = Table::new(["estimand", "variable", "period", "actual", "rank", "count", "p_value"]);
    for s in summaries {
        let tests = s.periods.iter().map(|p| p.to_string()).chain(["all".to_string()]);
        for (period, t) in tests.zip(s.per_period.iter().chain([&s.aggregate])) {
            table.push(vec![
                s.estimand.name().into(),
                variable.into(),
                period,
                fmt_num(t.actual),
                t.rank.to_string(),
                t.count.to_string(),
                fmt_num(t.p_value),
            ]);
        }
    }
    table
}

pub fn cv_table(variable: &str, reports: &[CvReport]) -> Table {
    let mut table = Table::new(["variable", "criterion", "lambda", "rmspe"]);
    for r in reports {
        for p in &r.curve {
            table.push(vec![variable.into(), r.criterion.name().into(), fmt_num(p.lambda), fmt_num(p.rmspe)]);
        }
    }
    table
}

/// Every control ranked per anchor and pre-period; `selected` marks the m nearest.
pub fn matches_table(ds: &PanelDataset, variable: &str, matches: &DonorMatches) -> Table {
    let mut table = Table::new(["variable", "anchor", "period", "rank", "unit", "cluster", "distance", "selected"]);
    for set in matches.by_anchor.values() {
        for (t, ranked) in set.per_period.iter().enumerate() {
            for (rank, &(u, d)) in ranked.iter().enumerate() {
                table.push(vec![
                    variable.into(),
                    ds.unit_id(set.anchor).into(),
                    ds.periods()[t].to_string(),
                    (rank + 1).to_string(),
                    ds.unit_id(u).into(),
                    ds.cluster_id(ds.cluster_of(u)).into(),
                    fmt_num(d),
                    (rank < matches.m).to_string(),
                ]);
            }
        }
    }
    table
}
