//! Clustered panel data model.
//!
//! A [`PanelDataset`] holds a balanced unit × variable × period grid together
//! with the cluster partition and the single-treated-unit assignment. Periods
//! are addressed by zero-based index internally; the original period labels
//! (e.g. years) are kept for output. Index `t < pre_periods()` is a
//! pre-treatment period.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::error::{Error, Result};

/// One long-format observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub unit_id: String,
    pub cluster_id: String,
    pub time: i64,
    pub variable: String,
    pub value: f64,
}

/// Raw unit × variable × period grid before any treatment assignment.
///
/// Units, clusters, periods and variables are kept in ascending order so that
/// index order equals id order.
#[derive(Debug, Clone, PartialEq)]
pub struct LongPanel {
    unit_ids: Vec<String>,
    unit_cluster: Vec<usize>,
    cluster_ids: Vec<String>,
    periods: Vec<i64>,
    variables: Vec<String>,
    // unit-major, then variable, then period; NaN marks a missing cell
    values: Vec<f64>,
}

impl LongPanel {
    /// Builds the grid from records. `row` numbers in errors are 1-based
    /// positions in the iterator offset by `first_row`.
    pub fn from_records<I>(records: I, first_row: usize) -> Result<Self>
    where
        I: IntoIterator<Item = Record>,
    {
        let mut unit_cluster: BTreeMap<String, String> = BTreeMap::new();
        let mut periods = BTreeSet::new();
        let mut variables = BTreeSet::new();
        let mut cells: BTreeMap<(String, String, i64), f64> = BTreeMap::new();

        for (k, rec) in records.into_iter().enumerate() {
            let row = first_row + k;
            if rec.unit_id.is_empty() || rec.cluster_id.is_empty() || rec.variable.is_empty() {
                return Err(Error::Schema {
                    row,
                    message: "empty identifier".into(),
                });
            }
            if !rec.value.is_finite() {
                return Err(Error::Schema {
                    row,
                    message: format!("non-finite value {}", rec.value),
                });
            }
            match unit_cluster.get(&rec.unit_id) {
                Some(c) if *c != rec.cluster_id => {
                    return Err(Error::Schema {
                        row,
                        message: format!(
                            "unit '{}' listed in cluster '{}' and '{}'",
                            rec.unit_id, c, rec.cluster_id
                        ),
                    })
                }
                Some(_) => {}
                None => {
                    unit_cluster.insert(rec.unit_id.clone(), rec.cluster_id.clone());
                }
            }
            periods.insert(rec.time);
            variables.insert(rec.variable.clone());
            let key = (rec.unit_id.clone(), rec.variable.clone(), rec.time);
            if cells.insert(key, rec.value).is_some() {
                return Err(Error::DuplicateKey {
                    row,
                    unit: rec.unit_id,
                    variable: rec.variable,
                    time: rec.time,
                });
            }
        }
        if unit_cluster.is_empty() {
            return Err(Error::InvalidPanel("no records".into()));
        }

        let cluster_ids: Vec<String> = unit_cluster
            .values()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let unit_ids: Vec<String> = unit_cluster.keys().cloned().collect();
        let unit_cluster: Vec<usize> = unit_ids
            .iter()
            .map(|u| {
                let c = &unit_cluster[u];
                cluster_ids.binary_search(c).expect("cluster id collected")
            })
            .collect();
        let periods: Vec<i64> = periods.into_iter().collect();
        let variables: Vec<String> = variables.into_iter().collect();

        let (nv, nt) = (variables.len(), periods.len());
        let mut values = vec![f64::NAN; unit_ids.len() * nv * nt];
        for ((u, v, t), x) in cells {
            let ui = unit_ids.binary_search(&u).expect("unit collected");
            let vi = variables.binary_search(&v).expect("variable collected");
            let ti = periods.binary_search(&t).expect("period collected");
            values[(ui * nv + vi) * nt + ti] = x;
        }

        Ok(Self {
            unit_ids,
            unit_cluster,
            cluster_ids,
            periods,
            variables,
            values,
        })
    }

    /// Every (unit, variable) pair must have a value at every period.
    pub fn check_balanced(&self) -> Result<()> {
        let (nv, nt) = (self.variables.len(), self.periods.len());
        for (u, uid) in self.unit_ids.iter().enumerate() {
            for (v, vname) in self.variables.iter().enumerate() {
                for (t, p) in self.periods.iter().enumerate() {
                    if self.values[(u * nv + v) * nt + t].is_nan() {
                        return Err(Error::UnbalancedPanel(format!(
                            "unit '{uid}' has no '{vname}' value at time {p}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn cluster_ids(&self) -> &[String] {
        &self.cluster_ids
    }

    pub fn periods(&self) -> &[i64] {
        &self.periods
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn n_records(&self) -> usize {
        self.values.iter().filter(|x| !x.is_nan()).count()
    }

    /// Long-format records in (unit, variable, time) order.
    pub fn records(&self) -> Vec<Record> {
        let (nv, nt) = (self.variables.len(), self.periods.len());
        let mut out = Vec::with_capacity(self.values.len());
        for (u, uid) in self.unit_ids.iter().enumerate() {
            for (v, vname) in self.variables.iter().enumerate() {
                for (t, &p) in self.periods.iter().enumerate() {
                    let x = self.values[(u * nv + v) * nt + t];
                    if !x.is_nan() {
                        out.push(Record {
                            unit_id: uid.clone(),
                            cluster_id: self.cluster_ids[self.unit_cluster[u]].clone(),
                            time: p,
                            variable: vname.clone(),
                            value: x,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Which unit is treated, when treatment starts and how variables are used.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub treated_unit: String,
    /// Label of the last pre-treatment period.
    pub last_pre_period: i64,
    pub outcomes: Vec<String>,
    pub covariates: Vec<String>,
}

/// Clustered panel with a single treated unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    unit_ids: Vec<String>,
    unit_cluster: Vec<usize>,
    cluster_ids: Vec<String>,
    cluster_members: Vec<Vec<usize>>,
    periods: Vec<i64>,
    pre_periods: usize,
    variables: Vec<String>,
    outcomes: Vec<usize>,
    covariates: Vec<usize>,
    values: Vec<f64>,
    treated: usize,
}

impl PanelDataset {
    pub fn new(panel: LongPanel, assignment: &Assignment) -> Result<Self> {
        let LongPanel {
            unit_ids,
            unit_cluster,
            cluster_ids,
            periods,
            variables,
            values,
        } = panel;

        let var_index = |name: &str| {
            variables
                .iter()
                .position(|v| v == name)
                .ok_or_else(|| Error::UnknownVariable(name.to_string()))
        };
        if assignment.outcomes.is_empty() {
            return Err(Error::Config("at least one outcome variable is required".into()));
        }
        let outcomes = assignment
            .outcomes
            .iter()
            .map(|v| var_index(v))
            .collect::<Result<Vec<_>>>()?;
        let covariates = assignment
            .covariates
            .iter()
            .map(|v| var_index(v))
            .collect::<Result<Vec<_>>>()?;
        if let Some(v) = covariates.iter().find(|v| outcomes.contains(v)) {
            return Err(Error::Config(format!(
                "variable '{}' listed as both outcome and covariate",
                variables[*v]
            )));
        }

        let treated = unit_ids
            .iter()
            .position(|u| *u == assignment.treated_unit)
            .ok_or_else(|| Error::UnknownUnit(assignment.treated_unit.clone()))?;
        let last_pre = periods
            .iter()
            .position(|&p| p == assignment.last_pre_period)
            .ok_or_else(|| {
                Error::Config(format!(
                    "last pre-treatment period {} is not a panel period",
                    assignment.last_pre_period
                ))
            })?;
        let pre_periods = last_pre + 1;
        if pre_periods < 2 || pre_periods >= periods.len() {
            return Err(Error::InvalidPanel(format!(
                "need 1 < T0 < T, got T0 = {pre_periods}, T = {}",
                periods.len()
            )));
        }

        let mut cluster_members = vec![Vec::new(); cluster_ids.len()];
        for (u, &c) in unit_cluster.iter().enumerate() {
            cluster_members[c].push(u);
        }

        let ds = Self {
            unit_ids,
            unit_cluster,
            cluster_ids,
            cluster_members,
            periods,
            pre_periods,
            variables,
            outcomes,
            covariates,
            values,
            treated,
        };
        if ds.cluster_members[ds.treated_cluster()].len() < 2 {
            return Err(Error::InvalidPanel(format!(
                "treated cluster '{}' must contain at least 2 units",
                ds.cluster_ids[ds.treated_cluster()]
            )));
        }
        if ds.control_units().is_empty() {
            return Err(Error::InvalidPanel("no units outside the treated cluster".into()));
        }
        ds.check_complete()?;
        Ok(ds)
    }

    fn check_complete(&self) -> Result<()> {
        let nt = self.periods.len();
        for u in 0..self.n_units() {
            for &v in &self.outcomes {
                self.check_range(u, v, nt)?;
            }
            for &v in &self.covariates {
                self.check_range(u, v, self.pre_periods)?;
            }
        }
        Ok(())
    }

    fn check_range(&self, u: usize, v: usize, upto: usize) -> Result<()> {
        for t in 0..upto {
            if !self.value(u, v, t).is_finite() {
                return Err(Error::IncompletePanel {
                    unit: self.unit_ids[u].clone(),
                    variable: self.variables[v].clone(),
                    period: self.periods[t],
                });
            }
        }
        Ok(())
    }

    /// Same panel with another unit cast as treated, optionally dropping one
    /// cluster entirely. Used to build in-space placebo datasets; unlike
    /// [`PanelDataset::new`] a singleton treated cluster is allowed here.
    pub fn reassigned(&self, treated: usize, drop_cluster: Option<usize>) -> Result<Self> {
        if treated >= self.n_units() {
            return Err(Error::UnknownUnit(format!("#{treated}")));
        }
        if drop_cluster == Some(self.unit_cluster[treated]) {
            return Err(Error::InvalidPanel(
                "cannot drop the cluster of the new treated unit".into(),
            ));
        }
        let keep: Vec<usize> = (0..self.n_units())
            .filter(|&u| Some(self.unit_cluster[u]) != drop_cluster)
            .collect();
        let kept_clusters: Vec<usize> = (0..self.cluster_ids.len())
            .filter(|&c| Some(c) != drop_cluster)
            .collect();
        let cluster_map: BTreeMap<usize, usize> = kept_clusters
            .iter()
            .enumerate()
            .map(|(new, &old)| (old, new))
            .collect();

        let (nv, nt) = (self.variables.len(), self.periods.len());
        let mut values = Vec::with_capacity(keep.len() * nv * nt);
        for &u in &keep {
            values.extend_from_slice(&self.values[u * nv * nt..(u + 1) * nv * nt]);
        }
        let unit_cluster: Vec<usize> = keep.iter().map(|&u| cluster_map[&self.unit_cluster[u]]).collect();
        let mut cluster_members = vec![Vec::new(); kept_clusters.len()];
        for (u, &c) in unit_cluster.iter().enumerate() {
            cluster_members[c].push(u);
        }
        let new_treated = keep.iter().position(|&u| u == treated).expect("treated kept");

        Ok(Self {
            unit_ids: keep.iter().map(|&u| self.unit_ids[u].clone()).collect(),
            unit_cluster,
            cluster_ids: kept_clusters.iter().map(|&c| self.cluster_ids[c].clone()).collect(),
            cluster_members,
            periods: self.periods.clone(),
            pre_periods: self.pre_periods,
            variables: self.variables.clone(),
            outcomes: self.outcomes.clone(),
            covariates: self.covariates.clone(),
            values,
            treated: new_treated,
        })
    }

    /// Copy with every value of one variable transformed by `f`.
    pub fn map_variable(&self, variable: usize, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        let (nv, nt) = (self.variables.len(), self.periods.len());
        for u in 0..self.n_units() {
            for t in 0..nt {
                let i = (u * nv + variable) * nt + t;
                out.values[i] = f(u, t, self.values[i]);
            }
        }
        out
    }

    /// Back to the assignment-free long grid.
    pub fn to_long_panel(&self) -> LongPanel {
        LongPanel {
            unit_ids: self.unit_ids.clone(),
            unit_cluster: self.unit_cluster.clone(),
            cluster_ids: self.cluster_ids.clone(),
            periods: self.periods.clone(),
            variables: self.variables.clone(),
            values: self.values.clone(),
        }
    }

    pub fn assignment(&self) -> Assignment {
        Assignment {
            treated_unit: self.unit_ids[self.treated].clone(),
            last_pre_period: self.periods[self.pre_periods - 1],
            outcomes: self.outcomes.iter().map(|&v| self.variables[v].clone()).collect(),
            covariates: self.covariates.iter().map(|&v| self.variables[v].clone()).collect(),
        }
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_ids.len()
    }

    pub fn unit_id(&self, unit: usize) -> &str {
        &self.unit_ids[unit]
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn unit_index(&self, id: &str) -> Result<usize> {
        self.unit_ids
            .iter()
            .position(|u| u == id)
            .ok_or_else(|| Error::UnknownUnit(id.to_string()))
    }

    pub fn cluster_id(&self, cluster: usize) -> &str {
        &self.cluster_ids[cluster]
    }

    pub fn cluster_of(&self, unit: usize) -> usize {
        self.unit_cluster[unit]
    }

    pub fn cluster_members(&self, cluster: usize) -> &[usize] {
        &self.cluster_members[cluster]
    }

    pub fn treated_unit(&self) -> usize {
        self.treated
    }

    pub fn treated_cluster(&self) -> usize {
        self.unit_cluster[self.treated]
    }

    /// Untreated units of the treated cluster, ascending.
    pub fn neighbors(&self) -> Vec<usize> {
        self.cluster_members[self.treated_cluster()]
            .iter()
            .copied()
            .filter(|&u| u != self.treated)
            .collect()
    }

    /// Units outside the treated cluster, ascending.
    pub fn control_units(&self) -> Vec<usize> {
        let tc = self.treated_cluster();
        (0..self.n_units()).filter(|&u| self.unit_cluster[u] != tc).collect()
    }

    pub fn periods(&self) -> &[i64] {
        &self.periods
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    /// T0, the number of pre-treatment periods.
    pub fn pre_periods(&self) -> usize {
        self.pre_periods
    }

    pub fn post_periods(&self) -> std::ops::Range<usize> {
        self.pre_periods..self.periods.len()
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn variable_index(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn outcome_variables(&self) -> &[usize] {
        &self.outcomes
    }

    pub fn covariate_variables(&self) -> &[usize] {
        &self.covariates
    }

    #[inline]
    pub fn value(&self, unit: usize, variable: usize, t: usize) -> f64 {
        let (nv, nt) = (self.variables.len(), self.periods.len());
        self.values[(unit * nv + variable) * nt + t]
    }

    pub fn series(&self, unit: usize, variable: usize) -> &[f64] {
        let (nv, nt) = (self.variables.len(), self.periods.len());
        let start = (unit * nv + variable) * nt;
        &self.values[start..start + nt]
    }

    /// Neighborhood value used in feature vectors. Units of a singleton
    /// cluster are their own neighborhood.
    pub(crate) fn neighborhood_value(&self, unit: usize, variable: usize, t: usize) -> f64 {
        let members = &self.cluster_members[self.unit_cluster[unit]];
        if members.len() < 2 {
            return self.value(unit, variable, t);
        }
        let sum: f64 = members.iter().map(|&j| self.value(j, variable, t)).sum();
        (sum - self.value(unit, variable, t)) / (members.len() - 1) as f64
    }
}

/// Leave-one-out mean of `variable` at period `t` over the unit's own cluster.
pub fn neighborhood_average(ds: &PanelDataset, unit: usize, variable: usize, t: usize) -> Result<f64> {
    if unit >= ds.n_units() {
        return Err(Error::UnknownUnit(format!("#{unit}")));
    }
    if variable >= ds.variables.len() {
        return Err(Error::UnknownVariable(format!("#{variable}")));
    }
    let members = ds.cluster_members(ds.cluster_of(unit));
    if members.len() < 2 {
        return Err(Error::NoNeighbors {
            unit: ds.unit_id(unit).to_string(),
        });
    }
    let mut sum = 0.0;
    for &j in members.iter().filter(|&&j| j != unit) {
        let x = ds.value(j, variable, t);
        if !x.is_finite() {
            return Err(Error::IncompletePanel {
                unit: ds.unit_id(j).to_string(),
                variable: ds.variables[variable].clone(),
                period: ds.periods[t],
            });
        }
        sum += x;
    }
    Ok(sum / (members.len() - 1) as f64)
}

/// Outcome variable plus the covariates that enter feature vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSpec {
    pub outcome: usize,
    pub covariates: Vec<usize>,
}

impl FeatureSpec {
    /// Declared covariates plus every other outcome variable, so that
    /// outcomes take turns as outcome of interest and as covariate.
    pub fn for_outcome(ds: &PanelDataset, outcome: usize) -> Self {
        let mut covariates: Vec<usize> = ds.covariates.clone();
        covariates.extend(ds.outcomes.iter().copied().filter(|&v| v != outcome));
        covariates.sort_unstable();
        Self { outcome, covariates }
    }

    /// Outcome only, no covariates.
    pub fn outcome_only(outcome: usize) -> Self {
        Self {
            outcome,
            covariates: Vec::new(),
        }
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureMode {
    /// Unit and neighborhood blocks; used for synthesis from other clusters.
    CrossCluster,
    /// Unit-level blocks only; used for synthesis inside the treated cluster.
    WithinCluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureRole {
    UnitOutcome,
    NeighborhoodOutcome,
    UnitCovariate,
    NeighborhoodCovariate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureLabel {
    pub role: FeatureRole,
    pub variable: usize,
    pub period: usize,
}

/// Stacked pre-treatment vector for one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub owner: usize,
    pub values: Vec<f64>,
    pub layout: Arc<[FeatureLabel]>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Block order: unit outcomes, neighborhood outcomes, unit covariates,
/// neighborhood covariates; within a block by variable, then period.
pub fn feature_layout(spec: &FeatureSpec, pre_periods: usize, mode: FeatureMode) -> Vec<FeatureLabel> {
    let mut roles = vec![(FeatureRole::UnitOutcome, vec![spec.outcome])];
    if mode == FeatureMode::CrossCluster {
        roles.push((FeatureRole::NeighborhoodOutcome, vec![spec.outcome]));
    }
    roles.push((FeatureRole::UnitCovariate, spec.covariates.clone()));
    if mode == FeatureMode::CrossCluster {
        roles.push((FeatureRole::NeighborhoodCovariate, spec.covariates.clone()));
    }
    let mut layout = Vec::new();
    for (role, vars) in roles {
        for variable in vars {
            for period in 0..pre_periods {
                layout.push(FeatureLabel { role, variable, period });
            }
        }
    }
    layout
}

fn label_value(ds: &PanelDataset, unit: usize, label: &FeatureLabel) -> f64 {
    match label.role {
        FeatureRole::UnitOutcome | FeatureRole::UnitCovariate => ds.value(unit, label.variable, label.period),
        FeatureRole::NeighborhoodOutcome | FeatureRole::NeighborhoodCovariate => {
            ds.neighborhood_value(unit, label.variable, label.period)
        }
    }
}

fn check_unit(ds: &PanelDataset, unit: usize) -> Result<()> {
    if unit >= ds.n_units() {
        return Err(Error::UnknownUnit(format!("#{unit}")));
    }
    Ok(())
}

pub fn build_feature_vector(
    ds: &PanelDataset,
    spec: &FeatureSpec,
    unit: usize,
    mode: FeatureMode,
) -> Result<FeatureVector> {
    check_unit(ds, unit)?;
    let layout: Arc<[FeatureLabel]> = feature_layout(spec, ds.pre_periods, mode).into();
    build_with_layout(ds, unit, layout)
}

fn build_with_layout(ds: &PanelDataset, unit: usize, layout: Arc<[FeatureLabel]>) -> Result<FeatureVector> {
    let mut values = Vec::with_capacity(layout.len());
    for label in layout.iter() {
        let x = label_value(ds, unit, label);
        if !x.is_finite() {
            return Err(Error::IncompletePanel {
                unit: ds.unit_id(unit).to_string(),
                variable: ds.variables[label.variable].clone(),
                period: ds.periods[label.period],
            });
        }
        values.push(x);
    }
    Ok(FeatureVector {
        owner: unit,
        values,
        layout,
    })
}

/// Per-period row (unit outcome, neighborhood outcome, unit covariates,
/// neighborhood covariates) at pre-period `t`, as used for matching.
pub fn period_row(ds: &PanelDataset, spec: &FeatureSpec, unit: usize, t: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(2 + 2 * spec.covariates.len());
    row.push(ds.value(unit, spec.outcome, t));
    row.push(ds.neighborhood_value(unit, spec.outcome, t));
    row.extend(spec.covariates.iter().map(|&v| ds.value(unit, v, t)));
    row.extend(spec.covariates.iter().map(|&v| ds.neighborhood_value(unit, v, t)));
    row
}

/// Feature vectors for every unit in one mode, sharing a single layout.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    mode: FeatureMode,
    vectors: Vec<FeatureVector>,
    scales: Option<Vec<f64>>,
}

impl FeatureTable {
    /// With `standardize`, each dimension is divided by its cross-unit
    /// standard deviation (dimensions with zero spread are left as is).
    pub fn new(ds: &PanelDataset, spec: &FeatureSpec, mode: FeatureMode, standardize: bool) -> Result<Self> {
        let layout: Arc<[FeatureLabel]> = feature_layout(spec, ds.pre_periods, mode).into();
        let mut vectors = (0..ds.n_units())
            .map(|u| build_with_layout(ds, u, layout.clone()))
            .collect::<Result<Vec<_>>>()?;
        let scales = if standardize && vectors.len() > 1 {
            let n = vectors.len() as f64;
            let scales: Vec<f64> = (0..layout.len())
                .map(|d| {
                    let mean = vectors.iter().map(|f| f.values[d]).sum::<f64>() / n;
                    let var = vectors.iter().map(|f| (f.values[d] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                    let sd = var.sqrt();
                    if sd > 0.0 {
                        sd
                    } else {
                        1.0
                    }
                })
                .collect();
            for f in &mut vectors {
                for (x, s) in f.values.iter_mut().zip(&scales) {
                    *x /= s;
                }
            }
            Some(scales)
        } else {
            None
        };
        Ok(Self { mode, vectors, scales })
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    pub fn get(&self, unit: usize) -> &FeatureVector {
        &self.vectors[unit]
    }

    pub fn scales(&self) -> Option<&[f64]> {
        self.scales.as_deref()
    }
}

/// Within-cluster treatment allocation over the treated cluster's units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TreatmentAllocation {
    /// Nobody in the cluster treated.
    Zero,
    /// The given unit is the only treated unit of the cluster.
    Unit(usize),
}

impl TreatmentAllocation {
    /// 0/1 vector aligned with `members`.
    pub fn to_vector(&self, members: &[usize]) -> Vec<u8> {
        members
            .iter()
            .map(|&m| u8::from(matches!(self, TreatmentAllocation::Unit(u) if *u == m)))
            .collect()
    }
}

/// Potential-outcome label (own treatment, cluster allocation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PotentialOutcome {
    pub treated: bool,
    pub allocation: TreatmentAllocation,
}

/// Which potential outcome the observed value `Y(unit, t)` reveals.
pub fn observed_outcome_role(ds: &PanelDataset, unit: usize, t: usize) -> Result<PotentialOutcome> {
    check_unit(ds, unit)?;
    if t >= ds.n_periods() {
        return Err(Error::Config(format!("period index {t} out of range")));
    }
    let post = t >= ds.pre_periods;
    let in_treated_cluster = ds.cluster_of(unit) == ds.treated_cluster();
    Ok(if post && unit == ds.treated {
        PotentialOutcome {
            treated: true,
            allocation: TreatmentAllocation::Zero,
        }
    } else if post && in_treated_cluster {
        PotentialOutcome {
            treated: false,
            allocation: TreatmentAllocation::Unit(ds.treated),
        }
    } else {
        PotentialOutcome {
            treated: false,
            allocation: TreatmentAllocation::Zero,
        }
    })
}
