//! Glue between the panel and the weight solver: builds problems for a
//! target unit and a donor list, and turns weights into predictions.

use crate::error::{Error, Result};
use crate::panel::{FeatureMode, FeatureSpec, FeatureTable, PanelDataset};
use crate::solver::{PreparedProblem, SolveProblem, WeightVector};

/// Feature tables of one dataset and outcome, in both modes.
#[derive(Debug, Clone)]
pub struct SynthContext<'a> {
    ds: &'a PanelDataset,
    spec: FeatureSpec,
    cross: FeatureTable,
    within: FeatureTable,
    standardize: bool,
}

impl<'a> SynthContext<'a> {
    pub fn new(ds: &'a PanelDataset, spec: FeatureSpec, standardize: bool) -> Result<Self> {
        let cross = FeatureTable::new(ds, &spec, FeatureMode::CrossCluster, standardize)?;
        let within = FeatureTable::new(ds, &spec, FeatureMode::WithinCluster, standardize)?;
        Ok(Self {
            ds,
            spec,
            cross,
            within,
            standardize,
        })
    }

    /// Context using [`FeatureSpec::for_outcome`].
    pub fn for_outcome(ds: &'a PanelDataset, outcome: usize, standardize: bool) -> Result<Self> {
        Self::new(ds, FeatureSpec::for_outcome(ds, outcome), standardize)
    }

    pub fn dataset(&self) -> &'a PanelDataset {
        self.ds
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn outcome(&self) -> usize {
        self.spec.outcome
    }

    pub fn standardize(&self) -> bool {
        self.standardize
    }

    pub fn table(&self, mode: FeatureMode) -> &FeatureTable {
        match mode {
            FeatureMode::CrossCluster => &self.cross,
            FeatureMode::WithinCluster => &self.within,
        }
    }

    pub fn problem(&self, target: usize, donors: &[usize], mode: FeatureMode, lambda: f64) -> Result<SolveProblem> {
        if donors.is_empty() {
            return Err(Error::EmptyDonorPool(self.ds.unit_id(target).to_string()));
        }
        let table = self.table(mode);
        let donor_vecs: Vec<_> = donors.iter().map(|&d| table.get(d)).collect();
        SolveProblem::from_features(table.get(target), &donor_vecs, lambda)
    }

    pub fn fit(&self, target: usize, donors: &[usize], mode: FeatureMode, lambda: f64) -> Result<Fit> {
        let problem = self.problem(target, donors, mode, lambda)?;
        let weights = PreparedProblem::new(&problem).solve(&problem)?;
        Ok(Fit {
            target,
            donors: donors.to_vec(),
            weights,
        })
    }

    /// Σ_j ω_j Y_{donor_j, t} for the context's outcome.
    pub fn predict(&self, donors: &[usize], weights: &WeightVector, t: usize) -> f64 {
        predict(self.ds, self.spec.outcome, donors, weights, t)
    }
}

pub fn predict(ds: &PanelDataset, variable: usize, donors: &[usize], weights: &WeightVector, t: usize) -> f64 {
    donors
        .iter()
        .zip(&weights.weights)
        .map(|(&d, w)| w * ds.value(d, variable, t))
        .sum()
}

/// Solved weights for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub target: usize,
    pub donors: Vec<usize>,
    pub weights: WeightVector,
}
