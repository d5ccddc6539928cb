//! Imputation of missing potential outcomes and the effect series built on
//! them: direct τ, individual and average spillover δ, unrealized spillover
//! γ and the contrast τ − γ.

use serde::{Deserialize, Serialize};

use crate::cv::PenaltyValues;
use crate::error::{Error, Result};
use crate::panel::{FeatureMode, PanelDataset};
use crate::solver::WeightVector;
use crate::synthesis::SynthContext;

/// Which missing potential outcome a counterfactual series stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Imputed {
    /// Y(0, z): nobody in the unit's cluster treated; donors from other clusters.
    ZeroAllocation,
    /// Y(0, e*): a cluster-mate treated instead; donors are the cluster-mates.
    NeighborTreated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualSeries {
    pub unit: usize,
    pub variable: usize,
    pub imputed: Imputed,
    pub donors: Vec<usize>,
    pub weights: WeightVector,
    /// Σ ω_j Y_{donor_j, t} over the post-periods.
    pub values: Vec<f64>,
    /// Same combination over the pre-periods.
    pub pre_fitted: Vec<f64>,
    /// Σ ω_j (neighborhood average of donor_j) over the pre-periods.
    pub pre_fitted_neighborhood: Vec<f64>,
    pub pre_period_rmspe: f64,
}

pub fn impute_control_outcome(
    ds: &PanelDataset,
    variable: usize,
    unit: usize,
    donors: &[usize],
    weights: &WeightVector,
    imputed: Imputed,
) -> Result<CounterfactualSeries> {
    if donors.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: donors.len(),
            found: weights.len(),
        });
    }
    if donors.is_empty() {
        return Err(Error::EmptyDonorPool(ds.unit_id(unit).to_string()));
    }
    let cluster = ds.cluster_of(unit);
    for &d in donors {
        let ok = match imputed {
            Imputed::ZeroAllocation => ds.cluster_of(d) != cluster,
            Imputed::NeighborTreated => ds.cluster_of(d) == cluster && d != unit,
        };
        if !ok {
            return Err(Error::SeriesMismatch(format!(
                "unit '{}' is not an eligible donor for '{}'",
                ds.unit_id(d),
                ds.unit_id(unit)
            )));
        }
    }
    let combine = |f: &dyn Fn(usize, usize) -> f64, t: usize| -> f64 {
        donors.iter().zip(&weights.weights).map(|(&d, w)| w * f(d, t)).sum()
    };
    let own = |d: usize, t: usize| ds.value(d, variable, t);
    let nbr = |d: usize, t: usize| ds.neighborhood_value(d, variable, t);

    let t0 = ds.pre_periods();
    let values = ds.post_periods().map(|t| combine(&own, t)).collect();
    let pre_fitted: Vec<f64> = (0..t0).map(|t| combine(&own, t)).collect();
    let pre_fitted_neighborhood = (0..t0).map(|t| combine(&nbr, t)).collect();
    let ss: f64 = pre_fitted
        .iter()
        .enumerate()
        .map(|(t, f)| (ds.value(unit, variable, t) - f).powi(2))
        .sum();
    Ok(CounterfactualSeries {
        unit,
        variable,
        imputed,
        donors: donors.to_vec(),
        weights: weights.clone(),
        values,
        pre_fitted,
        pre_fitted_neighborhood,
        pre_period_rmspe: (ss / t0 as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    Direct,
    SpilloverIndividual,
    SpilloverAverage,
    Unrealized,
    NetContrast,
}

impl Estimand {
    pub fn name(self) -> &'static str {
        match self {
            Estimand::Direct => "direct",
            Estimand::SpilloverIndividual => "spillover_individual",
            Estimand::SpilloverAverage => "spillover_average",
            Estimand::Unrealized => "unrealized",
            Estimand::NetContrast => "net_contrast",
        }
    }
}

pub const CONSTANT_SPILLOVER_NOTE: &str =
    "assumes the spillover is the same whichever neighbor would have been treated";
pub const NET_CONTRAST_NOTE: &str =
    "positive: the treated unit gains from hosting the treatment rather than a neighbor hosting it";

/// Per post-period effect estimates with the two series they are the
/// difference of. For `Unrealized`, `observed` holds Ŷ(0, e*); for
/// `NetContrast`, `imputed` holds Ŷ(0, e*).
#[derive(Debug, Clone, PartialEq)]
pub struct EffectSeries {
    pub estimand: Estimand,
    pub variable: usize,
    /// The unit the effect refers to (the treated unit, or a neighbor for
    /// individual spillovers).
    pub unit: usize,
    pub periods: Vec<i64>,
    pub values: Vec<f64>,
    pub observed: Vec<f64>,
    pub imputed: Vec<f64>,
    pub pre_period_rmspe: Option<f64>,
    pub note: Option<&'static str>,
}

impl EffectSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.values.len() as f64
    }
}

fn post_labels(ds: &PanelDataset) -> Vec<i64> {
    ds.periods()[ds.pre_periods()..].to_vec()
}

fn observed_minus_imputed(ds: &PanelDataset, cf: &CounterfactualSeries, estimand: Estimand) -> EffectSeries {
    let observed: Vec<f64> = ds.post_periods().map(|t| ds.value(cf.unit, cf.variable, t)).collect();
    let values = observed.iter().zip(&cf.values).map(|(o, i)| o - i).collect();
    EffectSeries {
        estimand,
        variable: cf.variable,
        unit: cf.unit,
        periods: post_labels(ds),
        values,
        observed,
        imputed: cf.values.clone(),
        pre_period_rmspe: Some(cf.pre_period_rmspe),
        note: None,
    }
}

/// τ_t = Y_t − Ŷ_t(0, z) for the treated unit.
pub fn direct_effect(ds: &PanelDataset, cf: &CounterfactualSeries) -> Result<EffectSeries> {
    if cf.imputed != Imputed::ZeroAllocation {
        return Err(Error::SeriesMismatch("direct effect needs a Y(0, z) imputation".into()));
    }
    if cf.unit != ds.treated_unit() {
        return Err(Error::SeriesMismatch(format!(
            "direct effect needs the treated unit, got '{}'",
            ds.unit_id(cf.unit)
        )));
    }
    Ok(observed_minus_imputed(ds, cf, Estimand::Direct))
}

/// Individual spillovers, one per neighbor in the given order, and their mean.
pub fn spillover_effects(ds: &PanelDataset, cfs: &[CounterfactualSeries]) -> Result<(Vec<EffectSeries>, EffectSeries)> {
    let neighbors = ds.neighbors();
    if neighbors.is_empty() {
        return Err(Error::NoNeighbors {
            unit: ds.unit_id(ds.treated_unit()).to_string(),
        });
    }
    let mut individual = Vec::with_capacity(neighbors.len());
    for &i in &neighbors {
        let cf = cfs.iter().find(|c| c.unit == i).ok_or_else(|| {
            Error::SeriesMismatch(format!("no imputation for neighbor '{}'", ds.unit_id(i)))
        })?;
        if cf.imputed != Imputed::ZeroAllocation {
            return Err(Error::SeriesMismatch("spillovers need Y(0, z) imputations".into()));
        }
        individual.push(observed_minus_imputed(ds, cf, Estimand::SpilloverIndividual));
    }
    let average = mean_series(&individual, ds.treated_unit());
    Ok((individual, average))
}

fn mean_series(individual: &[EffectSeries], unit: usize) -> EffectSeries {
    let n = individual.len() as f64;
    let mean = |f: &dyn Fn(&EffectSeries) -> &[f64]| -> Vec<f64> {
        (0..individual[0].len())
            .map(|k| individual.iter().map(|s| f(s)[k]).sum::<f64>() / n)
            .collect()
    };
    EffectSeries {
        estimand: Estimand::SpilloverAverage,
        variable: individual[0].variable,
        unit,
        periods: individual[0].periods.clone(),
        values: mean(&|s| &s.values),
        observed: mean(&|s| &s.observed),
        imputed: mean(&|s| &s.imputed),
        pre_period_rmspe: None,
        note: None,
    }
}

/// γ_t = Σ ξ_i Y_{i,t} − Ŷ_t(0, z), with `star` the treated unit's Y(0, e*)
/// imputation from its cluster-mates.
pub fn unrealized_spillover(ds: &PanelDataset, star: &CounterfactualSeries, cf_zero: &CounterfactualSeries) -> Result<EffectSeries> {
    if star.imputed != Imputed::NeighborTreated || cf_zero.imputed != Imputed::ZeroAllocation {
        return Err(Error::SeriesMismatch(
            "unrealized spillover needs a Y(0, e*) and a Y(0, z) imputation".into(),
        ));
    }
    if star.unit != cf_zero.unit || star.values.len() != cf_zero.values.len() {
        return Err(Error::SeriesMismatch("imputations refer to different targets".into()));
    }
    Ok(EffectSeries {
        estimand: Estimand::Unrealized,
        variable: star.variable,
        unit: star.unit,
        periods: post_labels(ds),
        values: star.values.iter().zip(&cf_zero.values).map(|(a, b)| a - b).collect(),
        observed: star.values.clone(),
        imputed: cf_zero.values.clone(),
        pre_period_rmspe: Some(star.pre_period_rmspe),
        note: Some(CONSTANT_SPILLOVER_NOTE),
    })
}

/// τ_t − γ_t.
pub fn net_contrast(direct: &EffectSeries, unrealized: &EffectSeries) -> Result<EffectSeries> {
    if direct.estimand != Estimand::Direct || unrealized.estimand != Estimand::Unrealized {
        return Err(Error::SeriesMismatch("net contrast needs a direct and an unrealized series".into()));
    }
    if direct.periods != unrealized.periods {
        return Err(Error::SeriesMismatch("post-period ranges differ".into()));
    }
    Ok(EffectSeries {
        estimand: Estimand::NetContrast,
        variable: direct.variable,
        unit: direct.unit,
        periods: direct.periods.clone(),
        values: direct.values.iter().zip(&unrealized.values).map(|(a, b)| a - b).collect(),
        observed: direct.observed.clone(),
        imputed: unrealized.observed.clone(),
        pre_period_rmspe: None,
        note: Some(NET_CONTRAST_NOTE),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceLevel {
    Unit,
    Neighborhood,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceRow {
    pub level: BalanceLevel,
    pub period: i64,
    /// One entry per column.
    pub values: Vec<f64>,
}

/// Pre-period observed minus fitted values. Columns: treated unit under
/// Y(0, z), each neighbor, then the treated unit under Y(0, e*). Rows: unit
/// level for every pre-period, then neighborhood level.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceTable {
    pub variable: usize,
    pub columns: Vec<String>,
    pub rows: Vec<BalanceRow>,
}

pub fn balance_table(
    ds: &PanelDataset,
    treated: &CounterfactualSeries,
    neighbors: &[CounterfactualSeries],
    star: Option<&CounterfactualSeries>,
) -> BalanceTable {
    let mut cfs: Vec<&CounterfactualSeries> = vec![treated];
    cfs.extend(neighbors);
    cfs.extend(star);
    let columns = cfs
        .iter()
        .map(|cf| match (cf.unit == ds.treated_unit(), cf.imputed) {
            (true, Imputed::ZeroAllocation) => format!("{} (1)", ds.unit_id(cf.unit)),
            (true, Imputed::NeighborTreated) => format!("{} (2)", ds.unit_id(cf.unit)),
            _ => ds.unit_id(cf.unit).to_string(),
        })
        .collect();
    let mut rows = Vec::with_capacity(2 * ds.pre_periods());
    for level in [BalanceLevel::Unit, BalanceLevel::Neighborhood] {
        for t in 0..ds.pre_periods() {
            let values = cfs
                .iter()
                .map(|cf| match level {
                    BalanceLevel::Unit => ds.value(cf.unit, cf.variable, t) - cf.pre_fitted[t],
                    BalanceLevel::Neighborhood => {
                        ds.neighborhood_value(cf.unit, cf.variable, t) - cf.pre_fitted_neighborhood[t]
                    }
                })
                .collect();
            rows.push(BalanceRow {
                level,
                period: ds.periods()[t],
                values,
            });
        }
    }
    BalanceTable {
        variable: treated.variable,
        columns,
        rows,
    }
}

/// All estimates for one outcome variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    pub variable: usize,
    pub penalties: PenaltyValues,
    pub treated: CounterfactualSeries,
    pub neighbors: Vec<CounterfactualSeries>,
    pub star: Option<CounterfactualSeries>,
    pub direct: EffectSeries,
    pub spillovers: Vec<EffectSeries>,
    pub spillover_average: Option<EffectSeries>,
    pub unrealized: Option<EffectSeries>,
    pub net: Option<EffectSeries>,
}

impl Estimates {
    /// Aggregate series in a fixed order: direct, spillover_average,
    /// unrealized, net_contrast (those that exist).
    pub fn aggregate_series(&self) -> Vec<&EffectSeries> {
        let mut out = vec![&self.direct];
        out.extend(self.spillover_average.as_ref());
        out.extend(self.unrealized.as_ref());
        out.extend(self.net.as_ref());
        out
    }

    /// Every series, individual spillovers included.
    pub fn all_series(&self) -> Vec<&EffectSeries> {
        let mut out = vec![&self.direct];
        out.extend(&self.spillovers);
        out.extend(self.spillover_average.as_ref());
        out.extend(self.unrealized.as_ref());
        out.extend(self.net.as_ref());
        out
    }

    /// Aggregate series for `estimand`; individual spillovers are in `spillovers`.
    pub fn series(&self, estimand: Estimand) -> Option<&EffectSeries> {
        match estimand {
            Estimand::Direct => Some(&self.direct),
            Estimand::SpilloverIndividual => None,
            Estimand::SpilloverAverage => self.spillover_average.as_ref(),
            Estimand::Unrealized => self.unrealized.as_ref(),
            Estimand::NetContrast => self.net.as_ref(),
        }
    }

    pub fn balance(&self, ds: &PanelDataset) -> BalanceTable {
        balance_table(ds, &self.treated, &self.neighbors, self.star.as_ref())
    }
}

/// Fits every synthetic unit for the context's outcome and derives all
/// effect series. Donors for Y(0, z) are all units outside the treated
/// cluster; Y(0, e*) uses the treated unit's cluster-mates. A singleton
/// treated cluster yields the direct effect only.
pub fn estimate_effects(ctx: &SynthContext<'_>, penalties: &PenaltyValues) -> Result<Estimates> {
    let ds = ctx.dataset();
    let var = ctx.outcome();
    let treated_unit = ds.treated_unit();
    let controls = ds.control_units();
    let neighbors_ids = ds.neighbors();

    let zero_cf = |unit: usize, lambda: f64| -> Result<CounterfactualSeries> {
        let fit = ctx.fit(unit, &controls, FeatureMode::CrossCluster, lambda)?;
        impute_control_outcome(ds, var, unit, &controls, &fit.weights, Imputed::ZeroAllocation)
    };

    let treated = zero_cf(treated_unit, penalties.lambda_treated)?;
    let direct = direct_effect(ds, &treated)?;

    let mut out = Estimates {
        variable: var,
        penalties: *penalties,
        treated,
        neighbors: Vec::new(),
        star: None,
        direct,
        spillovers: Vec::new(),
        spillover_average: None,
        unrealized: None,
        net: None,
    };
    if neighbors_ids.is_empty() {
        return Ok(out);
    }

    out.neighbors = neighbors_ids
        .iter()
        .map(|&i| zero_cf(i, penalties.lambda_neighbors))
        .collect::<Result<_>>()?;
    let (individual, average) = spillover_effects(ds, &out.neighbors)?;
    out.spillovers = individual;
    out.spillover_average = Some(average);

    let fit = ctx.fit(treated_unit, &neighbors_ids, FeatureMode::WithinCluster, penalties.lambda_star)?;
    let star = impute_control_outcome(ds, var, treated_unit, &neighbors_ids, &fit.weights, Imputed::NeighborTreated)?;
    let unrealized = unrealized_spillover(ds, &star, &out.treated)?;
    out.net = Some(net_contrast(&out.direct, &unrealized)?);
    out.unrealized = Some(unrealized);
    out.star = Some(star);

    verify_identities(&out)?;
    Ok(out)
}

/// Checks the accounting identities bit for bit.
pub fn verify_identities(est: &Estimates) -> Result<()> {
    let d = &est.direct;
    for k in 0..d.len() {
        if d.values[k] != d.observed[k] - d.imputed[k] || d.imputed[k] != est.treated.values[k] {
            return Err(Error::IdentityViolation(format!("direct effect, post-period {k}")));
        }
    }
    if let Some(avg) = &est.spillover_average {
        let n = est.spillovers.len() as f64;
        for k in 0..avg.len() {
            let mean = est.spillovers.iter().map(|s| s.values[k]).sum::<f64>() / n;
            if avg.values[k] != mean {
                return Err(Error::IdentityViolation(format!("average spillover, post-period {k}")));
            }
        }
    }
    if let (Some(net), Some(g)) = (&est.net, &est.unrealized) {
        for k in 0..net.len() {
            if net.values[k] != d.values[k] - g.values[k] {
                return Err(Error::IdentityViolation(format!("net contrast, post-period {k}")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::tests::make_panel;
    use crate::panel::{Assignment, FeatureSpec};
    use proptest::prelude::*;

    fn assignment(last_pre: i64) -> Assignment {
        Assignment {
            treated_unit: "a".into(),
            last_pre_period: last_pre,
            outcomes: vec!["y".into()],
            covariates: vec![],
        }
    }

    fn weights(w: &[f64]) -> WeightVector {
        WeightVector {
            weights: w.to_vec(),
            objective_value: 0.0,
            fit_term: 0.0,
            penalty_term: 0.0,
        }
    }

    /// Treated cluster {a, b, c}; controls d, e in k1 and f in k2.
    /// Periods 1..4, T0 = 2.
    fn panel(f: impl Fn(usize, usize) -> f64) -> PanelDataset {
        let units = [("a", "k0"), ("b", "k0"), ("c", "k0"), ("d", "k1"), ("e", "k1"), ("f", "k2")];
        let lp = make_panel(&units, &["y"], &[1, 2, 3, 4], |u, _, t| f(u, t));
        PanelDataset::new(lp, &assignment(2)).unwrap()
    }

    const SERIES: [[f64; 4]; 6] = [
        [1.0, 2.0, 3.0, 4.0],
        [2.0, 1.0, 5.0, 1.0],
        [0.5, 0.5, 2.0, 2.0],
        [1.0, 1.0, 2.0, 4.0],
        [3.0, 3.0, 4.0, 8.0],
        [2.0, 2.5, 1.0, 0.0],
    ];

    #[test]
    fn imputation_examples() {
        let ds = panel(|u, t| SERIES[u][t]);
        let cf = impute_control_outcome(&ds, 0, 0, &[3, 5], &weights(&[1.0, 0.0]), Imputed::ZeroAllocation).unwrap();
        assert_eq!(cf.values, vec![2.0, 4.0]);
        let cf = impute_control_outcome(&ds, 0, 0, &[3, 4], &weights(&[0.5, 0.5]), Imputed::ZeroAllocation).unwrap();
        assert_eq!(cf.values, vec![3.0, 6.0]);
        // a's pre-period (1, 2) vs fitted (2, 2)
        assert!((cf.pre_period_rmspe - (0.5f64).sqrt()).abs() < 1e-15);
        assert!(impute_control_outcome(&ds, 0, 0, &[3], &weights(&[0.5, 0.5]), Imputed::ZeroAllocation).is_err());
        assert!(impute_control_outcome(&ds, 0, 0, &[1], &weights(&[1.0]), Imputed::ZeroAllocation).is_err());
        assert!(impute_control_outcome(&ds, 0, 0, &[3], &weights(&[1.0]), Imputed::NeighborTreated).is_err());
    }

    #[test]
    fn exact_pre_fit_has_zero_rmspe() {
        // a = (d + f)/2 in the pre-periods
        let ds = panel(|u, t| if u == 0 && t < 2 { 0.5 * (SERIES[3][t] + SERIES[5][t]) } else { SERIES[u][t] });
        let cf = impute_control_outcome(&ds, 0, 0, &[3, 5], &weights(&[0.5, 0.5]), Imputed::ZeroAllocation).unwrap();
        assert_eq!(cf.pre_period_rmspe, 0.0);
    }

    fn cf_with(ds: &PanelDataset, unit: usize, values: Vec<f64>, imputed: Imputed) -> CounterfactualSeries {
        let donors = if imputed == Imputed::ZeroAllocation { vec![3] } else { vec![1] };
        let mut cf = impute_control_outcome(ds, 0, unit, &donors, &weights(&[1.0]), imputed).unwrap();
        cf.values = values;
        cf
    }

    #[test]
    fn direct_effect_examples() {
        let ds = panel(|u, t| SERIES[u][t]);
        let tau = direct_effect(&ds, &cf_with(&ds, 0, vec![3.0, 4.0], Imputed::ZeroAllocation)).unwrap();
        assert_eq!(tau.values, vec![0.0, 0.0]);
        assert_eq!(tau.periods, vec![3, 4]);
        let tau = direct_effect(&ds, &cf_with(&ds, 0, vec![0.0, 1.0], Imputed::ZeroAllocation)).unwrap();
        assert_eq!(tau.values, vec![3.0, 3.0]);
        assert!(direct_effect(&ds, &cf_with(&ds, 1, vec![0.0, 0.0], Imputed::ZeroAllocation)).is_err());
        assert!(direct_effect(&ds, &cf_with(&ds, 0, vec![0.0, 0.0], Imputed::NeighborTreated)).is_err());
    }

    #[test]
    fn spillover_examples() {
        let ds = panel(|u, t| SERIES[u][t]);
        let same = vec![
            cf_with(&ds, 1, vec![5.0, 1.0], Imputed::ZeroAllocation),
            cf_with(&ds, 2, vec![2.0, 2.0], Imputed::ZeroAllocation),
        ];
        let (ind, avg) = spillover_effects(&ds, &same).unwrap();
        assert!(ind.iter().all(|s| s.values == vec![0.0, 0.0]));
        assert_eq!(avg.values, vec![0.0, 0.0]);

        let shifted = vec![
            cf_with(&ds, 1, vec![4.0, 0.0], Imputed::ZeroAllocation),
            cf_with(&ds, 2, vec![-1.0, -1.0], Imputed::ZeroAllocation),
        ];
        let (ind, avg) = spillover_effects(&ds, &shifted).unwrap();
        assert_eq!(ind[0].values, vec![1.0, 1.0]);
        assert_eq!(ind[1].values, vec![3.0, 3.0]);
        assert_eq!(avg.values, vec![2.0, 2.0]);
        assert!(spillover_effects(&ds, &shifted[..1]).is_err());
    }

    #[test]
    fn unrealized_and_net_examples() {
        let ds = panel(|u, t| if u < 3 && t >= 2 { 7.0 } else { SERIES[u][t] });
        let zero = cf_with(&ds, 0, vec![7.0, 7.0], Imputed::ZeroAllocation);
        let star = impute_control_outcome(&ds, 0, 0, &[1, 2], &weights(&[0.3, 0.7]), Imputed::NeighborTreated).unwrap();
        let g = unrealized_spillover(&ds, &star, &zero).unwrap();
        assert_eq!(g.values, vec![0.0, 0.0]);
        assert_eq!(g.note, Some(CONSTANT_SPILLOVER_NOTE));

        let ds = panel(|u, t| SERIES[u][t]);
        let zero = cf_with(&ds, 0, vec![1.0, 0.5], Imputed::ZeroAllocation);
        let star = impute_control_outcome(&ds, 0, 0, &[1, 2], &weights(&[1.0, 0.0]), Imputed::NeighborTreated).unwrap();
        let g = unrealized_spillover(&ds, &star, &zero).unwrap();
        assert_eq!(g.values, vec![5.0 - 1.0, 1.0 - 0.5]);

        let mut tau = direct_effect(&ds, &zero).unwrap();
        let mut gamma = g.clone();
        gamma.values = vec![0.0, 0.0];
        assert_eq!(net_contrast(&tau, &gamma).unwrap().values, tau.values);
        gamma.values = tau.values.clone();
        assert_eq!(net_contrast(&tau, &gamma).unwrap().values, vec![0.0, 0.0]);
        tau.values = vec![2.0, 2.0];
        gamma.values = vec![3.0, 1.0];
        assert_eq!(net_contrast(&tau, &gamma).unwrap().values, vec![-1.0, 1.0]);
        gamma.periods = vec![3, 5];
        assert!(net_contrast(&tau, &gamma).is_err());
    }

    #[test]
    fn balance_layout_and_offset() {
        let ds = panel(|u, t| SERIES[u][t]);
        let ctx = SynthContext::new(&ds, FeatureSpec::outcome_only(0), false).unwrap();
        let pen = PenaltyValues {
            lambda_treated: 0.1,
            lambda_neighbors: 0.1,
            lambda_star: 0.1,
        };
        let est = estimate_effects(&ctx, &pen).unwrap();
        let table = est.balance(&ds);
        assert_eq!(table.columns, vec!["a (1)", "b", "c", "a (2)"]);
        assert_eq!(table.columns.len(), ds.cluster_members(ds.treated_cluster()).len() + 1);
        assert_eq!(table.rows.len(), 4);
        assert_eq!(table.rows[0].level, BalanceLevel::Unit);
        assert_eq!(table.rows[2].level, BalanceLevel::Neighborhood);
        assert_eq!(table.rows.iter().map(|r| r.period).collect::<Vec<_>>(), vec![1, 2, 1, 2]);

        // b is exactly d + 0.2 everywhere and d is its only donor
        let ds = panel(|u, t| if u == 1 { SERIES[3][t] + 0.2 } else { SERIES[u][t] });
        let cf = impute_control_outcome(&ds, 0, 1, &[3], &weights(&[1.0]), Imputed::ZeroAllocation).unwrap();
        let zero = impute_control_outcome(&ds, 0, 0, &[3], &weights(&[1.0]), Imputed::ZeroAllocation).unwrap();
        let table = balance_table(&ds, &zero, &[cf], None);
        for r in table.rows.iter().filter(|r| r.level == BalanceLevel::Unit) {
            assert!((r.values[1] - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_fit_balance_is_zero() {
        // every treated-cluster unit copies a control; the copy is an exact fit
        let ds = panel(|u, t| SERIES[[3, 4, 5, 3, 4, 5][u]][t] + if u < 3 { 10.0 * t as f64 } else { 0.0 });
        let ds = ds.map_variable(0, |u, t, x| if t < 2 || u >= 3 { SERIES[[3, 4, 5, 3, 4, 5][u]][t] } else { x });
        let zero = impute_control_outcome(&ds, 0, 0, &[3], &weights(&[1.0]), Imputed::ZeroAllocation).unwrap();
        let b = impute_control_outcome(&ds, 0, 1, &[4], &weights(&[1.0]), Imputed::ZeroAllocation).unwrap();
        let table = balance_table(&ds, &zero, &[b], None);
        assert!(table.rows.iter().filter(|r| r.level == BalanceLevel::Unit).all(|r| r.values.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn pipeline_identities_and_singleton() {
        let ds = panel(|u, t| SERIES[u][t] + 0.1 * (u * t) as f64);
        let ctx = SynthContext::new(&ds, FeatureSpec::outcome_only(0), false).unwrap();
        let pen = PenaltyValues {
            lambda_treated: 0.3,
            lambda_neighbors: 0.2,
            lambda_star: 0.5,
        };
        let est = estimate_effects(&ctx, &pen).unwrap();
        verify_identities(&est).unwrap();
        assert_eq!(est.spillovers.len(), 2);
        assert!(est.net.is_some());

        let mut broken = est.clone();
        broken.net.as_mut().unwrap().values[0] += 1e-12;
        assert!(matches!(verify_identities(&broken), Err(Error::IdentityViolation(_))));

        let single = ds.reassigned(5, None).unwrap();
        let ctx = SynthContext::new(&single, FeatureSpec::outcome_only(0), false).unwrap();
        let est = estimate_effects(&ctx, &pen).unwrap();
        assert!(est.spillover_average.is_none() && est.unrealized.is_none());
        assert_eq!(est.aggregate_series().len(), 1);
    }

    #[test]
    fn null_world_gives_zero_direct_effect() {
        // a's post outcomes are generated from its own synthetic weights
        let ds = panel(|u, t| SERIES[u][t]);
        let ctx = SynthContext::new(&ds, FeatureSpec::outcome_only(0), false).unwrap();
        let pen = PenaltyValues {
            lambda_treated: 0.4,
            lambda_neighbors: 0.4,
            lambda_star: 0.4,
        };
        let est = estimate_effects(&ctx, &pen).unwrap();
        let synth = est.treated.values.clone();
        let null = ds.map_variable(0, |u, t, x| if u == 0 && t >= 2 { synth[t - 2] } else { x });
        let ctx = SynthContext::new(&null, FeatureSpec::outcome_only(0), false).unwrap();
        let est = estimate_effects(&ctx, &pen).unwrap();
        assert!(est.direct.values.iter().all(|v| v.abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn constant_shift_cancels_with_fixed_weights(c in -50.0f64..50.0, w in 0.0f64..1.0) {
            let ds = panel(|u, t| SERIES[u][t]);
            let shifted = ds.map_variable(0, |_, _, x| x + c);
            let ws = weights(&[w, 1.0 - w]);
            let a = impute_control_outcome(&ds, 0, 0, &[3, 5], &ws, Imputed::ZeroAllocation).unwrap();
            let b = impute_control_outcome(&shifted, 0, 0, &[3, 5], &ws, Imputed::ZeroAllocation).unwrap();
            let ta = direct_effect(&ds, &a).unwrap();
            let tb = direct_effect(&shifted, &b).unwrap();
            for (x, y) in ta.values.iter().zip(&tb.values) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn post_only_shift_leaves_effects_unchanged(c in -50.0f64..50.0, seed in 0u64..1000) {
            let jitter = |u: usize, t: usize| ((seed as usize * 31 + u * 7 + t * 13) % 17) as f64 / 17.0;
            let ds = panel(|u, t| SERIES[u][t] + jitter(u, t));
            let shifted = ds.map_variable(0, |_, t, x| if t >= 2 { x + c } else { x });
            let pen = PenaltyValues { lambda_treated: 0.3, lambda_neighbors: 0.6, lambda_star: 0.2 };
            let ea = estimate_effects(&SynthContext::new(&ds, FeatureSpec::outcome_only(0), false).unwrap(), &pen).unwrap();
            let eb = estimate_effects(&SynthContext::new(&shifted, FeatureSpec::outcome_only(0), false).unwrap(), &pen).unwrap();
            for (sa, sb) in ea.all_series().iter().zip(eb.all_series()) {
                for (x, y) in sa.values.iter().zip(&sb.values) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }
    }
}
