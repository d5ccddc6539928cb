//! In-space placebo inference: every control unit is cast in turn as the
//! treated unit (its cluster as the treated cluster) and the estimation is
//! rerun with the penalties selected for the actual analysis.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::PenaltyValues;
use crate::effects::{estimate_effects, impute_control_outcome, EffectSeries, Estimand, Estimates, Imputed};
use crate::error::{Error, Result};
use crate::panel::{FeatureMode, FeatureSpec, PanelDataset};
use crate::synthesis::SynthContext;

pub const DEFAULT_RMSPE_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaceboOptions {
    /// Runs whose direct-effect pre-period RMSPE exceeds this are excluded.
    pub rmspe_threshold: f64,
    /// Keep the true treated cluster in the placebo datasets. Off by default:
    /// its post-period outcomes carry the real treatment and its spillovers.
    pub include_treated_cluster: bool,
    pub standardize: bool,
}

impl Default for PlaceboOptions {
    fn default() -> Self {
        Self {
            rmspe_threshold: DEFAULT_RMSPE_THRESHOLD,
            include_treated_cluster: false,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Exclusion {
    /// Pre-period RMSPE above the threshold.
    Rmspe,
    /// Estimation failed for this pseudo-treated unit.
    Failed(String),
}

impl Exclusion {
    pub fn reason(&self) -> String {
        match self {
            Exclusion::Rmspe => "rmspe".into(),
            Exclusion::Failed(msg) => format!("failed: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceboRun {
    /// Index of the pseudo-treated unit in the original dataset.
    pub pseudo_treated: usize,
    pub pseudo_id: String,
    pub pseudo_cluster: String,
    pub penalties: PenaltyValues,
    pub estimates: Option<Estimates>,
    /// Pre-period RMSPE of the pseudo-treated unit's Y(0, z) fit under the
    /// direct-effect penalty; used for exclusion.
    pub rmspe_direct: Option<f64>,
    /// Same fit under the neighbors' penalty.
    pub rmspe_spillover: Option<f64>,
    /// Pre-period RMSPE of its Y(0, e*) fit; absent for singleton clusters.
    pub rmspe_unrealized: Option<f64>,
    /// Why spillover-type estimands are missing, if they are.
    pub note: Option<String>,
    pub excluded: Option<Exclusion>,
}

impl PlaceboRun {
    pub fn is_included(&self) -> bool {
        self.excluded.is_none()
    }

    pub fn series(&self, estimand: Estimand) -> Option<&EffectSeries> {
        self.estimates.as_ref()?.series(estimand)
    }
}

fn one_run(ds: &PanelDataset, spec: &FeatureSpec, unit: usize, penalties: &PenaltyValues, options: &PlaceboOptions) -> Result<PlaceboRun> {
    let drop = (!options.include_treated_cluster).then_some(ds.treated_cluster());
    let pds = ds.reassigned(unit, drop)?;
    let ctx = SynthContext::new(&pds, spec.clone(), options.standardize)?;
    let est = estimate_effects(&ctx, penalties)?;

    let target = pds.treated_unit();
    let controls = pds.control_units();
    let fit = ctx.fit(target, &controls, FeatureMode::CrossCluster, penalties.lambda_neighbors)?;
    let spill = impute_control_outcome(&pds, spec.outcome, target, &controls, &fit.weights, Imputed::ZeroAllocation)?;

    Ok(PlaceboRun {
        pseudo_treated: unit,
        pseudo_id: ds.unit_id(unit).to_string(),
        pseudo_cluster: ds.cluster_id(ds.cluster_of(unit)).to_string(),
        penalties: *penalties,
        rmspe_direct: Some(est.treated.pre_period_rmspe),
        rmspe_spillover: Some(spill.pre_period_rmspe),
        rmspe_unrealized: est.star.as_ref().map(|s| s.pre_period_rmspe),
        note: est.star.is_none().then(|| "singleton cluster: direct effect only".to_string()),
        estimates: Some(est),
        excluded: None,
    })
}

/// One run per control unit, in unit order. Failures are recorded as
/// excluded runs rather than aborting.
pub fn run_placebos(ds: &PanelDataset, spec: &FeatureSpec, penalties: &PenaltyValues, options: &PlaceboOptions) -> Result<Vec<PlaceboRun>> {
    let controls = ds.control_units();
    if controls.is_empty() {
        return Err(Error::NoPlaceboDistribution);
    }
    Ok(controls
        .par_iter()
        .map(|&unit| {
            one_run(ds, spec, unit, penalties, options).unwrap_or_else(|e| {
                warn!("placebo run for '{}' failed: {e}", ds.unit_id(unit));
                PlaceboRun {
                    pseudo_treated: unit,
                    pseudo_id: ds.unit_id(unit).to_string(),
                    pseudo_cluster: ds.cluster_id(ds.cluster_of(unit)).to_string(),
                    penalties: *penalties,
                    estimates: None,
                    rmspe_direct: None,
                    rmspe_spillover: None,
                    rmspe_unrealized: None,
                    note: None,
                    excluded: Some(Exclusion::Failed(e.to_string())),
                }
            })
        })
        .collect())
}

/// Marks runs whose direct-effect RMSPE exceeds `threshold` as excluded.
/// A value equal to the threshold passes.
pub fn filter_by_rmspe(mut runs: Vec<PlaceboRun>, threshold: f64) -> Vec<PlaceboRun> {
    for run in &mut runs {
        if run.excluded.is_some() {
            continue;
        }
        match run.rmspe_direct {
            Some(r) if r <= threshold => {}
            _ => run.excluded = Some(Exclusion::Rmspe),
        }
    }
    runs
}

/// Rank-based comparison of one statistic with its placebo distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct RankTest {
    pub actual: f64,
    pub placebos: Vec<f64>,
    /// 1 + number of placebos at least as large in magnitude as the actual.
    pub rank: usize,
    pub count: usize,
    pub p_value: f64,
}

impl RankTest {
    pub fn new(actual: f64, placebos: Vec<f64>) -> Self {
        let a = actual.abs();
        let rank = 1 + placebos.iter().filter(|v| v.abs() >= a).count();
        let count = placebos.len() + 1;
        Self {
            actual,
            placebos,
            rank,
            count,
            p_value: rank as f64 / count as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceboSummary {
    pub estimand: Estimand,
    pub variable: usize,
    pub periods: Vec<i64>,
    pub per_period: Vec<RankTest>,
    /// Test on the mean absolute effect over the post-periods.
    pub aggregate: RankTest,
    /// Pseudo-treated units that entered the distribution.
    pub placebo_units: Vec<usize>,
}

pub fn summarize(actual: &EffectSeries, runs: &[PlaceboRun]) -> Result<PlaceboSummary> {
    let used: Vec<(usize, &EffectSeries)> = runs
        .iter()
        .filter(|r| r.is_included())
        .filter_map(|r| r.series(actual.estimand).map(|s| (r.pseudo_treated, s)))
        .collect();
    if used.is_empty() {
        return Err(Error::NoPlaceboDistribution);
    }
    if let Some((u, _)) = used.iter().find(|(_, s)| s.len() != actual.len()) {
        return Err(Error::SeriesMismatch(format!("placebo run #{u} has a different post-period length")));
    }
    let per_period = (0..actual.len())
        .map(|k| RankTest::new(actual.values[k], used.iter().map(|(_, s)| s.values[k]).collect()))
        .collect();
    let aggregate = RankTest::new(actual.mean_abs(), used.iter().map(|(_, s)| s.mean_abs()).collect());
    Ok(PlaceboSummary {
        estimand: actual.estimand,
        variable: actual.variable,
        periods: actual.periods.clone(),
        per_period,
        aggregate,
        placebo_units: used.iter().map(|(u, _)| *u).collect(),
    })
}

/// Summaries for every aggregate estimand present in `actual`.
pub fn summarize_all(actual: &Estimates, runs: &[PlaceboRun]) -> Vec<Result<PlaceboSummary>> {
    actual.aggregate_series().into_iter().map(|s| summarize(s, runs)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::tests::make_panel;
    use crate::panel::Assignment;

    const PEN: PenaltyValues = PenaltyValues {
        lambda_treated: 0.2,
        lambda_neighbors: 0.3,
        lambda_star: 0.4,
    };

    /// Treated cluster {a, b}; control clusters {c, d, e} and {f}; plus {g, h}.
    fn dataset(extra: bool) -> PanelDataset {
        let mut units = vec![("a", "k0"), ("b", "k0"), ("c", "k1"), ("d", "k1"), ("e", "k1"), ("f", "k2")];
        if extra {
            units.extend([("g", "k3"), ("h", "k3")]);
        }
        let lp = make_panel(&units, &["y"], &[1, 2, 3, 4], |u, _, t| {
            1.0 + ((u * 5 + t * 3) % 7) as f64 * 0.3 + 0.1 * u as f64
        });
        PanelDataset::new(
            lp,
            &Assignment {
                treated_unit: "a".into(),
                last_pre_period: 2,
                outcomes: vec!["y".into()],
                covariates: vec![],
            },
        )
        .unwrap()
    }

    fn fake_run(unit: usize, rmspe: f64) -> PlaceboRun {
        PlaceboRun {
            pseudo_treated: unit,
            pseudo_id: format!("u{unit}"),
            pseudo_cluster: "k".into(),
            penalties: PEN,
            estimates: None,
            rmspe_direct: Some(rmspe),
            rmspe_spillover: None,
            rmspe_unrealized: None,
            note: None,
            excluded: None,
        }
    }

    #[test]
    fn structural_count_and_singleton() {
        let ds = dataset(false);
        let runs = run_placebos(&ds, &FeatureSpec::outcome_only(0), &PEN, &PlaceboOptions::default()).unwrap();
        assert_eq!(runs.len(), 4);
        assert_eq!(runs.iter().map(|r| r.pseudo_id.as_str()).collect::<Vec<_>>(), vec!["c", "d", "e", "f"]);
        for r in &runs {
            assert!(r.is_included(), "{:?}", r.excluded);
            assert_ne!(ds.cluster_of(r.pseudo_treated), ds.treated_cluster());
            let est = r.estimates.as_ref().unwrap();
            assert_eq!(est.penalties, PEN);
            if r.pseudo_id == "f" {
                assert!(est.spillover_average.is_none() && est.unrealized.is_none());
                assert!(r.note.is_some());
                assert!(r.rmspe_unrealized.is_none());
            } else {
                assert!(est.spillover_average.is_some() && est.unrealized.is_some());
            }
        }
    }

    #[test]
    fn treated_cluster_kept_out_of_donors() {
        let ds = dataset(true);
        let runs = run_placebos(&ds, &FeatureSpec::outcome_only(0), &PEN, &PlaceboOptions::default()).unwrap();
        for r in &runs {
            let est = r.estimates.as_ref().unwrap();
            // donors index the reassigned dataset, which has no k0 units
            assert_eq!(est.treated.donors.len(), 6 - ds.cluster_members(ds.cluster_of(r.pseudo_treated)).len());
        }
        let opts = PlaceboOptions {
            include_treated_cluster: true,
            ..PlaceboOptions::default()
        };
        let runs = run_placebos(&ds, &FeatureSpec::outcome_only(0), &PEN, &opts).unwrap();
        for r in &runs {
            let est = r.estimates.as_ref().unwrap();
            assert_eq!(est.treated.donors.len(), 8 - ds.cluster_members(ds.cluster_of(r.pseudo_treated)).len());
        }
    }

    #[test]
    fn perfect_null_unit_has_zero_placebo_effect() {
        // f, g and h share one series, so g matches f exactly in every feature
        let ds = dataset(true);
        let g = ds.unit_index("g").unwrap();
        let f = ds.unit_index("f").unwrap();
        let h = ds.unit_index("h").unwrap();
        let ds = ds.map_variable(0, |u, t, x| if u == f || u == h { ds.value(g, 0, t) } else { x });
        let runs = run_placebos(&ds, &FeatureSpec::outcome_only(0), &PEN, &PlaceboOptions::default()).unwrap();
        let run = runs.iter().find(|r| r.pseudo_treated == f).unwrap();
        assert!(run.series(Estimand::Direct).unwrap().values.iter().all(|v| v.abs() < 1e-12));
        assert!(run.rmspe_direct.unwrap() < 1e-12);
    }

    #[test]
    fn rmspe_filter() {
        let runs = vec![fake_run(0, 5.905), fake_run(1, 0.202), fake_run(2, 1.0), fake_run(3, 1.0 + 1e-12)];
        let filtered = filter_by_rmspe(runs.clone(), 1.0);
        assert_eq!(filtered[0].excluded, Some(Exclusion::Rmspe));
        assert!(filtered[1].is_included());
        assert!(filtered[2].is_included());
        assert_eq!(filtered[3].excluded, Some(Exclusion::Rmspe));
        assert!(filter_by_rmspe(runs, f64::INFINITY).iter().all(PlaceboRun::is_included));
    }

    #[test]
    fn rank_arithmetic() {
        let t = RankTest::new(10.0, (1..=9).map(|k| k as f64 * if k % 2 == 0 { -1.0 } else { 1.0 }).collect());
        assert_eq!(t.p_value, 0.1);
        let t = RankTest::new(0.0, vec![1.0, -2.0, 0.5]);
        assert_eq!(t.p_value, 1.0);
        let t = RankTest::new(-3.0, vec![3.0, 1.0, 2.0, 0.5]);
        assert_eq!(t.rank, 2);
        assert_eq!(t.p_value, 2.0 / 5.0);
    }

    #[test]
    fn excluded_runs_do_not_count() {
        let ds = dataset(true);
        let runs = run_placebos(&ds, &FeatureSpec::outcome_only(0), &PEN, &PlaceboOptions::default()).unwrap();
        let ctx = SynthContext::new(&ds, FeatureSpec::outcome_only(0), false).unwrap();
        let actual = estimate_effects(&ctx, &PEN).unwrap();
        let all = summarize(&actual.direct, &runs).unwrap();
        assert_eq!(all.aggregate.count, runs.len() + 1);

        let mut runs = runs;
        runs[0].excluded = Some(Exclusion::Rmspe);
        runs[1].excluded = Some(Exclusion::Failed("x".into()));
        let part = summarize(&actual.direct, &runs).unwrap();
        assert_eq!(part.aggregate.count, runs.len() - 1);
        assert!(!part.placebo_units.contains(&runs[0].pseudo_treated));

        for r in &mut runs {
            r.excluded = Some(Exclusion::Rmspe);
        }
        let err = summarize(&actual.direct, &runs).unwrap_err();
        assert!(err.to_string().starts_with("no placebo distribution"));
    }

    #[test]
    fn p_values_in_unit_interval() {
        let ds = dataset(true);
        let runs = run_placebos(&ds, &FeatureSpec::outcome_only(0), &PEN, &PlaceboOptions::default()).unwrap();
        let ctx = SynthContext::new(&ds, FeatureSpec::outcome_only(0), false).unwrap();
        let actual = estimate_effects(&ctx, &PEN).unwrap();
        for s in summarize_all(&actual, &runs) {
            let s = s.unwrap();
            for t in s.per_period.iter().chain([&s.aggregate]) {
                assert!(t.p_value > 0.0 && t.p_value <= 1.0);
            }
        }
    }
}
