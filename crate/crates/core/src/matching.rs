//! Mahalanobis nearest-neighbor donor matching.
//!
//! For every unit of the treated cluster and every pre-period, control units
//! are ranked by Mahalanobis distance between per-period feature rows and the
//! `m` closest are kept. The per-anchor match set is the union over
//! pre-periods. A control can be matched to several anchors.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::panel::{period_row, FeatureSpec, PanelDataset};

/// Default number of matches per anchor and pre-period.
pub const DEFAULT_MATCHES: usize = 5;
/// Singular values at or below this (relative to the largest) are treated as zero.
pub const PINV_TOL: f64 = 1e-10;

pub fn mahalanobis_distance(x: &[f64], y: &[f64], sigma_inv: &DMatrix<f64>) -> Result<f64> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if sigma_inv.nrows() != n || sigma_inv.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: sigma_inv.nrows(),
        });
    }
    let scale = sigma_inv.amax().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (sigma_inv[(i, j)] - sigma_inv[(j, i)]).abs() > 1e-9 * scale {
                return Err(Error::NotSymmetric);
            }
        }
    }
    Ok(quadratic_form(x, y, sigma_inv).max(0.0).sqrt())
}

fn quadratic_form(x: &[f64], y: &[f64], m: &DMatrix<f64>) -> f64 {
    let n = x.len();
    let mut q = 0.0;
    for i in 0..n {
        let di = x[i] - y[i];
        if di == 0.0 {
            continue;
        }
        for j in 0..n {
            q += di * m[(i, j)] * (x[j] - y[j]);
        }
    }
    q
}

/// Sample covariance (N−1 denominator) and its Moore–Penrose inverse.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub covariance: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
}

pub fn sample_covariance(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.len() < 2 {
        return Err(Error::NotEnoughControls {
            needed: 2,
            available: rows.len(),
        });
    }
    let d = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: r.len(),
        });
    }
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in 0..d {
                cov[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    Ok(cov / (n - 1.0))
}

/// Pseudo-inverse of a symmetric PSD matrix via SVD, symmetrized.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if m.amax() == 0.0 {
        return DMatrix::zeros(n, n);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = PINV_TOL * smax;
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    let mut inv = DMatrix::zeros(n, n);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            let vk = vt.row(k).transpose();
            let uk = u.column(k);
            inv += (vk * uk.transpose()) / s;
        }
    }
    (&inv + inv.transpose()) * 0.5
}

pub fn covariance_from_rows(rows: &[Vec<f64>]) -> Result<CovarianceEstimate> {
    let covariance = sample_covariance(rows)?;
    let inverse = pseudo_inverse(&covariance);
    Ok(CovarianceEstimate { covariance, inverse })
}

/// Covariance across all units of the per-period feature rows at pre-period `t`.
pub fn covariance_at_time(ds: &PanelDataset, spec: &FeatureSpec, t: usize) -> Result<CovarianceEstimate> {
    if t >= ds.pre_periods() {
        return Err(Error::Config(format!("period index {t} is not a pre-treatment period")));
    }
    let rows: Vec<Vec<f64>> = (0..ds.n_units()).map(|u| period_row(ds, spec, u, t)).collect();
    covariance_from_rows(&rows)
}

/// Matches of one treated-cluster unit.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    pub anchor: usize,
    /// (control unit, control cluster), ascending by unit.
    pub matched: BTreeSet<(usize, usize)>,
    /// For each pre-period, every control ranked by (distance, unit).
    pub per_period: Vec<Vec<(usize, f64)>>,
}

impl MatchSet {
    pub fn units(&self) -> BTreeSet<usize> {
        self.matched.iter().map(|&(u, _)| u).collect()
    }
}

/// Match sets of the whole treated cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct DonorMatches {
    pub m: usize,
    pub by_anchor: BTreeMap<usize, MatchSet>,
    /// Matches of the treated unit.
    pub treated: BTreeSet<usize>,
    /// Union of matches of the untreated units in the treated cluster.
    pub neighbors: BTreeSet<usize>,
}

pub fn build_match_sets(ds: &PanelDataset, spec: &FeatureSpec, m: usize) -> Result<DonorMatches> {
    if m == 0 {
        return Err(Error::Config("match count must be at least 1".into()));
    }
    let controls = ds.control_units();
    if controls.len() < m {
        return Err(Error::NotEnoughControls {
            needed: m,
            available: controls.len(),
        });
    }
    let t0 = ds.pre_periods();
    let mut rows = Vec::with_capacity(t0);
    let mut inverses = Vec::with_capacity(t0);
    for t in 0..t0 {
        rows.push((0..ds.n_units()).map(|u| period_row(ds, spec, u, t)).collect::<Vec<_>>());
        inverses.push(covariance_from_rows(&rows[t])?.inverse);
    }

    let anchors = ds.cluster_members(ds.treated_cluster()).to_vec();
    let mut by_anchor = BTreeMap::new();
    for &anchor in &anchors {
        let mut matched = BTreeSet::new();
        let mut per_period = Vec::with_capacity(t0);
        for t in 0..t0 {
            let mut ranked: Vec<(usize, f64)> = controls
                .iter()
                .map(|&c| {
                    let d = quadratic_form(&rows[t][anchor], &rows[t][c], &inverses[t]).max(0.0).sqrt();
                    (c, d)
                })
                .collect();
            ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            for &(c, _) in ranked.iter().take(m) {
                matched.insert((c, ds.cluster_of(c)));
            }
            per_period.push(ranked);
        }
        by_anchor.insert(
            anchor,
            MatchSet {
                anchor,
                matched,
                per_period,
            },
        );
    }

    let treated = by_anchor[&ds.treated_unit()].units();
    let neighbors = ds
        .neighbors()
        .iter()
        .flat_map(|u| by_anchor[u].units())
        .collect();
    Ok(DonorMatches {
        m,
        by_anchor,
        treated,
        neighbors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::tests::make_panel;
    use crate::panel::Assignment;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        let id = DMatrix::identity(2, 2);
        assert_eq!(mahalanobis_distance(&[1.5, -2.0], &[1.5, -2.0], &id).unwrap(), 0.0);
        assert_eq!(mahalanobis_distance(&[0.0, 0.0], &[3.0, 4.0], &id).unwrap(), 5.0);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0]));
        let v = mahalanobis_distance(&[0.0, 0.0], &[1.0, 1.0], &d).unwrap();
        // (1,1) diag(4,1) (1,1)' = 4 + 1
        assert!((v - 5f64.sqrt()).abs() < 1e-12);
        assert!((v - 2.2360679).abs() < 1e-7);
    }

    #[test]
    fn distance_errors() {
        let id = DMatrix::identity(2, 2);
        assert!(mahalanobis_distance(&[0.0], &[0.0, 1.0], &id).is_err());
        assert!(mahalanobis_distance(&[0.0; 3], &[0.0; 3], &id).is_err());
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(mahalanobis_distance(&[0.0, 0.0], &[1.0, 1.0], &skew), Err(Error::NotSymmetric)));
    }

    #[test]
    fn covariance_examples() {
        let c = covariance_from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        assert!((c.covariance[(0, 0)] - 2.0).abs() < 1e-12);

        let c = covariance_from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!((c.covariance[(0, 0)] - 1.0 / 3.0).abs() < 1e-12);
        assert!((c.covariance[(1, 1)] - 1.0 / 3.0).abs() < 1e-12);
        assert!(c.covariance[(0, 1)].abs() < 1e-12);
        assert!((c.inverse[(0, 0)] - 3.0).abs() < 1e-9);

        let c = covariance_from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(c.covariance.amax(), 0.0);
        assert_eq!(c.inverse.amax(), 0.0);
        assert_eq!(mahalanobis_distance(&[1.0, 2.0], &[5.0, 0.0], &c.inverse).unwrap(), 0.0);

        assert!(covariance_from_rows(&[vec![1.0]]).is_err());
    }

    #[test]
    fn singular_covariance_uses_pseudo_inverse() {
        // second dimension duplicates the first
        let rows = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![3.0, 3.0]];
        let c = covariance_from_rows(&rows).unwrap();
        let p = &c.covariance * &c.inverse * &c.covariance;
        assert!((p - &c.covariance).amax() < 1e-9);
    }

    fn assignment(treated: &str) -> Assignment {
        Assignment {
            treated_unit: treated.into(),
            last_pre_period: 2,
            outcomes: vec!["y".into()],
            covariates: vec![],
        }
    }

    #[test]
    fn forced_match_when_controls_equal_m() {
        let units = [("a", "k1"), ("b", "k1"), ("c", "k2"), ("d", "k2"), ("e", "k2")];
        let lp = make_panel(&units, &["y"], &[1, 2, 3], |u, _, t| (u * u) as f64 + t as f64 * 0.3 * u as f64);
        let ds = PanelDataset::new(lp, &assignment("a")).unwrap();
        let spec = FeatureSpec::outcome_only(0);
        let m = build_match_sets(&ds, &spec, 3).unwrap();
        assert_eq!(m.treated, [2, 3, 4].into_iter().collect());
        assert_eq!(m.neighbors, [2, 3, 4].into_iter().collect());
        assert!(matches!(build_match_sets(&ds, &spec, 4), Err(Error::NotEnoughControls { .. })));
        assert!(build_match_sets(&ds, &spec, 0).is_err());
    }

    #[test]
    fn union_over_periods() {
        // clusters of identical twins, so every row lies on the diagonal
        // (y, neighborhood y); a is near {c, d} at t=0 and near {e, f} at t=1
        let units = [("a", "k1"), ("b", "k1"), ("c", "k2"), ("d", "k2"), ("e", "k3"), ("f", "k3")];
        let table = [
            [0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0],
            [0.1, 30.0, 0.0],
            [0.1, 30.0, 0.0],
            [20.0, 0.1, 0.0],
            [20.0, 0.1, 0.0],
        ];
        let lp = make_panel(&units, &["y"], &[1, 2, 3], |u, _, t| table[u][t]);
        let ds = PanelDataset::new(lp, &assignment("a")).unwrap();
        let m = build_match_sets(&ds, &FeatureSpec::outcome_only(0), 2).unwrap();
        let ms = &m.by_anchor[&0];
        let first: BTreeSet<usize> = ms.per_period[0].iter().take(2).map(|p| p.0).collect();
        let second: BTreeSet<usize> = ms.per_period[1].iter().take(2).map(|p| p.0).collect();
        assert_eq!(first, [2, 3].into_iter().collect());
        assert_eq!(second, [4, 5].into_iter().collect());
        assert_eq!(ms.units().len(), 4);
        for &(u, c) in &ms.matched {
            assert_ne!(c, ds.treated_cluster());
            assert_eq!(ds.cluster_of(u), c);
        }
    }

    #[test]
    fn ties_break_by_unit_id() {
        // c and d are mirror images around a: equal distances
        let units = [("a", "k1"), ("b", "k1"), ("c", "k2"), ("d", "k3"), ("e", "k4")];
        let table = [0.0, 0.0, 1.0, -1.0, 5.0];
        let lp = make_panel(&units, &["y"], &[1, 2, 3], |u, _, t| table[u] * (1.0 + t as f64));
        let ds = PanelDataset::new(lp, &assignment("a")).unwrap();
        let m = build_match_sets(&ds, &FeatureSpec::outcome_only(0), 1).unwrap();
        let ms = &m.by_anchor[&0];
        assert_eq!(ms.per_period[0][0].1, ms.per_period[0][1].1);
        assert_eq!(ms.units(), [2].into_iter().collect());
    }

    fn random_panel(vals: &[f64]) -> PanelDataset {
        let units: Vec<(String, String)> = (0..12).map(|u| (format!("u{u:02}"), format!("k{}", u / 3))).collect();
        let refs: Vec<(&str, &str)> = units.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let lp = make_panel(&refs, &["x", "y"], &[1, 2, 3], |u, v, t| vals[(u * 2 + v) * 3 + t]);
        PanelDataset::new(
            lp,
            &Assignment {
                treated_unit: "u00".into(),
                last_pre_period: 2,
                outcomes: vec!["y".into()],
                covariates: vec!["x".into()],
            },
        )
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn matches_avoid_treated_cluster_and_are_deterministic(vals in prop::collection::vec(-5.0f64..5.0, 72)) {
            let ds = random_panel(&vals);
            let spec = FeatureSpec::for_outcome(&ds, 1);
            let a = build_match_sets(&ds, &spec, 3).unwrap();
            let b = build_match_sets(&ds, &spec, 3).unwrap();
            prop_assert_eq!(&a, &b);
            for ms in a.by_anchor.values() {
                for &(u, c) in &ms.matched {
                    prop_assert_ne!(c, ds.treated_cluster());
                    prop_assert!(!ds.cluster_members(ds.treated_cluster()).contains(&u));
                }
            }
        }

        #[test]
        fn affine_rescaling_leaves_matches_unchanged(
            vals in prop::collection::vec(-5.0f64..5.0, 72),
            scale in 0.1f64..10.0,
            shift in -20.0f64..20.0,
        ) {
            let ds = random_panel(&vals);
            let spec = FeatureSpec::for_outcome(&ds, 1);
            let scaled = ds.map_variable(0, |_, _, x| scale * x + shift);
            let a = build_match_sets(&ds, &spec, 3).unwrap();
            let b = build_match_sets(&scaled, &spec, 3).unwrap();
            for (anchor, ms) in &a.by_anchor {
                let other = &b.by_anchor[anchor];
                for t in 0..ds.pre_periods() {
                    for (x, y) in ms.per_period[t].iter().zip(&other.per_period[t]) {
                        prop_assert!((x.1 - y.1).abs() < 1e-6 * (1.0 + x.1));
                    }
                }
                // rankings can only differ inside numerically tied groups
                let gap_ok = ms.per_period.iter().all(|r| r.windows(2).all(|w| w[1].1 - w[0].1 > 1e-6));
                if gap_ok {
                    prop_assert_eq!(&ms.matched, &other.matched);
                }
            }
        }
    }
}
