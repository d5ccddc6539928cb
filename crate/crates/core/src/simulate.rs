//! Synthetic clustered panels with known effects.
//!
//! Untreated outcomes follow a low-rank factor model shared by all clusters:
//!
//! ```text
//! Y_itv(0, z) = level_v + θ_i · F_tv + σ ε_itv,   θ_i = c_k(i) + u_i
//! ```
//!
//! with cluster centres `c_k`, unit deviations `u_i`, period-and-variable
//! factors `F_tv` and independent standard normal noise. From the first
//! post-period the treated unit's outcomes are shifted by `tau` and each
//! cluster-mate's by `delta`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Assignment, LongPanel, PanelDataset, Record};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    /// Cluster sizes; the first cluster holds the treated unit.
    pub cluster_sizes: Vec<usize>,
    pub pre_periods: usize,
    pub periods: usize,
    /// Label of the first period.
    pub first_period: i64,
    pub variables: Vec<String>,
    pub n_factors: usize,
    pub level: f64,
    pub cluster_sd: f64,
    pub unit_sd: f64,
    pub noise_sd: f64,
    /// Pulls the treated cluster's latent positions toward the control mean
    /// by this fraction, in [0, 1). Zero keeps all clusters exchangeable.
    pub treated_shrink: f64,
    /// Direct effect per post-period; a single value is broadcast.
    pub tau: Vec<f64>,
    /// Spillover on every cluster-mate per post-period; a single value is broadcast.
    pub delta: Vec<f64>,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        let mut cluster_sizes = vec![6];
        cluster_sizes.extend([4; 9]);
        cluster_sizes.push(3);
        Self {
            cluster_sizes,
            pre_periods: 2,
            periods: 10,
            first_period: 1,
            variables: vec!["y1".into(), "y2".into()],
            n_factors: 2,
            level: 5.0,
            cluster_sd: 1.0,
            unit_sd: 0.5,
            noise_sd: 0.05,
            treated_shrink: 0.5,
            tau: vec![2.0],
            delta: vec![1.0],
        }
    }
}

impl SimulationSpec {
    /// Same design with no effects and exchangeable clusters.
    pub fn null(&self) -> Self {
        Self {
            treated_shrink: 0.0,
            tau: vec![0.0],
            delta: vec![0.0],
            ..self.clone()
        }
    }

    pub fn n_units(&self) -> usize {
        self.cluster_sizes.iter().sum()
    }

    fn profile(&self, name: &str, p: &[f64]) -> Result<Vec<f64>> {
        let n = self.periods - self.pre_periods;
        match p.len() {
            1 => Ok(vec![p[0]; n]),
            len if len == n => Ok(p.to_vec()),
            len => Err(Error::Simulation(format!("{name} has {len} values; expected 1 or {n}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Simulation(m));
        match self.cluster_sizes.first() {
            None => return fail("no clusters".into()),
            Some(&n) if n < 2 => return fail(format!("treated cluster size {n} < 2")),
            _ => {}
        }
        if self.cluster_sizes.len() < 2 {
            return fail("need at least one control cluster".into());
        }
        if self.cluster_sizes.contains(&0) {
            return fail("empty cluster".into());
        }
        if self.pre_periods < 2 || self.pre_periods >= self.periods {
            return fail(format!("need 1 < T0 < T, got T0 = {}, T = {}", self.pre_periods, self.periods));
        }
        if self.variables.is_empty() {
            return fail("no variables".into());
        }
        if self.n_factors == 0 {
            return fail("n_factors must be positive".into());
        }
        for (name, v) in [
            ("cluster_sd", self.cluster_sd),
            ("unit_sd", self.unit_sd),
            ("noise_sd", self.noise_sd),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        if !(0.0..1.0).contains(&self.treated_shrink) {
            return fail(format!("treated_shrink = {} outside [0, 1)", self.treated_shrink));
        }
        self.profile("tau", &self.tau)?;
        self.profile("delta", &self.delta)?;
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Untreated outcome path of one treated-cluster unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentSeries {
    pub unit: String,
    pub variable: String,
    /// Y(0, z) for every period, noise included.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub post_periods: Vec<i64>,
    pub tau: Vec<f64>,
    pub delta: Vec<f64>,
    /// Unrealized spillover: with one common spillover for every cluster-mate
    /// this equals `delta`.
    pub gamma: Vec<f64>,
    pub latent: Vec<LatentSeries>,
}

#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub dataset: PanelDataset,
    pub truth: GroundTruth,
}

pub fn generate_synthetic_panel(spec: &SimulationSpec, seed: u64) -> Result<SimulatedPanel> {
    spec.validate()?;
    let tau = spec.profile("tau", &spec.tau)?;
    let delta = spec.profile("delta", &spec.delta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = spec.n_factors;
    let normal = |rng: &mut ChaCha8Rng, sd: f64| -> f64 {
        if sd == 0.0 {
            0.0
        } else {
            Normal::new(0.0, sd).expect("validated sd").sample(rng)
        }
    };

    // factors F[t][v][k]
    let factors: Vec<Vec<Vec<f64>>> = (0..spec.periods)
        .map(|_| {
            (0..spec.variables.len())
                .map(|_| (0..r).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect()
        })
        .collect();

    let mut cluster_of = Vec::new();
    let mut theta: Vec<Vec<f64>> = Vec::new();
    for (k, &size) in spec.cluster_sizes.iter().enumerate() {
        let centre: Vec<f64> = (0..r).map(|_| normal(&mut rng, spec.cluster_sd)).collect();
        for _ in 0..size {
            theta.push(centre.iter().map(|c| c + normal(&mut rng, spec.unit_sd)).collect());
            cluster_of.push(k);
        }
    }
    let n_treated_cluster = spec.cluster_sizes[0];
    if spec.treated_shrink > 0.0 {
        let n_ctrl = (theta.len() - n_treated_cluster) as f64;
        let mean: Vec<f64> = (0..r)
            .map(|k| theta[n_treated_cluster..].iter().map(|th| th[k]).sum::<f64>() / n_ctrl)
            .collect();
        for th in &mut theta[..n_treated_cluster] {
            for (x, m) in th.iter_mut().zip(&mean) {
                *x = m + (1.0 - spec.treated_shrink) * (*x - m);
            }
        }
    }

    let width = |n: usize| n.to_string().len();
    let (uw, cw) = (width(theta.len()), width(spec.cluster_sizes.len()));
    let unit_id = |i: usize| format!("u{:0uw$}", i + 1);
    let cluster_id = |k: usize| format!("c{:0cw$}", k + 1);

    let mut records = Vec::with_capacity(theta.len() * spec.variables.len() * spec.periods);
    let mut latent = Vec::new();
    for (i, th) in theta.iter().enumerate() {
        for (v, var) in spec.variables.iter().enumerate() {
            let base: Vec<f64> = (0..spec.periods)
                .map(|t| {
                    let signal: f64 = th.iter().zip(&factors[t][v]).map(|(a, b)| a * b).sum();
                    spec.level + signal + normal(&mut rng, spec.noise_sd)
                })
                .collect();
            for (t, &y0) in base.iter().enumerate() {
                let shift = match (t.checked_sub(spec.pre_periods), i) {
                    (Some(p), 0) => tau[p],
                    (Some(p), i) if i < n_treated_cluster => delta[p],
                    _ => 0.0,
                };
                records.push(Record {
                    unit_id: unit_id(i),
                    cluster_id: cluster_id(cluster_of[i]),
                    time: spec.first_period + t as i64,
                    variable: var.clone(),
                    value: y0 + shift,
                });
            }
            if i < n_treated_cluster {
                latent.push(LatentSeries {
                    unit: unit_id(i),
                    variable: var.clone(),
                    values: base,
                });
            }
        }
    }

    let panel = LongPanel::from_records(records, 1)?;
    let assignment = Assignment {
        treated_unit: unit_id(0),
        last_pre_period: spec.first_period + spec.pre_periods as i64 - 1,
        outcomes: spec.variables.clone(),
        covariates: Vec::new(),
    };
    let dataset = PanelDataset::new(panel, &assignment)?;
    let post_periods = (spec.pre_periods..spec.periods).map(|t| spec.first_period + t as i64).collect();
    Ok(SimulatedPanel {
        dataset,
        truth: GroundTruth {
            post_periods,
            gamma: delta.clone(),
            tau,
            delta,
            latent,
        },
    })
}
