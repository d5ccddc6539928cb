//! Penalized synthetic-control weights.
//!
//! Minimizes
//!
//! ```text
//! ‖x − Σ_j ω_j a_j‖² + λ Σ_j ω_j ‖x − a_j‖²
//! ```
//!
//! over the probability simplex, where `x` is the target feature vector and
//! `a_j` are the donors. λ = 0 gives the classical synthetic control, large λ
//! approaches one-match nearest neighbor.
//!
//! The solver is a primal active-set method. A ridge of size
//! [`RIDGE_REL`] × scale is added to the quadratic form so every
//! equality-constrained subproblem is strictly convex; each subproblem is
//! solved in the null space of the sum-to-one constraint through an SVD of the
//! centered donor matrix, which keeps exactly-collinear donors well defined
//! and resolves λ = 0 ties toward minimum-norm weights.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::FeatureVector;

/// Ridge added to the objective, relative to the largest squared donor distance.
pub const RIDGE_REL: f64 = 1e-10;
/// Iteration cap of the active-set loop.
pub const MAX_ITER: usize = 10_000;
/// Multiplier tolerance for the optimality check, relative to scale.
const KKT_REL: f64 = 1e-13;

/// A single weight problem: synthesize `target` from `donors` under `lambda`.
#[derive(Debug, Clone)]
pub struct SolveProblem {
    target: Vec<f64>,
    donors: Vec<Vec<f64>>,
    lambda: f64,
}

impl SolveProblem {
    pub fn new(target: Vec<f64>, donors: Vec<Vec<f64>>, lambda: f64) -> Result<Self> {
        if donors.is_empty() {
            return Err(Error::EmptyDonorPool("target".into()));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidPenalty(lambda));
        }
        for d in &donors {
            if d.len() != target.len() {
                return Err(Error::DimensionMismatch {
                    expected: target.len(),
                    found: d.len(),
                });
            }
        }
        if target.iter().chain(donors.iter().flatten()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { target, donors, lambda })
    }

    /// From feature vectors; all must share one layout.
    pub fn from_features(target: &FeatureVector, donors: &[&FeatureVector], lambda: f64) -> Result<Self> {
        for d in donors {
            if d.layout != target.layout {
                return Err(Error::DimensionMismatch {
                    expected: target.len(),
                    found: d.len(),
                });
            }
        }
        Self::new(
            target.values.clone(),
            donors.iter().map(|d| d.values.clone()).collect(),
            lambda,
        )
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.target.clone(), self.donors.clone(), lambda)
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn donors(&self) -> &[Vec<f64>] {
        &self.donors
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_donors(&self) -> usize {
        self.donors.len()
    }

    /// Squared distance from the target to each donor.
    pub fn donor_distances(&self) -> Vec<f64> {
        self.donors.iter().map(|d| sq_dist(&self.target, d)).collect()
    }

    /// Objective split into (fit, penalty) at arbitrary weights.
    pub fn evaluate(&self, weights: &[f64]) -> (f64, f64) {
        let mut synth = vec![0.0; self.target.len()];
        for (w, d) in weights.iter().zip(&self.donors) {
            for (s, x) in synth.iter_mut().zip(d) {
                *s += w * x;
            }
        }
        let fit = sq_dist(&self.target, &synth);
        let penalty = weights
            .iter()
            .zip(&self.donors)
            .map(|(w, d)| w * sq_dist(&self.target, d))
            .sum();
        (fit, penalty)
    }

    pub fn objective(&self, weights: &[f64]) -> f64 {
        let (fit, pen) = self.evaluate(weights);
        fit + self.lambda * pen
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Simplex weights aligned with the donor order of the problem that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub objective_value: f64,
    pub fit_term: f64,
    pub penalty_term: f64,
}

impl WeightVector {
    fn from_weights(problem: &SolveProblem, mut weights: Vec<f64>) -> Self {
        for w in &mut weights {
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let (fit, pen) = problem.evaluate(&weights);
        Self {
            weights,
            objective_value: fit + problem.lambda * pen,
            fit_term: fit,
            penalty_term: pen,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Index of the largest weight, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (j, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = j;
            }
        }
        best
    }

    /// Weighted sum of per-donor values.
    pub fn combine(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, x)| w * x).sum()
    }
}

/// Quadratic form of one problem, reusable across penalties.
///
/// Works with centered donors `b_j = a_j − x`, so the fit term is `‖Bω‖²`
/// on the simplex and the penalty is `Σ ω_j ‖b_j‖²`.
#[derive(Debug, Clone)]
pub struct PreparedProblem {
    centered: DMatrix<f64>,
    distances: DVector<f64>,
    scale: f64,
}

impl PreparedProblem {
    pub fn new(problem: &SolveProblem) -> Self {
        let m = problem.target.len();
        let n = problem.donors.len();
        let centered = DMatrix::from_fn(m, n, |i, j| problem.donors[j][i] - problem.target[i]);
        let distances = DVector::from_iterator(n, problem.donors_distances_iter());
        let scale = distances.iter().cloned().fold(0.0, f64::max).max(1e-300);
        Self {
            centered,
            distances,
            scale,
        }
    }

    fn n(&self) -> usize {
        self.centered.ncols()
    }

    /// Half-gradient of the ridged objective at `w`.
    fn half_gradient(&self, w: &DVector<f64>, lambda: f64, ridge: f64) -> DVector<f64> {
        let bw = &self.centered * w;
        let mut g = self.centered.tr_mul(&bw);
        g.axpy(0.5 * lambda, &self.distances, 1.0);
        g.axpy(ridge, w, 1.0);
        g
    }

    /// Minimizer of the ridged objective restricted to `free` (all other
    /// weights zero) under the sum-to-one constraint only.
    fn solve_subproblem(&self, free: &[usize], lambda: f64, ridge: f64) -> DVector<f64> {
        let k = free.len();
        let mut out = DVector::zeros(self.n());
        if k == 1 {
            out[free[0]] = 1.0;
            return out;
        }
        let m = self.centered.nrows();
        let bf = DMatrix::from_fn(m, k, |i, j| self.centered[(i, free[j])]);
        let df = DVector::from_fn(k, |j, _| self.distances[free[j]]);
        let z = helmert_basis(k);
        let w0 = DVector::from_element(k, 1.0 / k as f64);

        // reduced problem in y, with ω_F = w0 + Z y:
        // min ‖r0 + M y‖² + (λ/2·d + ε w0)'Z y·2 + ε‖y‖²
        let r0 = &bf * &w0;
        let mmat = &bf * &z;
        let lin = z.tr_mul(&(df * (0.5 * lambda) + &w0 * ridge));

        let svd = mmat.svd(true, true);
        let u = svd.u.expect("u requested");
        let vt = svd.v_t.expect("v requested");
        let s = svd.singular_values;

        let ur0 = u.tr_mul(&r0);
        let vlin = &vt * &lin;
        let mut yv = DVector::zeros(s.len());
        for i in 0..s.len() {
            yv[i] = -(s[i] * ur0[i] + vlin[i]) / (s[i] * s[i] + ridge);
        }
        let mut y = vt.tr_mul(&yv);
        if vt.nrows() < k - 1 {
            // directions outside the row space of V' see only the ridge
            let perp = &lin - vt.tr_mul(&vlin);
            y.axpy(-1.0 / ridge, &perp, 1.0);
        }
        let wf = w0 + z * y;
        for (j, &f) in free.iter().enumerate() {
            out[f] = wf[j];
        }
        out
    }

    /// Active-set solve starting from the vertex `start`.
    fn active_set(&self, lambda: f64, start: usize) -> Result<DVector<f64>> {
        let n = self.n();
        let ridge = RIDGE_REL * self.scale;
        let tol = KKT_REL * self.scale * (1.0 + lambda);
        let mut w = DVector::zeros(n);
        w[start] = 1.0;
        let mut free = vec![start];

        for _ in 0..MAX_ITER {
            let cand = self.solve_subproblem(&free, lambda, ridge);
            let blocking = free
                .iter()
                .copied()
                .filter(|&j| cand[j] < 0.0)
                .map(|j| (j, w[j] / (w[j] - cand[j])))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

            match blocking {
                None => {
                    w = cand;
                    let g = self.half_gradient(&w, lambda, ridge);
                    let nu = free.iter().map(|&j| g[j]).sum::<f64>() / free.len() as f64;
                    let entering = (0..n)
                        .filter(|j| !free.contains(j))
                        .map(|j| (j, g[j] - nu))
                        .filter(|&(_, s)| s < -tol)
                        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                    match entering {
                        Some((j, _)) => {
                            free.push(j);
                            free.sort_unstable();
                        }
                        None => return Ok(w),
                    }
                }
                Some((jb, alpha)) => {
                    let step = &cand - &w;
                    w.axpy(alpha, &step, 1.0);
                    w[jb] = 0.0;
                    free.retain(|&j| j != jb && w[j] > 0.0);
                    if free.is_empty() {
                        // numerically exhausted face; restart from the best vertex
                        let best = (0..n).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap_or(0);
                        w.fill(0.0);
                        w[best] = 1.0;
                        free.push(best);
                    }
                }
            }
        }
        Err(Error::NotConverged(MAX_ITER))
    }

    pub fn solve(&self, problem: &SolveProblem) -> Result<WeightVector> {
        let start = nearest_index(&problem.donor_distances());
        let w = self.active_set(problem.lambda, start)?;
        Ok(WeightVector::from_weights(problem, w.iter().copied().collect()))
    }
}

impl SolveProblem {
    fn donors_distances_iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.donors.iter().map(move |d| sq_dist(&self.target, d))
    }
}

/// Orthonormal basis of {z : Σ z = 0} in R^k, as k × (k−1) columns.
fn helmert_basis(k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k - 1, |i, c| {
        let c1 = (c + 1) as f64;
        let norm = (c1 * (c1 + 1.0)).sqrt();
        if i <= c {
            1.0 / norm
        } else if i == c + 1 {
            -c1 / norm
        } else {
            0.0
        }
    })
}

fn nearest_index(distances: &[f64]) -> usize {
    let mut best = 0;
    for (j, &d) in distances.iter().enumerate() {
        if d < distances[best] {
            best = j;
        }
    }
    best
}

/// Penalized synthetic-control weights.
pub fn solve_penalized_sc(problem: &SolveProblem) -> Result<WeightVector> {
    PreparedProblem::new(problem).solve(problem)
}

/// λ = 0; ties among optimal weights resolve toward minimum Euclidean norm.
pub fn solve_unpenalized_sc(target: Vec<f64>, donors: Vec<Vec<f64>>) -> Result<WeightVector> {
    solve_penalized_sc(&SolveProblem::new(target, donors, 0.0)?)
}

/// All weight on the closest donor; ties go to the lowest index.
pub fn nearest_neighbor_weights(target: &[f64], donors: &[Vec<f64>]) -> Result<WeightVector> {
    let problem = SolveProblem::new(target.to_vec(), donors.to_vec(), 0.0)?;
    let j = nearest_index(&problem.donor_distances());
    let mut w = vec![0.0; donors.len()];
    w[j] = 1.0;
    Ok(WeightVector::from_weights(&problem, w))
}

/// Solves from two different starting vertices and reports whether both
/// runs agree on the weights to within `tol`.
pub fn solutions_agree(problem: &SolveProblem, tol: f64) -> Result<bool> {
    let prepared = PreparedProblem::new(problem);
    let d = problem.donor_distances();
    let near = nearest_index(&d);
    let far = (0..d.len()).max_by(|&a, &b| d[a].total_cmp(&d[b]).then(b.cmp(&a))).unwrap_or(0);
    let a = prepared.active_set(problem.lambda, near)?;
    let b = prepared.active_set(problem.lambda, far)?;
    Ok((a - b).amax() <= tol)
}

/// Largest donor count the lattice oracle accepts.
pub const ORACLE_MAX_DONORS: usize = 4;

/// Best point of the simplex lattice with spacing `resolution`. Test oracle.
pub fn grid_oracle(problem: &SolveProblem, resolution: f64) -> Result<WeightVector> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::InvalidResolution(resolution));
    }
    let n = problem.n_donors();
    if n > ORACLE_MAX_DONORS {
        return Err(Error::TooManyDonors {
            max: ORACLE_MAX_DONORS,
            found: n,
        });
    }
    let steps = (1.0 / resolution).round().max(1.0) as usize;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut counts = vec![0usize; n];
    enumerate_compositions(&mut counts, 0, steps, &mut |c| {
        let w: Vec<f64> = c.iter().map(|&k| k as f64 / steps as f64).collect();
        let obj = problem.objective(&w);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, w));
        }
    });
    let (_, w) = best.expect("lattice is nonempty");
    Ok(WeightVector::from_weights(problem, w))
}

fn enumerate_compositions(counts: &mut [usize], pos: usize, remaining: usize, visit: &mut impl FnMut(&[usize])) {
    if pos + 1 == counts.len() {
        counts[pos] = remaining;
        visit(counts);
        return;
    }
    for k in 0..=remaining {
        counts[pos] = k;
        enumerate_compositions(counts, pos + 1, remaining - k, visit);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_d(target: f64, donors: &[f64], lambda: f64) -> SolveProblem {
        SolveProblem::new(vec![target], donors.iter().map(|&d| vec![d]).collect(), lambda).unwrap()
    }

    #[test]
    fn exact_donor_gets_all_weight() {
        let p = SolveProblem::new(vec![1.0, 2.0], vec![vec![0.0, 0.0], vec![1.0, 2.0], vec![3.0, 1.0]], 0.5)
            .unwrap();
        let w = solve_penalized_sc(&p).unwrap();
        assert!((w.weights[1] - 1.0).abs() < 1e-9);
        assert!(w.objective_value.abs() < 1e-9);
    }

    #[test]
    fn closed_form_one_dimensional() {
        // (1 − 3ω₁)² + λ(1 + 3ω₁) is minimized at ω₁ = (1 − λ/2)/3, clamped
        for (lambda, w1) in [(0.0, 1.0 / 3.0), (1.0, 1.0 / 6.0), (10.0, 0.0)] {
            let w = solve_penalized_sc(&one_d(0.0, &[-2.0, 1.0], lambda)).unwrap();
            assert!((w.weights[0] - w1).abs() < 1e-6, "λ={lambda}: {:?}", w.weights);
            assert!((w.weights[1] - (1.0 - w1)).abs() < 1e-6);
            let oracle = grid_oracle(&one_d(0.0, &[-2.0, 1.0], lambda), 1e-4).unwrap();
            assert!(w.objective_value <= oracle.objective_value + 1e-9);
        }
    }

    #[test]
    fn unpenalized_cases() {
        let w = solve_unpenalized_sc(vec![0.5], vec![vec![0.0], vec![1.0]]).unwrap();
        assert!((w.weights[0] - 0.5).abs() < 1e-6);
        assert!(w.fit_term < 1e-12);

        let w = solve_unpenalized_sc(vec![5.0], vec![vec![0.0], vec![1.0]]).unwrap();
        assert!(w.weights[1] > 1.0 - 1e-9);
        assert!((w.fit_term - 16.0).abs() < 1e-9);

        // identical donors equal to the target: minimum-norm tie rule
        let w = solve_unpenalized_sc(vec![1.0, 1.0], vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!((w.weights[0] - 0.5).abs() < 1e-6, "{:?}", w.weights);
        assert!((w.weights[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn min_norm_among_many_exact_fits() {
        // target at the centre of a square; the two diagonals both fit exactly,
        // the minimum-norm optimum spreads weight evenly
        let donors = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let w = solve_unpenalized_sc(vec![0.5, 0.5], donors).unwrap();
        for x in &w.weights {
            assert!((x - 0.25).abs() < 1e-6, "{:?}", w.weights);
        }
    }

    #[test]
    fn nearest_neighbor_rules() {
        let w = nearest_neighbor_weights(&[0.0], &[vec![-2.0], vec![1.0]]).unwrap();
        assert_eq!(w.weights, vec![0.0, 1.0]);
        let w = nearest_neighbor_weights(&[0.0], &[vec![3.0]]).unwrap();
        assert_eq!(w.weights, vec![1.0]);
        let w = nearest_neighbor_weights(&[0.0], &[vec![-1.0], vec![1.0]]).unwrap();
        assert_eq!(w.weights, vec![1.0, 0.0]);
        assert!(nearest_neighbor_weights(&[0.0], &[]).is_err());
    }

    #[test]
    fn errors() {
        assert!(matches!(SolveProblem::new(vec![0.0], vec![], 0.0), Err(Error::EmptyDonorPool(_))));
        assert!(matches!(
            SolveProblem::new(vec![f64::NAN], vec![vec![0.0]], 0.0),
            Err(Error::NonFinite)
        ));
        assert!(SolveProblem::new(vec![0.0], vec![vec![0.0]], -1.0).is_err());
        assert!(SolveProblem::new(vec![0.0], vec![vec![0.0, 1.0]], 0.0).is_err());
    }

    #[test]
    fn oracle_edges() {
        let p = one_d(0.3, &[2.0], 0.1);
        assert_eq!(grid_oracle(&p, 0.25).unwrap().weights, vec![1.0]);
        assert!(grid_oracle(&p, 0.0).is_err());
        assert!(grid_oracle(&p, -1.0).is_err());
        let p5 = one_d(0.0, &[1.0, 2.0, 3.0, 4.0, 5.0], 0.0);
        assert!(matches!(grid_oracle(&p5, 0.1), Err(Error::TooManyDonors { .. })));
    }

    #[test]
    fn collinear_donors_with_penalty() {
        // middle donor is the average of the outer two; penalty favors it
        let p = one_d(0.0, &[-1.0, 0.5, 2.0], 0.1);
        let w = solve_penalized_sc(&p).unwrap();
        let o = grid_oracle(&p, 1e-3).unwrap();
        assert!(w.objective_value <= o.objective_value + 1e-9);
    }

    fn problem_strategy() -> impl Strategy<Value = SolveProblem> {
        (1usize..=8, 2usize..=3, prop::sample::select(vec![0.0, 0.01, 0.1, 1.0])).prop_flat_map(|(m, n, lambda)| {
            (
                prop::collection::vec(-3.0f64..3.0, m),
                prop::collection::vec(prop::collection::vec(-3.0f64..3.0, m), n),
            )
                .prop_map(move |(t, d)| SolveProblem::new(t, d, lambda).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn simplex_feasible_and_consistent(p in problem_strategy()) {
            let w = solve_penalized_sc(&p).unwrap();
            prop_assert!(w.weights.iter().all(|&x| x >= 0.0));
            prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let recomposed = w.fit_term + p.lambda() * w.penalty_term;
            prop_assert!((w.objective_value - recomposed).abs() <= 1e-8 * recomposed.abs().max(1.0));
        }

        #[test]
        fn matches_lattice_oracle(p in problem_strategy()) {
            let w = solve_penalized_sc(&p).unwrap();
            let o = grid_oracle(&p, 1e-2).unwrap();
            prop_assert!(w.objective_value <= o.objective_value + 1e-8);
        }

        #[test]
        fn permutation_equivariant(p in problem_strategy()) {
            let w = solve_penalized_sc(&p).unwrap();
            let mut rev = p.donors().to_vec();
            rev.reverse();
            let q = SolveProblem::new(p.target().to_vec(), rev, p.lambda()).unwrap();
            let mut wq = solve_penalized_sc(&q).unwrap().weights;
            wq.reverse();
            // objectives agree exactly up to rounding; weights too when unique
            let oq = p.objective(&wq);
            prop_assert!((oq - w.objective_value).abs() < 1e-7);
            if p.lambda() > 0.0 {
                for (a, b) in w.weights.iter().zip(&wq) {
                    prop_assert!((a - b).abs() < 1e-5);
                }
            }
        }

        #[test]
        fn penalty_term_nonincreasing_in_lambda(p in problem_strategy()) {
            let mut last = f64::INFINITY;
            for lambda in [0.001, 0.01, 0.1, 1.0, 10.0, 100.0] {
                let w = solve_penalized_sc(&p.with_lambda(lambda).unwrap()).unwrap();
                prop_assert!(w.penalty_term <= last + 1e-7);
                last = w.penalty_term;
            }
        }
    }
}
