use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::causal::{combinations, MixedGraph};
use crate::ci::parcorr_p_value;
use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::stats;

/// One structural term `coefficient · parent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub parent: usize,
    pub coefficient: f64,
}

/// Linear-Gaussian structural causal model
/// `x_j = Σ_k b_kj x_k + σ_j ε_j` with standard normal `ε_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralCausalModel {
    pub variables: Vec<String>,
    pub parents: Vec<Vec<Term>>,
    pub noise_sd: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl StructuralCausalModel {
    pub fn new(
        variables: Vec<String>,
        edges: &[(usize, usize, f64)],
        noise_sd: Vec<f64>,
    ) -> Result<Self> {
        let mut parents = vec![Vec::new(); variables.len()];
        for &(from, to, coefficient) in edges {
            if from >= variables.len() || to >= variables.len() {
                return Err(Error::InvalidArgument(format!(
                    "edge ({from}, {to}) out of range"
                )));
            }
            parents[to].push(Term {
                parent: from,
                coefficient,
            });
        }
        let scm = Self {
            variables,
            parents,
            noise_sd,
            seed: 0,
        };
        scm.validate()?;
        Ok(scm)
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.n_vars();
        if self.parents.len() != d || self.noise_sd.len() != d {
            return Err(Error::InvalidArgument(
                "parent lists and noise must match the variables".into(),
            ));
        }
        if self.noise_sd.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidArgument(
                "noise standard deviations must be finite and nonnegative".into(),
            ));
        }
        for (j, ps) in self.parents.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for t in ps {
                if t.parent >= d
                    || t.parent == j
                    || !seen.insert(t.parent)
                    || !t.coefficient.is_finite()
                {
                    return Err(Error::InvalidArgument(format!(
                        "invalid parent {} of `{}`",
                        t.parent, self.variables[j]
                    )));
                }
            }
        }
        self.topological_order()
            .map(|_| ())
            .ok_or_else(|| Error::InvalidArgument("parent graph has a cycle".into()))
    }

    /// Kahn order, smallest index first among ready variables.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let d = self.n_vars();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..d).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(d);
        while let Some(u) = ready.pop_first() {
            order.push(u);
            for (j, ps) in self.parents.iter().enumerate() {
                if ps.iter().any(|t| t.parent == u) {
                    indeg[j] -= 1;
                    if indeg[j] == 0 {
                        ready.insert(j);
                    }
                }
            }
        }
        (order.len() == d).then_some(order)
    }

    /// Edges `(from, to, coefficient)` sorted by `(to, from)`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut e: Vec<_> = self
            .parents
            .iter()
            .enumerate()
            .flat_map(|(j, ps)| ps.iter().map(move |t| (t.parent, j, t.coefficient)))
            .collect();
        e.sort_by_key(|&(f, t, _)| (t, f));
        e
    }

    pub fn coefficient(&self, from: usize, to: usize) -> Option<f64> {
        self.parents[to]
            .iter()
            .find(|t| t.parent == from)
            .map(|t| t.coefficient)
    }

    pub fn set_coefficient(&mut self, from: usize, to: usize, value: f64) {
        if let Some(t) = self.parents[to].iter_mut().find(|t| t.parent == from) {
            t.coefficient = value;
        }
    }

    pub fn with_zero_coefficients(&self) -> Self {
        let mut s = self.clone();
        for ps in &mut s.parents {
            for t in ps {
                t.coefficient = 0.0;
            }
        }
        s
    }

    /// The generating DAG.
    pub fn true_graph(&self) -> MixedGraph {
        let mut g = MixedGraph::empty(self.variables.clone());
        for (f, t, _) in self.edges() {
            g.add_directed(f, t);
        }
        g
    }

    /// Unordered adjacent pairs of the generating DAG.
    pub fn skeleton(&self) -> BTreeSet<(usize, usize)> {
        self.edges()
            .into_iter()
            .map(|(f, t, _)| (f.min(t), f.max(t)))
            .collect()
    }

    /// Ancestral sampling; deterministic under `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> DataMatrix {
        let d = self.n_vars();
        let order = self.topological_order().expect("validated SCM is acyclic");
        let mut rng = stats::rng(seed);
        let mut cols = vec![vec![0.0; n]; d];
        for r in 0..n {
            for &j in &order {
                let eps: f64 = StandardNormal.sample(&mut rng);
                let mut v = self.noise_sd[j] * eps;
                for t in &self.parents[j] {
                    v += t.coefficient * cols[t.parent][r];
                }
                cols[j][r] = v;
            }
        }
        DataMatrix::from_columns(self.variables.clone(), cols).expect("finite samples")
    }

    /// Population covariance `(I − B)⁻¹ D (I − B)⁻ᵀ` with `B[to, from]`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.n_vars();
        let mut m = DMatrix::<f64>::identity(d, d);
        for (f, t, c) in self.edges() {
            m[(t, f)] -= c;
        }
        let inv = m
            .try_inverse()
            .expect("acyclic SCM has unit-triangular I - B");
        let noise = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            d,
            self.noise_sd.iter().map(|s| s * s),
        ));
        &inv * noise * inv.transpose()
    }

    /// Random DAG over `d` variables in index order: each forward pair gets
    /// an edge with probability `density` and a coefficient of magnitude in
    /// `[min_abs, max_abs]` with random sign.
    pub fn random(d: usize, density: f64, min_abs: f64, max_abs: f64, seed: u64) -> Self {
        let mut rng = stats::rng(seed);
        let mut edges = Vec::new();
        for from in 0..d {
            for to in from + 1..d {
                if rng.random::<f64>() < density {
                    let mag = min_abs + (max_abs - min_abs) * rng.random::<f64>();
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    edges.push((from, to, sign * mag));
                }
            }
        }
        let mut s = Self::new(
            (0..d).map(|i| format!("x{i}")).collect(),
            &edges,
            vec![1.0; d],
        )
        .expect("forward edges are acyclic");
        s.seed = seed;
        s
    }
}

/// Partial correlation of `x` and `y` given `z` implied by a covariance.
pub fn population_partial_correlation(cov: &DMatrix<f64>, x: usize, y: usize, z: &[usize]) -> f64 {
    let idx: Vec<usize> = [x, y].into_iter().chain(z.iter().copied()).collect();
    let k = idx.len();
    let sub = DMatrix::from_fn(k, k, |i, j| cov[(idx[i], idx[j])]);
    let p = sub.try_inverse().expect("positive definite covariance");
    -p[(0, 1)] / (p[(0, 0)] * p[(1, 1)]).sqrt()
}

/// Strength a skeleton search would report for the edge `(x, y)` of the
/// generating DAG: among conditioning sets drawn from the true adjacencies
/// of either end, the partial correlation whose p-value at sample size `n`
/// is largest.
pub fn as_tested_rho(
    scm: &StructuralCausalModel,
    cov: &DMatrix<f64>,
    x: usize,
    y: usize,
    n: usize,
) -> f64 {
    let skel = scm.skeleton();
    let adj = |v: usize, other: usize| -> Vec<usize> {
        (0..scm.n_vars())
            .filter(|&u| u != v && u != other && skel.contains(&(u.min(v), u.max(v))))
            .collect()
    };
    let mut sets = BTreeSet::new();
    for (a, b) in [(x, y), (y, x)] {
        let cand = adj(a, b);
        for k in 0..=cand.len() {
            sets.extend(combinations(&cand, k));
        }
    }
    let mut best = (f64::NEG_INFINITY, 0.0);
    for z in sets {
        let rho = population_partial_correlation(cov, x, y, &z);
        let p = parcorr_p_value(rho, n, z.len())
            .map(|(_, p)| p)
            .unwrap_or(0.0);
        if p > best.0 {
            best = (p, rho);
        }
    }
    best.1
}

/// Adjusts every coefficient until each edge's [`as_tested_rho`] equals its
/// target. Returns the largest remaining absolute error.
pub fn calibrate(
    scm: &mut StructuralCausalModel,
    targets: &[(usize, usize, f64)],
    n: usize,
    max_iter: usize,
    tol: f64,
) -> f64 {
    let mut worst = f64::INFINITY;
    for iter in 0..max_iter {
        let cov = scm.covariance();
        let errors: Vec<f64> = targets
            .iter()
            .map(|&(f, t, target)| target - as_tested_rho(scm, &cov, f, t, n))
            .collect();
        worst = errors.iter().fold(0.0, |m, e| m.max(e.abs()));
        if worst < tol {
            break;
        }
        let step = if iter < 50 { 0.8 } else { 0.5 };
        for (&(f, t, _), e) in targets.iter().zip(&errors) {
            let c = scm.coefficient(f, t).expect("target edge exists");
            scm.set_coefficient(f, t, c + step * e);
        }
    }
    worst
}

/// Variable order of [`urban_form_scm`].
pub const URBAN_FORM_VARIABLES: [&str; 6] = [
    "distance_to_center_km",
    "distance_to_employment_km",
    "population_density_per_km2",
    "street_connectivity_per_km2",
    "income",
    "mean_vkt_km",
];

/// Target link strengths of the urban-form graph as `(from, to, rho)`. The
/// four edges into the target are assumed values.
pub const URBAN_FORM_TARGETS: [(usize, usize, f64); 10] = [
    (0, 1, 0.37),
    (0, 2, -0.24),
    (1, 2, -0.14),
    (2, 3, 0.50),
    (4, 2, -0.07),
    (4, 3, -0.09),
    (0, 5, 0.28),
    (1, 5, 0.15),
    (2, 5, -0.10),
    (3, 5, -0.10),
];

/// Sample size the link strengths refer to.
pub const BALANCED_POOL_SIZE: usize = 1542;

/// Uncalibrated model with the target strengths as starting coefficients.
pub fn urban_form_structure() -> StructuralCausalModel {
    StructuralCausalModel::new(
        URBAN_FORM_VARIABLES.iter().map(|s| s.to_string()).collect(),
        &URBAN_FORM_TARGETS,
        vec![1.0; 6],
    )
    .expect("urban-form DAG is acyclic")
}

/// The calibrated urban-form SCM shipped in `data/urban_form_scm.json`.
pub fn urban_form_scm() -> StructuralCausalModel {
    serde_json::from_str(include_str!("../../data/urban_form_scm.json"))
        .expect("shipped SCM parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_covariance_matches_closed_form() {
        let s = StructuralCausalModel::new(
            vec!["a".into(), "b".into()],
            &[(0, 1, 0.5)],
            vec![1.0, 1.0],
        )
        .unwrap();
        let c = s.covariance();
        assert!((c[(0, 1)] - 0.5).abs() < 1e-12);
        assert!((c[(1, 1)] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn cycles_are_rejected() {
        assert!(StructuralCausalModel::new(
            vec!["a".into(), "b".into()],
            &[(0, 1, 0.5), (1, 0, 0.5)],
            vec![1.0; 2]
        )
        .is_err());
    }

    #[test]
    fn chain_partial_correlation_vanishes() {
        let s = StructuralCausalModel::new(
            vec!["a".into(), "b".into(), "c".into()],
            &[(0, 1, 0.8), (1, 2, 0.8)],
            vec![1.0; 3],
        )
        .unwrap();
        let c = s.covariance();
        assert!(population_partial_correlation(&c, 0, 2, &[1]).abs() < 1e-12);
        assert!(population_partial_correlation(&c, 0, 2, &[]) > 0.3);
    }

    #[test]
    fn calibration_hits_targets_on_small_model() {
        let mut s = StructuralCausalModel::new(
            vec!["a".into(), "b".into(), "c".into()],
            &[(0, 1, 0.3), (1, 2, 0.3), (0, 2, 0.3)],
            vec![1.0; 3],
        )
        .unwrap();
        let targets = [(0, 1, 0.4), (1, 2, 0.5), (0, 2, 0.2)];
        let err = calibrate(&mut s, &targets, 1000, 500, 1e-10);
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn random_scm_is_acyclic_and_seeded() {
        let a = StructuralCausalModel::random(5, 0.5, 0.3, 0.9, 7);
        assert!(a.topological_order().is_some());
        assert_eq!(a, StructuralCausalModel::random(5, 0.5, 0.3, 0.9, 7));
    }
}
