//! Conditional mutual information test with a k-nearest-neighbour estimator
//! and a local-permutation null distribution.
//!
//! Columns are rank-transformed to `[0, 1]` with a tiny seeded jitter so
//! max-norm neighbour distances are strictly positive. The estimator is
//!
//! ```text
//! I(X;Y|Z) = ψ(k) + ⟨ψ(k_z) − ψ(k_xz) − ψ(k_yz)⟩
//! ```
//!
//! where `k_·` count the points (self included) strictly inside the joint
//! k-th neighbour distance in each subspace. The null shuffles `x` among the
//! `k_perm` nearest neighbours in `Z`, which preserves the `X`–`Z` relation.

use rand::seq::SliceRandom;
use rand::Rng as _;
use statrs::function::gamma::digamma;

use super::knn::NeighborIndex;
use super::parcorr::average_ranks;
use super::{CiTestConfig, CiTestKind, CiTestOutcome};
use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::stats;

pub const JITTER_SCALE: f64 = 1e-10;

/// Ranks scaled to `(0, 1]` plus a seeded jitter of [`JITTER_SCALE`].
pub(crate) fn rank_uniform_jittered(column: &[f64], seed: u64) -> Vec<f64> {
    let n = column.len() as f64;
    let mut rng = stats::rng(seed);
    average_ranks(column)
        .into_iter()
        .map(|r| r / n + JITTER_SCALE * rng.random::<f64>())
        .collect()
}

/// Point estimate of the conditional mutual information (nats).
pub fn cmi_estimate(x: &[f64], y: &[f64], z: &[&[f64]], k: usize) -> f64 {
    let n = x.len();
    let mut joint: Vec<&[f64]> = vec![x, y];
    joint.extend_from_slice(z);
    let joint = NeighborIndex::new(joint);
    let mut xz: Vec<&[f64]> = vec![x];
    xz.extend_from_slice(z);
    let xz = NeighborIndex::new(xz);
    let mut yz: Vec<&[f64]> = vec![y];
    yz.extend_from_slice(z);
    let yz = NeighborIndex::new(yz);
    let zi = (!z.is_empty()).then(|| NeighborIndex::new(z.to_vec()));

    let mut acc = 0.0;
    for i in 0..n {
        let eps = joint.nearest(i, k)[k - 1].0;
        let k_xz = xz.count_within(i, eps) as f64;
        let k_yz = yz.count_within(i, eps) as f64;
        let k_z = zi
            .as_ref()
            .map_or(n as f64, |s| s.count_within(i, eps) as f64);
        acc += digamma(k_z) - digamma(k_xz) - digamma(k_yz);
    }
    digamma(k as f64) + acc / n as f64
}

/// Local permutation: each sample draws an unused index among its `k_perm`
/// nearest neighbours in `Z` (visited in random order), reusing the last
/// neighbour when all are taken.
fn restricted_permutation(neighbors: &mut [Vec<usize>], rng: &mut stats::Rng) -> Vec<usize> {
    let n = neighbors.len();
    for nb in neighbors.iter_mut() {
        nb.shuffle(rng);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut used = vec![false; n];
    let mut perm = vec![0; n];
    for &i in &order {
        let nb = &neighbors[i];
        let pick = nb
            .iter()
            .copied()
            .find(|&j| !used[j])
            .unwrap_or(nb[nb.len() - 1]);
        perm[i] = pick;
        used[pick] = true;
    }
    perm
}

/// Test on columns already passed through [`rank_uniform_jittered`].
pub(crate) fn cmiknn_test_prepared(
    columns: &[Vec<f64>],
    x: usize,
    y: usize,
    z: &[usize],
    config: &CiTestConfig,
    seed: u64,
) -> Result<CiTestOutcome> {
    let n = columns[x].len();
    let err = |message: String| Error::CiTest {
        x,
        y,
        z: z.to_vec(),
        message,
    };
    if n < 50 {
        return Err(err(format!("CMIknn needs at least 50 samples, got {n}")));
    }
    let k = config.knn_k;
    if k == 0 || k * 10 >= n {
        return Err(err(format!(
            "knn_k = {k} must satisfy 0 < k < n/10 = {}",
            n / 10
        )));
    }
    let zc: Vec<&[f64]> = z.iter().map(|&c| columns[c].as_slice()).collect();
    let xs = &columns[x];
    let ys = &columns[y];
    let observed = cmi_estimate(xs, ys, &zc, k);

    let mut rng = stats::rng(seed);
    let mut neighbors: Option<Vec<Vec<usize>>> = if zc.is_empty() {
        None
    } else {
        let idx = NeighborIndex::new(zc.clone());
        let kp = config.perm_neighbors.clamp(1, n - 1);
        // The sample itself is its own nearest neighbour.
        Some(
            (0..n)
                .map(|i| {
                    let mut nb = vec![i];
                    nb.extend(idx.nearest(i, kp - 1).into_iter().map(|(_, j)| j));
                    nb
                })
                .collect(),
        )
    };
    let mut exceed = 0usize;
    let mut permuted = vec![0.0; n];
    for _ in 0..config.n_permutations {
        let perm: Vec<usize> = match neighbors.as_mut() {
            Some(nb) => restricted_permutation(nb, &mut rng),
            None => {
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(&mut rng);
                p
            }
        };
        for (dst, &src) in permuted.iter_mut().zip(&perm) {
            *dst = xs[src];
        }
        if cmi_estimate(&permuted, ys, &zc, k) >= observed {
            exceed += 1;
        }
    }
    let p_value = if config.n_permutations == 0 {
        1.0
    } else {
        exceed as f64 / config.n_permutations as f64
    };
    Ok(CiTestOutcome {
        kind: CiTestKind::Cmiknn,
        statistic: observed,
        p_value,
        partial_correlation: None,
        n_effective: n,
        condition_set: z.to_vec(),
    })
}

/// Rank-transform the involved columns, then run the permutation test.
pub fn cmiknn_test(
    x: usize,
    y: usize,
    z: &[usize],
    data: &DataMatrix,
    config: &CiTestConfig,
) -> Result<CiTestOutcome> {
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); data.n_cols()];
    for &c in std::iter::once(&x).chain(std::iter::once(&y)).chain(z) {
        if cols[c].is_empty() {
            cols[c] =
                rank_uniform_jittered(data.column(c), stats::derive_seed(config.seed, c as u64));
        }
    }
    cmiknn_test_prepared(
        &cols,
        x,
        y,
        z,
        config,
        super::test_seed(config.seed, x, y, z),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut r = stats::rng(seed);
        (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
    }

    #[test]
    fn mi_of_correlated_gaussians_close_to_theory() {
        let n = 2000;
        let a = normals(n, 1);
        let b = normals(n, 2);
        let rho: f64 = 0.8;
        let y: Vec<f64> = (0..n)
            .map(|i| rho * a[i] + (1.0 - rho * rho).sqrt() * b[i])
            .collect();
        let xr = rank_uniform_jittered(&a, 3);
        let yr = rank_uniform_jittered(&y, 4);
        let mi = cmi_estimate(&xr, &yr, &[], 10);
        let theory = -0.5 * (1.0 - rho * rho).ln();
        assert!((mi - theory).abs() < 0.08, "mi = {mi}, theory = {theory}");
    }

    #[test]
    fn conditional_independence_in_chain() {
        let n = 1000;
        let x = normals(n, 5);
        let e1 = normals(n, 6);
        let e2 = normals(n, 7);
        let y: Vec<f64> = (0..n).map(|i| x[i] + e1[i]).collect();
        let z: Vec<f64> = (0..n).map(|i| y[i] + e2[i]).collect();
        let d = DataMatrix::from_columns(vec!["x".into(), "y".into(), "z".into()], vec![x, y, z])
            .unwrap();
        let cfg = CiTestConfig {
            n_permutations: 100,
            ..CiTestConfig::cmiknn()
        };
        assert!(cmiknn_test(0, 2, &[], &d, &cfg).unwrap().p_value < 0.01);
        assert!(cmiknn_test(0, 2, &[1], &d, &cfg).unwrap().p_value > 0.01);
    }

    #[test]
    fn restricted_permutation_stays_in_neighbourhood() {
        let mut nb: Vec<Vec<usize>> = (0..20)
            .map(|i| vec![i, (i + 1) % 20, (i + 19) % 20])
            .collect();
        let mut r = stats::rng(0);
        let p = restricted_permutation(&mut nb, &mut r);
        for (i, &j) in p.iter().enumerate() {
            assert!(nb[i].contains(&j));
        }
    }

    #[test]
    fn rejects_small_samples_and_large_k() {
        let d = DataMatrix::from_columns(
            vec!["a".into(), "b".into()],
            vec![normals(40, 1), normals(40, 2)],
        )
        .unwrap();
        assert!(cmiknn_test(0, 1, &[], &d, &CiTestConfig::cmiknn()).is_err());
        let d = DataMatrix::from_columns(
            vec!["a".into(), "b".into()],
            vec![normals(80, 1), normals(80, 2)],
        )
        .unwrap();
        assert!(cmiknn_test(0, 1, &[], &d, &CiTestConfig::cmiknn()).is_err());
    }

    #[test]
    fn duplicate_rows_are_jittered_apart() {
        let col = vec![1.0; 60]
            .into_iter()
            .chain((0..60).map(f64::from))
            .collect::<Vec<_>>();
        let r = rank_uniform_jittered(&col, 9);
        let mut sorted = r.clone();
        sorted.sort_by(f64::total_cmp);
        assert!(sorted.windows(2).all(|w| w[0] < w[1]));
    }
}
