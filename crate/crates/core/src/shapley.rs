//! Exact-enumeration Shapley attributions with an interventional
//! (chain-respecting) value function and a marginal one.
//!
//! All coalitions share one stream of uniforms per instance, so differences
//! between coalition values carry no independent sampling noise and the
//! efficiency identity holds to rounding error.

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbdt::GbdtModel;
use crate::scalar::Scalar;
use crate::stats;

/// Largest feature count handled by exact enumeration.
pub const MAX_FEATURES: usize = 15;

/// Anything that maps a feature vector to a prediction.
pub trait Predictor<T> {
    fn n_features(&self) -> usize;
    fn predict_one(&self, x: &[T]) -> T;
}

impl<T: Scalar> Predictor<T> for GbdtModel<T> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_one(&self, x: &[T]) -> T {
        self.predict_unchecked(x)
    }
}

/// Wraps a closure as a [`Predictor`].
pub struct FnPredictor<F> {
    pub n_features: usize,
    pub f: F,
}

impl<T, F: Fn(&[T]) -> T> Predictor<T> for FnPredictor<F> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_one(&self, x: &[T]) -> T {
        (self.f)(x)
    }
}

/// Ordered partition of the features; earlier components may cause later
/// ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalChain {
    pub components: Vec<Vec<usize>>,
}

impl CausalChain {
    pub fn singletons(order: &[usize]) -> Self {
        Self {
            components: order.iter().map(|&i| vec![i]).collect(),
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let mut seen = vec![false; d];
        for &i in self.components.iter().flatten() {
            if i >= d || seen[i] {
                return Err(Error::InvalidArgument(format!(
                    "chain lists feature {i} twice or out of range"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) || self.components.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument(
                "chain components must partition the features".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Causal,
    Marginal,
}

impl ValueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueKind::Causal => "causal",
            ValueKind::Marginal => "marginal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapleyConfig {
    pub n_samples: usize,
    pub knn_k: usize,
    pub seed: u64,
}

impl Default for ShapleyConfig {
    fn default() -> Self {
        Self {
            n_samples: 200,
            knn_k: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyExplanation<T> {
    pub phi: Vec<T>,
    /// Monte Carlo standard error of each `phi`.
    pub phi_se: Vec<T>,
    /// `v(∅)`.
    pub base_value: T,
    /// `v(N) = f(x)`.
    pub prediction: T,
    pub value_kind: ValueKind,
    pub n_samples: usize,
    pub seed: u64,
}

/// Reference rows plus the column scales used by the neighbour search.
pub struct ReferenceData<'a, T> {
    rows: &'a [Vec<T>],
    scale: Vec<T>,
}

impl<'a, T: Scalar> ReferenceData<'a, T> {
    pub fn new(rows: &'a [Vec<T>], d: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("reference data is empty".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::ArityMismatch {
                expected: d,
                got: r.len(),
            });
        }
        let n = T::of_usize(rows.len());
        let scale = (0..d)
            .map(|j| {
                let m = rows.iter().map(|r| r[j]).sum::<T>() / n;
                let v = rows.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<T>() / n;
                let sd = v.sqrt();
                if sd > T::zero() {
                    T::one() / sd
                } else {
                    T::one()
                }
            })
            .collect();
        Ok(Self { rows, scale })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row index chosen by `u ∈ [0, 1)` among the `k` reference rows closest
    /// to `point` on the features `on` (standardized Euclidean distance,
    /// ties by row index).
    fn knn_pick(&self, point: &[T], on: &[usize], k: usize, u: f64) -> usize {
        let k = k.min(self.rows.len()).max(1);
        let mut best: Vec<(T, usize)> = Vec::with_capacity(k + 1);
        for (i, r) in self.rows.iter().enumerate() {
            let mut d2 = T::zero();
            for &j in on {
                let diff = (r[j] - point[j]) * self.scale[j];
                d2 += diff * diff;
            }
            if best.len() == k {
                let last = best[k - 1];
                if !(d2 < last.0) {
                    continue;
                }
                best.pop();
            }
            let at = best.partition_point(|e| e.0 <= d2);
            best.insert(at, (d2, i));
        }
        best[((u * k as f64) as usize).min(best.len() - 1)].1
    }

    fn uniform_pick(&self, u: f64) -> usize {
        ((u * self.rows.len() as f64) as usize).min(self.rows.len() - 1)
    }
}

/// Common random numbers: one uniform per (sample, component).
fn draw_uniforms(n_samples: usize, n_components: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stats::rng(seed);
    (0..n_samples)
        .map(|_| (0..n_components).map(|_| rng.random::<f64>()).collect())
        .collect()
}

/// Builds the perturbed input for one sample under coalition `mask`. Missing
/// members of a component are drawn together from one reference row, chosen
/// among the neighbours of the realized predecessor values (or uniformly for
/// the first component). Fixed members of the same component do not condition
/// the draw.
fn causal_draw<T: Scalar>(
    x: &[T],
    mask: u32,
    chain: &CausalChain,
    reference: &ReferenceData<'_, T>,
    k: usize,
    u: &[f64],
    out: &mut Vec<T>,
) {
    out.clear();
    out.extend_from_slice(x);
    let mut realized: Vec<usize> = Vec::new();
    for (c, comp) in chain.components.iter().enumerate() {
        let missing: Vec<usize> = comp
            .iter()
            .copied()
            .filter(|&j| mask >> j & 1 == 0)
            .collect();
        if !missing.is_empty() {
            let row = if realized.is_empty() {
                reference.uniform_pick(u[c])
            } else {
                reference.knn_pick(out, &realized, k, u[c])
            };
            for &j in &missing {
                out[j] = reference.rows[row][j];
            }
        }
        realized.extend_from_slice(comp);
    }
}

fn marginal_draw<T: Scalar>(
    x: &[T],
    mask: u32,
    reference: &ReferenceData<'_, T>,
    u: &[f64],
    out: &mut Vec<T>,
) {
    let row = &reference.rows[reference.uniform_pick(u[0])];
    out.clear();
    out.extend(
        x.iter()
            .enumerate()
            .map(|(j, &v)| if mask >> j & 1 == 1 { v } else { row[j] }),
    );
}

/// Model outputs for every coalition (bit `j` of the index = feature `j`
/// fixed) and every sample.
pub struct CoalitionTable<T> {
    pub d: usize,
    /// `f[mask][m]`.
    pub f: Vec<Vec<T>>,
}

impl<T: Scalar> CoalitionTable<T> {
    /// Coalition value `v(S)` as the sample mean; the full coalition is
    /// exactly the prediction.
    pub fn value(&self, mask: u32) -> T {
        let row = &self.f[mask as usize];
        if mask as usize == (1 << self.d) - 1 {
            return row[0];
        }
        row.iter().copied().sum::<T>() / T::of_usize(row.len())
    }
}

fn check_inputs<T: Scalar>(
    model: &dyn Predictor<T>,
    x: &[T],
    config: &ShapleyConfig,
) -> Result<usize> {
    let d = model.n_features();
    if x.len() != d {
        return Err(Error::ArityMismatch {
            expected: d,
            got: x.len(),
        });
    }
    if d > MAX_FEATURES {
        return Err(Error::TooManyFeatures {
            max: MAX_FEATURES,
            got: d,
        });
    }
    if config.n_samples == 0 || config.knn_k == 0 {
        return Err(Error::InvalidArgument(
            "n_samples and knn_k must be positive".into(),
        ));
    }
    Ok(d)
}

/// Evaluates the model on every coalition under shared random numbers.
pub fn coalition_table<T: Scalar>(
    model: &dyn Predictor<T>,
    x: &[T],
    kind: ValueKind,
    chain: &CausalChain,
    reference: &[Vec<T>],
    config: &ShapleyConfig,
) -> Result<CoalitionTable<T>> {
    let d = check_inputs(model, x, config)?;
    chain.validate(d)?;
    let reference = ReferenceData::new(reference, d)?;
    let u = draw_uniforms(config.n_samples, chain.components.len().max(1), config.seed);
    let full = (1u32 << d) - 1;
    let mut buf = Vec::with_capacity(d);
    let fx = model.predict_one(x);
    let f = (0..=full)
        .map(|mask| {
            if mask == full {
                return vec![fx; config.n_samples];
            }
            u.iter()
                .map(|um| {
                    match kind {
                        ValueKind::Causal => {
                            causal_draw(x, mask, chain, &reference, config.knn_k, um, &mut buf)
                        }
                        ValueKind::Marginal => marginal_draw(x, mask, &reference, um, &mut buf),
                    }
                    model.predict_one(&buf)
                })
                .collect()
        })
        .collect();
    Ok(CoalitionTable { d, f })
}

/// `v(S)` for a single coalition given as a feature list.
pub fn interventional_expectation<T: Scalar>(
    model: &dyn Predictor<T>,
    coalition: &[usize],
    x: &[T],
    chain: &CausalChain,
    reference: &[Vec<T>],
    config: &ShapleyConfig,
) -> Result<T> {
    let d = check_inputs(model, x, config)?;
    chain.validate(d)?;
    let mask = coalition.iter().try_fold(0u32, |m, &j| {
        if j < d {
            Ok(m | 1 << j)
        } else {
            Err(Error::InvalidArgument(format!(
                "coalition member {j} out of range"
            )))
        }
    })?;
    if mask == (1u32 << d) - 1 {
        return Ok(model.predict_one(x));
    }
    let reference = ReferenceData::new(reference, d)?;
    let u = draw_uniforms(config.n_samples, chain.components.len(), config.seed);
    let mut buf = Vec::with_capacity(d);
    let total: T = u
        .iter()
        .map(|um| {
            causal_draw(x, mask, chain, &reference, config.knn_k, um, &mut buf);
            model.predict_one(&buf)
        })
        .sum();
    Ok(total / T::of_usize(config.n_samples))
}

fn shapley_weights(d: usize) -> Vec<f64> {
    // w(s) = s! (d - s - 1)! / d!
    (0..d)
        .map(|s| {
            let mut w = 1.0 / d as f64;
            // 1 / C(d - 1, s)
            for i in 0..s {
                w *= (i + 1) as f64 / (d - 1 - i) as f64;
            }
            w
        })
        .collect()
}

/// Shapley values from a coalition table. Each `phi_i` is the mean over
/// samples of the per-sample weighted marginal contributions, whose spread
/// gives the standard error.
pub fn shapley_from_table<T: Scalar>(
    table: &CoalitionTable<T>,
    kind: ValueKind,
    seed: u64,
) -> ShapleyExplanation<T> {
    let d = table.d;
    let w: Vec<T> = shapley_weights(d).into_iter().map(T::of).collect();
    let m = table.f[0].len();
    let mut phi = vec![T::zero(); d];
    let mut phi_se = vec![T::zero(); d];
    let mut g = vec![T::zero(); m];
    for i in 0..d {
        g.iter_mut().for_each(|v| *v = T::zero());
        for mask in 0u32..(1 << d) {
            if mask >> i & 1 == 1 {
                continue;
            }
            let with = mask | 1 << i;
            let wt = w[mask.count_ones() as usize];
            let (fw, fo) = (&table.f[with as usize], &table.f[mask as usize]);
            for s in 0..m {
                g[s] += wt * (fw[s] - fo[s]);
            }
        }
        let mean = g.iter().copied().sum::<T>() / T::of_usize(m);
        phi[i] = mean;
        phi_se[i] = if m > 1 {
            let var = g.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / T::of_usize(m - 1);
            (var / T::of_usize(m)).sqrt()
        } else {
            T::zero()
        };
    }
    ShapleyExplanation {
        phi,
        phi_se,
        base_value: table.value(0),
        prediction: table.value((1u32 << d) - 1),
        value_kind: kind,
        n_samples: m,
        seed,
    }
}

pub fn causal_shapley_values<T: Scalar>(
    model: &dyn Predictor<T>,
    x: &[T],
    chain: &CausalChain,
    reference: &[Vec<T>],
    config: &ShapleyConfig,
) -> Result<ShapleyExplanation<T>> {
    let t = coalition_table(model, x, ValueKind::Causal, chain, reference, config)?;
    Ok(shapley_from_table(&t, ValueKind::Causal, config.seed))
}

pub fn marginal_shapley_values<T: Scalar>(
    model: &dyn Predictor<T>,
    x: &[T],
    reference: &[Vec<T>],
    config: &ShapleyConfig,
) -> Result<ShapleyExplanation<T>> {
    let d = model.n_features();
    let chain = CausalChain::singletons(&(0..d).collect::<Vec<_>>());
    let t = coalition_table(model, x, ValueKind::Marginal, &chain, reference, config)?;
    Ok(shapley_from_table(&t, ValueKind::Marginal, config.seed))
}

/// Explains each row with seed `derive_seed(config.seed, row index)`.
pub fn explain_rows<T: Scalar>(
    model: &dyn Predictor<T>,
    rows: &[Vec<T>],
    kind: ValueKind,
    chain: &CausalChain,
    reference: &[Vec<T>],
    config: &ShapleyConfig,
) -> Result<Vec<ShapleyExplanation<T>>> {
    rows.iter()
        .enumerate()
        .map(|(i, x)| {
            let cfg = ShapleyConfig {
                seed: stats::derive_seed(config.seed, i as u64),
                ..config.clone()
            };
            match kind {
                ValueKind::Causal => causal_shapley_values(model, x, chain, reference, &cfg),
                ValueKind::Marginal => marginal_shapley_values(model, x, reference, &cfg),
            }
        })
        .collect()
}

/// Mean of `|phi_i|` over explanations, optionally scaled to sum to one.
pub fn mean_absolute_importance<T: Scalar>(
    explanations: &[ShapleyExplanation<T>],
    normalize: bool,
) -> Result<Vec<T>> {
    let first = explanations
        .first()
        .ok_or_else(|| Error::InvalidArgument("no explanations".into()))?;
    let d = first.phi.len();
    let mut acc = vec![T::zero(); d];
    for e in explanations {
        if e.phi.len() != d {
            return Err(Error::ArityMismatch {
                expected: d,
                got: e.phi.len(),
            });
        }
        for (a, p) in acc.iter_mut().zip(&e.phi) {
            *a += p.abs();
        }
    }
    let n = T::of_usize(explanations.len());
    acc.iter_mut().for_each(|a| *a /= n);
    if normalize {
        let s: T = acc.iter().copied().sum();
        if s > T::zero() {
            acc.iter_mut().for_each(|a| *a /= s);
        }
    }
    Ok(acc)
}

/// CSV with `taz_id, base_value, phi_<feature>…, value_kind, seed`, followed
/// by the prediction and the standard errors.
pub fn write_explanations_csv<T: Scalar, W: Write>(
    ids: &[String],
    feature_names: &[String],
    explanations: &[ShapleyExplanation<T>],
    writer: W,
) -> Result<()> {
    if ids.len() != explanations.len() {
        return Err(Error::InvalidArgument(
            "one id per explanation is required".into(),
        ));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["taz_id".to_string(), "base_value".into()];
    header.extend(feature_names.iter().map(|f| format!("phi_{f}")));
    header.extend(["value_kind".into(), "seed".into(), "prediction".into()]);
    header.extend(feature_names.iter().map(|f| format!("se_{f}")));
    w.write_record(&header)?;
    for (id, e) in ids.iter().zip(explanations) {
        let mut rec = vec![id.clone(), e.base_value.to_string()];
        rec.extend(e.phi.iter().map(|v| v.to_string()));
        rec.extend([
            e.value_kind.as_str().to_string(),
            e.seed.to_string(),
            e.prediction.to_string(),
        ]);
        rec.extend(e.phi_se.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one_over_coalitions() {
        for d in 1..8 {
            let w = shapley_weights(d);
            let total: f64 = (0..d).map(|s| w[s] * binom(d - 1, s)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    fn binom(n: usize, k: usize) -> f64 {
        (0..k).fold(1.0, |a, i| a * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn full_coalition_is_prediction() {
        let m = FnPredictor {
            n_features: 2,
            f: |x: &[f64]| x[0] * 3.0 + x[1],
        };
        let reference = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let chain = CausalChain::singletons(&[0, 1]);
        let v = interventional_expectation(
            &m,
            &[0, 1],
            &[0.3, 0.7],
            &chain,
            &reference,
            &ShapleyConfig::default(),
        )
        .unwrap();
        assert_eq!(v, 0.3 * 3.0 + 0.7);
    }

    #[test]
    fn too_many_features() {
        let m = FnPredictor {
            n_features: 16,
            f: |_: &[f64]| 0.0,
        };
        let x = vec![0.0; 16];
        let r = vec![x.clone()];
        let chain = CausalChain::singletons(&(0..16).collect::<Vec<_>>());
        assert!(matches!(
            causal_shapley_values(&m, &x, &chain, &r, &ShapleyConfig::default()),
            Err(Error::TooManyFeatures { .. })
        ));
    }

    #[test]
    fn chain_must_partition() {
        assert!(CausalChain {
            components: vec![vec![0], vec![0]]
        }
        .validate(2)
        .is_err());
        assert!(CausalChain {
            components: vec![vec![0]]
        }
        .validate(2)
        .is_err());
        assert!(CausalChain {
            components: vec![vec![1, 0]]
        }
        .validate(2)
        .is_ok());
    }
}
