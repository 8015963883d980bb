//! Gradient-boosted regression trees with squared loss and exact greedy
//! splits.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{CityDataset, CityScaler};
use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node<T> {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
    Leaf {
        value: T,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree<T> {
    pub nodes: Vec<Node<T>>,
    pub max_depth: usize,
}

impl<T: Scalar> RegressionTree<T> {
    pub fn predict(&self, x: &[T]) -> T {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn rec<T>(nodes: &[Node<T>], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + rec(nodes, *left).max(rec(nodes, *right)),
            }
        }
        rec(&self.nodes, 0)
    }

    /// Features used by any split.
    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub min_gain: f64,
    /// Recorded for provenance; exact greedy fitting draws no random numbers.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_trees: 300,
            max_depth: 4,
            learning_rate: 0.05,
            min_samples_leaf: 5,
            min_gain: 1e-7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::InvalidArgument(
                "max_depth and min_samples_leaf must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if self.min_gain.is_nan() || self.min_gain < 0.0 {
            return Err(Error::InvalidArgument(
                "min_gain must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel<T> {
    pub base_score: T,
    pub learning_rate: T,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub trees: Vec<RegressionTree<T>>,
    pub config: TrainConfig,
    /// Mean squared training error before the first tree and after each tree.
    pub training_loss: Vec<f64>,
}

impl<T: Scalar> GbdtModel<T> {
    pub fn predict(&self, x: &[T]) -> Result<T> {
        if x.len() != self.n_features {
            return Err(Error::ArityMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[T]) -> T {
        let s: T = self.trees.iter().map(|t| t.predict(x)).sum();
        self.base_score + self.learning_rate * s
    }

    pub fn predict_rows(&self, rows: &[Vec<T>]) -> Result<Vec<T>> {
        rows.iter().map(|r| self.predict(r)).collect()
    }

    /// Features used by at least one split.
    pub fn used_features(&self) -> std::collections::BTreeSet<usize> {
        self.trees.iter().flat_map(|t| t.split_features()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

struct Candidate<T> {
    gain: T,
    feature: usize,
    threshold: T,
    /// Position in the node's sorted order where the right side starts.
    cut: usize,
}

struct Builder<'a, T> {
    columns: &'a [Vec<T>],
    residual: &'a [T],
    config: &'a TrainConfig,
    min_gain: T,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Builder<'_, T> {
    fn best_split(&self, sorted: &[Vec<usize>]) -> Option<Candidate<T>> {
        let n = sorted[0].len();
        let leaf = self.config.min_samples_leaf;
        if n < 2 * leaf {
            return None;
        }
        let total: T = sorted[0].iter().map(|&i| self.residual[i]).sum();
        let n_t = T::of_usize(n);
        let parent = total * total / n_t;
        let mut best: Option<Candidate<T>> = None;
        for (f, order) in sorted.iter().enumerate() {
            let col = &self.columns[f];
            let mut left = T::zero();
            for k in 0..n - 1 {
                left += self.residual[order[k]];
                let nl = k + 1;
                if nl < leaf || n - nl < leaf {
                    continue;
                }
                let (a, b) = (col[order[k]], col[order[k + 1]]);
                if !(a < b) {
                    continue;
                }
                let right = total - left;
                let gain =
                    left * left / T::of_usize(nl) + right * right / T::of_usize(n - nl) - parent;
                if !(gain > self.min_gain) {
                    continue;
                }
                if best.as_ref().is_none_or(|c| gain > c.gain) {
                    let mid = (a + b) / T::of(2.0);
                    let threshold = if mid < b { mid } else { a };
                    best = Some(Candidate {
                        gain,
                        feature: f,
                        threshold,
                        cut: nl,
                    });
                }
            }
        }
        best
    }

    fn leaf_value(&self, rows: &[usize]) -> T {
        let s: T = rows.iter().map(|&i| self.residual[i]).sum();
        s / T::of_usize(rows.len())
    }

    /// `sorted[f]` lists the node's rows ordered by feature `f`.
    fn build(&mut self, sorted: Vec<Vec<usize>>, depth: usize) -> usize {
        let id = self.nodes.len();
        let split = if depth < self.config.max_depth {
            self.best_split(&sorted)
        } else {
            None
        };
        let Some(c) = split else {
            let value = self.leaf_value(&sorted[0]);
            self.nodes.push(Node::Leaf { value });
            return id;
        };
        self.nodes.push(Node::Leaf { value: T::zero() });
        let col = &self.columns[c.feature];
        let mut goes_left = vec![false; self.residual.len()];
        for &i in &sorted[c.feature][..c.cut] {
            goes_left[i] = true;
        }
        let (mut ls, mut rs) = (
            Vec::with_capacity(sorted.len()),
            Vec::with_capacity(sorted.len()),
        );
        for order in &sorted {
            let (l, r): (Vec<usize>, Vec<usize>) = order.iter().partition(|&&i| goes_left[i]);
            ls.push(l);
            rs.push(r);
        }
        debug_assert!(ls[c.feature].iter().all(|&i| col[i] <= c.threshold));
        let left = self.build(ls, depth + 1);
        let right = self.build(rs, depth + 1);
        self.nodes[id] = Node::Split {
            feature: c.feature,
            threshold: c.threshold,
            left,
            right,
        };
        id
    }
}

fn mse<T: Scalar>(y: &[T], pred: &[T]) -> f64 {
    y.iter()
        .zip(pred)
        .map(|(a, b)| {
            let d = (*a - *b).as_f64();
            d * d
        })
        .sum::<f64>()
        / y.len() as f64
}

/// Fits a boosted ensemble on column-major features.
pub fn fit<T: Scalar>(
    columns: &[Vec<T>],
    target: &[T],
    config: &TrainConfig,
) -> Result<GbdtModel<T>> {
    fit_named(
        columns,
        target,
        config,
        (0..columns.len()).map(|i| format!("f{i}")).collect(),
    )
}

pub fn fit_named<T: Scalar>(
    columns: &[Vec<T>],
    target: &[T],
    config: &TrainConfig,
    feature_names: Vec<String>,
) -> Result<GbdtModel<T>> {
    config.validate()?;
    let n = target.len();
    if n == 0 || columns.is_empty() {
        return Err(Error::InvalidArgument("empty training data".into()));
    }
    if feature_names.len() != columns.len() {
        return Err(Error::InvalidArgument(
            "one name per feature column is required".into(),
        ));
    }
    if let Some(c) = columns.iter().find(|c| c.len() != n) {
        return Err(Error::InvalidArgument(format!(
            "feature column has {} rows, target has {n}",
            c.len()
        )));
    }
    if n < 2 * config.min_samples_leaf {
        return Err(Error::InsufficientRows {
            city: "training set".into(),
            available: n,
            required: 2 * config.min_samples_leaf,
        });
    }
    if columns
        .iter()
        .flatten()
        .chain(target)
        .any(|v| !v.is_finite())
    {
        return Err(Error::InvalidArgument(
            "training data must be finite".into(),
        ));
    }
    let base_score = target.iter().copied().sum::<T>() / T::of_usize(n);
    let lr = T::of(config.learning_rate);
    let min_gain = if config.min_gain.is_infinite() {
        T::infinity()
    } else {
        T::of(config.min_gain)
    };
    let sorted: Vec<Vec<usize>> = columns
        .iter()
        .map(|c| {
            let mut o: Vec<usize> = (0..n).collect();
            o.sort_by(|&a, &b| c[a].partial_cmp(&c[b]).expect("finite").then(a.cmp(&b)));
            o
        })
        .collect();
    let mut pred = vec![base_score; n];
    let mut residual = vec![T::zero(); n];
    let mut trees = Vec::with_capacity(config.n_trees);
    let mut training_loss = vec![mse(target, &pred)];
    for _ in 0..config.n_trees {
        for i in 0..n {
            residual[i] = target[i] - pred[i];
        }
        let mut b = Builder {
            columns,
            residual: &residual,
            config,
            min_gain,
            nodes: Vec::new(),
        };
        b.build(sorted.clone(), 0);
        let tree = RegressionTree {
            nodes: b.nodes,
            max_depth: config.max_depth,
        };
        let mut row = vec![T::zero(); columns.len()];
        for i in 0..n {
            for (f, c) in columns.iter().enumerate() {
                row[f] = c[i];
            }
            pred[i] += lr * tree.predict(&row);
        }
        training_loss.push(mse(target, &pred));
        trees.push(tree);
    }
    Ok(GbdtModel {
        base_score,
        learning_rate: lr,
        n_features: columns.len(),
        feature_names,
        trees,
        config: config.clone(),
        training_loss,
    })
}

/// Fits on named columns of a [`DataMatrix`].
pub fn fit_matrix(
    data: &DataMatrix,
    features: &[String],
    target: &str,
    config: &TrainConfig,
) -> Result<GbdtModel<f64>> {
    let col = |name: &str| {
        data.index_of(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown column `{name}`")))
    };
    let cols = features
        .iter()
        .map(|f| col(f).map(|i| data.column(i).to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let y = data.column(col(target)?);
    fit_named(&cols, y, config, features.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub r2: f64,
    pub mae: f64,
    pub rmse: f64,
}

/// R² about the mean of `truth`, MAE and RMSE.
pub fn regression_metrics(truth: &[f64], pred: &[f64]) -> RegressionMetrics {
    let n = truth.len() as f64;
    let m = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|y| (y - m) * (y - m)).sum();
    let ss_res: f64 = truth.iter().zip(pred).map(|(y, p)| (y - p) * (y - p)).sum();
    let mae = truth
        .iter()
        .zip(pred)
        .map(|(y, p)| (y - p).abs())
        .sum::<f64>()
        / n;
    RegressionMetrics {
        r2: 1.0 - ss_res / ss_tot,
        mae,
        rmse: (ss_res / n).sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityFoldResult {
    pub city: String,
    pub n: usize,
    pub r2_train: f64,
    pub r2: f64,
    pub mae: f64,
    pub rmse: f64,
    pub mean_vkt: f64,
    /// Sample standard deviation of the held-out target.
    pub sd_vkt: f64,
}

/// Leave-one-city-out evaluation. Features are standardized within each
/// city; the target stays in its own units.
pub fn citywise_cross_validation(
    cities: &[CityDataset],
    features: &[String],
    target: &str,
    config: &TrainConfig,
) -> Result<Vec<CityFoldResult>> {
    if cities.len() < 2 {
        return Err(Error::InvalidArgument(
            "cross-validation needs at least two cities".into(),
        ));
    }
    let mut prepared = Vec::with_capacity(cities.len());
    for c in cities {
        if c.len() < 5 {
            return Err(Error::InsufficientRows {
                city: c.city.clone(),
                available: c.len(),
                required: 5,
            });
        }
        let idx = |name: &str| {
            c.data.index_of(name).ok_or_else(|| {
                Error::InvalidArgument(format!("city `{}` lacks column `{name}`", c.city))
            })
        };
        let fcols = features
            .iter()
            .map(|f| idx(f))
            .collect::<Result<Vec<_>>>()?;
        let x = c.data.select_columns(&fcols);
        let xs = CityScaler::fit(&c.city, &x)?.transform(&x)?;
        prepared.push((xs, c.data.column(idx(target)?).to_vec()));
    }
    let mut out = Vec::with_capacity(cities.len());
    for (k, c) in cities.iter().enumerate() {
        let mut cols = vec![Vec::new(); features.len()];
        let mut y = Vec::new();
        for (j, (x, t)) in prepared.iter().enumerate() {
            if j == k {
                continue;
            }
            for (f, col) in cols.iter_mut().enumerate() {
                col.extend_from_slice(x.column(f));
            }
            y.extend_from_slice(t);
        }
        let model = fit_named(&cols, &y, config, features.to_vec())?;
        let train_pred: Vec<f64> = (0..y.len())
            .map(|i| model.predict_unchecked(&cols.iter().map(|c| c[i]).collect::<Vec<_>>()))
            .collect();
        let (xh, yh) = &prepared[k];
        let pred: Vec<f64> = (0..yh.len())
            .map(|i| model.predict_unchecked(&xh.row(i)))
            .collect();
        let m = regression_metrics(yh, &pred);
        let mean = yh.iter().sum::<f64>() / yh.len() as f64;
        let sd = (yh.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (yh.len() - 1) as f64)
            .sqrt();
        out.push(CityFoldResult {
            city: c.city.clone(),
            n: yh.len(),
            r2_train: regression_metrics(&y, &train_pred).r2,
            r2: m.r2,
            mae: m.mae,
            rmse: m.rmse,
            mean_vkt: mean,
            sd_vkt: sd,
        });
    }
    Ok(out)
}

pub fn write_metrics_csv<W: Write>(rows: &[CityFoldResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_target_gives_constant_model() {
        let x = vec![(0..50).map(f64::from).collect::<Vec<_>>()];
        let y = vec![3.5; 50];
        let m = fit(&x, &y, &TrainConfig::default()).unwrap();
        for v in [-10.0, 0.0, 17.0, 99.0] {
            assert_eq!(m.predict(&[v]).unwrap(), 3.5);
        }
        assert!(m.used_features().is_empty());
    }

    #[test]
    fn single_stump_prediction() {
        let x = vec![(0..20).map(f64::from).collect::<Vec<_>>()];
        let y: Vec<f64> = (0..20).map(|i| if i < 10 { 0.0 } else { 2.0 }).collect();
        let cfg = TrainConfig {
            n_trees: 1,
            max_depth: 1,
            learning_rate: 0.5,
            ..Default::default()
        };
        let m = fit(&x, &y, &cfg).unwrap();
        assert_eq!(
            m.trees[0].nodes[0],
            Node::Split {
                feature: 0,
                threshold: 9.5,
                left: 1,
                right: 2
            }
        );
        assert_eq!(m.predict(&[3.0]).unwrap(), 1.0 + 0.5 * -1.0);
        assert!(matches!(
            m.predict(&[1.0, 2.0]),
            Err(Error::ArityMismatch { .. })
        ));
    }

    #[test]
    fn tie_breaks_to_lowest_feature() {
        let a: Vec<f64> = (0..20).map(f64::from).collect();
        let x = vec![a.clone(), a];
        let y: Vec<f64> = (0..20).map(|i| f64::from(i >= 10)).collect();
        let cfg = TrainConfig {
            n_trees: 1,
            max_depth: 1,
            ..Default::default()
        };
        let m = fit(&x, &y, &cfg).unwrap();
        assert!(matches!(
            m.trees[0].nodes[0],
            Node::Split { feature: 0, .. }
        ));
    }

    #[test]
    fn infinite_min_gain_is_constant() {
        let x = vec![(0..40).map(f64::from).collect::<Vec<_>>()];
        let y: Vec<f64> = (0..40).map(f64::from).collect();
        let cfg = TrainConfig {
            min_gain: f64::INFINITY,
            ..Default::default()
        };
        let m = fit(&x, &y, &cfg).unwrap();
        assert_eq!(m.predict(&[0.0]).unwrap(), m.base_score);
        assert_eq!(m.predict(&[39.0]).unwrap(), m.base_score);
    }

    #[test]
    fn f32_models_work() {
        let x = vec![(0..40).map(|i| i as f32).collect::<Vec<_>>()];
        let y: Vec<f32> = (0..40).map(|i| if i > 20 { 1.0 } else { 0.0 }).collect();
        let m = fit(&x, &y, &TrainConfig::default()).unwrap();
        assert!(m.predict(&[30.0]).unwrap() > 0.9);
        let back: GbdtModel<f32> = GbdtModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn metrics_baselines() {
        let t = [1.0, 2.0, 3.0];
        let m = regression_metrics(&t, &[2.0, 2.0, 2.0]);
        assert_eq!(m.r2, 0.0);
        let p = regression_metrics(&t, &t);
        assert_eq!((p.r2, p.mae, p.rmse), (1.0, 0.0, 0.0));
    }
}
