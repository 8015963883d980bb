//! Conditional independence tests: a rank-based partial correlation and a
//! nearest-neighbour conditional mutual information permutation test.

pub mod cmiknn;
pub(crate) mod knn;
pub mod parcorr;

use serde::{Deserialize, Serialize};

pub use cmiknn::{cmi_estimate, cmiknn_test};
pub use parcorr::{
    average_ranks, parcorr_p_value, partial_correlation, rank_normal_transform, robust_parcorr_test,
};

use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiTestKind {
    RobustParcorr,
    Cmiknn,
}

impl CiTestKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "robust_parcorr" | "parcorr" => Some(Self::RobustParcorr),
            "cmiknn" | "cmi_knn" => Some(Self::Cmiknn),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CiTestConfig {
    pub kind: CiTestKind,
    pub alpha: f64,
    pub knn_k: usize,
    pub n_permutations: usize,
    pub perm_neighbors: usize,
    pub seed: u64,
}

impl Default for CiTestConfig {
    fn default() -> Self {
        Self {
            kind: CiTestKind::RobustParcorr,
            alpha: 0.025,
            knn_k: 10,
            n_permutations: 500,
            perm_neighbors: 5,
            seed: 0,
        }
    }
}

impl CiTestConfig {
    pub fn robust_parcorr() -> Self {
        Self::default()
    }

    pub fn cmiknn() -> Self {
        Self {
            kind: CiTestKind::Cmiknn,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha {} outside (0, 1)",
                self.alpha
            )));
        }
        if self.kind == CiTestKind::Cmiknn && (self.knn_k == 0 || self.perm_neighbors == 0) {
            return Err(Error::InvalidArgument(
                "knn_k and perm_neighbors must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiTestOutcome {
    pub kind: CiTestKind,
    pub statistic: f64,
    pub p_value: f64,
    pub partial_correlation: Option<f64>,
    pub n_effective: usize,
    pub condition_set: Vec<usize>,
}

impl CiTestOutcome {
    pub fn independent(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }

    /// Signed dependence strength: the partial correlation when available,
    /// otherwise the test statistic.
    pub fn strength(&self) -> f64 {
        self.partial_correlation.unwrap_or(self.statistic)
    }
}

/// Seed for one test, independent of the order tests are run in and of the
/// order of `x`, `y` and the conditioning set.
pub(crate) fn test_seed(seed: u64, x: usize, y: usize, z: &[usize]) -> u64 {
    let (a, b) = if x < y { (x, y) } else { (y, x) };
    let mut zs = z.to_vec();
    zs.sort_unstable();
    let mut s = stats::derive_seed(seed, 0x9e37_79b9);
    for v in [a, b].into_iter().chain([usize::MAX]).chain(zs) {
        s = stats::derive_seed(s, v as u64);
    }
    s
}

/// Transforms every column once, then serves tests on arbitrary triples.
#[derive(Debug, Clone)]
pub struct CiEngine {
    config: CiTestConfig,
    columns: Vec<Vec<f64>>,
}

impl CiEngine {
    pub fn new(data: &DataMatrix, config: CiTestConfig) -> Result<Self> {
        config.validate()?;
        let columns = (0..data.n_cols())
            .map(|c| match config.kind {
                CiTestKind::RobustParcorr => rank_normal_transform(data.column(c)).map_err(|e| {
                    Error::InvalidArgument(format!("column `{}`: {e}", data.names()[c]))
                }),
                CiTestKind::Cmiknn => Ok(cmiknn::rank_uniform_jittered(
                    data.column(c),
                    stats::derive_seed(config.seed, c as u64),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, columns })
    }

    pub fn config(&self) -> &CiTestConfig {
        &self.config
    }

    pub fn n_vars(&self) -> usize {
        self.columns.len()
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn test(&self, x: usize, y: usize, z: &[usize]) -> Result<CiTestOutcome> {
        let d = self.n_vars();
        if x == y || x >= d || y >= d || z.iter().any(|&c| c >= d || c == x || c == y) {
            return Err(Error::CiTest {
                x,
                y,
                z: z.to_vec(),
                message: "invalid variable indices".into(),
            });
        }
        let wrap = |e: Error| match e {
            e @ Error::CiTest { .. } => e,
            e => Error::CiTest {
                x,
                y,
                z: z.to_vec(),
                message: e.to_string(),
            },
        };
        match self.config.kind {
            CiTestKind::RobustParcorr => {
                parcorr::parcorr_test_prepared(&self.columns, x, y, z).map_err(wrap)
            }
            CiTestKind::Cmiknn => cmiknn::cmiknn_test_prepared(
                &self.columns,
                x,
                y,
                z,
                &self.config,
                test_seed(self.config.seed, x, y, z),
            )
            .map_err(wrap),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_seed_ignores_argument_order() {
        assert_eq!(test_seed(7, 1, 3, &[4, 2]), test_seed(7, 3, 1, &[2, 4]));
        assert_ne!(test_seed(7, 1, 3, &[4]), test_seed(7, 1, 3, &[2]));
        assert_ne!(test_seed(7, 1, 3, &[]), test_seed(8, 1, 3, &[]));
    }

    #[test]
    fn engine_rejects_overlapping_indices() {
        let d = DataMatrix::from_columns(
            vec!["a".into(), "b".into(), "c".into()],
            vec![
                (0..20).map(f64::from).collect(),
                (0..20).map(|i| f64::from(i * i % 7)).collect(),
                (0..20).map(|i| f64::from(i % 5)).collect(),
            ],
        )
        .unwrap();
        let e = CiEngine::new(&d, CiTestConfig::default()).unwrap();
        assert!(e.test(0, 0, &[]).is_err());
        assert!(e.test(0, 1, &[1]).is_err());
        assert!(e.test(0, 1, &[2]).is_ok());
    }

    #[test]
    fn kind_parses() {
        assert_eq!(CiTestKind::parse("CMIknn"), Some(CiTestKind::Cmiknn));
        assert_eq!(
            CiTestKind::parse("robust-parcorr"),
            Some(CiTestKind::RobustParcorr)
        );
        assert_eq!(CiTestKind::parse("gsq"), None);
    }
}
