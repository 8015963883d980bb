use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named columns of equal length; the layout the CI tests and the PC search
/// operate on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl DataMatrix {
    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::InvalidArgument(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        if let Some(first) = columns.first() {
            if let Some((i, c)) = columns
                .iter()
                .enumerate()
                .find(|(_, c)| c.len() != first.len())
            {
                return Err(Error::InvalidArgument(format!(
                    "column `{}` has {} rows, expected {}",
                    names[i],
                    c.len(),
                    first.len()
                )));
            }
        }
        if let Some((i, _)) = columns
            .iter()
            .enumerate()
            .find(|(_, c)| c.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidArgument(format!(
                "column `{}` has non-finite values",
                names[i]
            )));
        }
        Ok(Self { names, columns })
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let d = names.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); d];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::InvalidArgument(format!(
                    "row {r} has {} values, expected {d}",
                    row.len()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                columns[c].push(v);
            }
        }
        Self::from_columns(names, columns)
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[r]).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            names: cols.iter().map(|&c| self.names[c].clone()).collect(),
            columns: cols.iter().map(|&c| self.columns[c].clone()).collect(),
        }
    }

    /// Reorders columns by `perm` (new column i = old column perm[i]).
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        self.select_columns(perm)
    }

    pub fn map_columns(&self, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Self> {
        let columns = self
            .columns
            .iter()
            .map(|c| f(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            names: self.names.clone(),
            columns,
        })
    }

    pub fn vstack(parts: &[DataMatrix]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::InvalidArgument("nothing to stack".into()));
        };
        let mut columns = vec![Vec::new(); first.n_cols()];
        for p in parts {
            if p.names != first.names {
                return Err(Error::InvalidArgument(
                    "stacked matrices disagree on columns".into(),
                ));
            }
            for (dst, src) in columns.iter_mut().zip(&p.columns) {
                dst.extend_from_slice(src);
            }
        }
        Ok(Self {
            names: first.names.clone(),
            columns,
        })
    }
}
