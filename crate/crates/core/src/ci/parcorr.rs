//! Partial correlation and its rank-robust t-test.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::{CiTestKind, CiTestOutcome};
use crate::error::{Error, Result};
use crate::matrix::DataMatrix;

/// Average ranks, 1-based; ties share the mean of their positions.
pub fn average_ranks(column: &[f64]) -> Vec<f64> {
    let n = column.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| column[a].total_cmp(&column[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && column[order[j]] == column[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean((i+1)..=j)
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Maps each value to the standard normal quantile at `(rank - 0.5) / n`.
pub fn rank_normal_transform(column: &[f64]) -> Result<Vec<f64>> {
    let n = column.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "rank-normal transform needs at least 3 observations, got {n}"
        )));
    }
    let first = column[0];
    if column.iter().all(|&v| v == first) {
        return Err(Error::Degenerate(
            "constant column cannot be rank-transformed".into(),
        ));
    }
    let normal = Normal::standard();
    let nf = n as f64;
    Ok(average_ranks(column)
        .into_iter()
        .map(|r| normal.inverse_cdf((r - 0.5) / nf))
        .collect())
}

fn pearson_centered(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Residuals of least-squares regressions of `targets` on `[1, conditioners]`.
fn residualize(targets: [&[f64]; 2], conditioners: &[&[f64]]) -> Result<[Vec<f64>; 2]> {
    let n = targets[0].len();
    let p = conditioners.len() + 1;
    let design = DMatrix::from_fn(
        n,
        p,
        |r, c| if c == 0 { 1.0 } else { conditioners[c - 1][r] },
    );
    let qr = design.qr();
    let r = qr.r();
    let scale = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..p).any(|i| r[(i, i)].abs() <= 1e-10 * scale.max(1e-300)) {
        return Err(Error::Degenerate("conditioning set is collinear".into()));
    }
    let q = qr.q();
    let resid = |t: &[f64]| {
        let y = DVector::from_column_slice(t);
        let fitted = &q * (q.transpose() * &y);
        (y - fitted).as_slice().to_vec()
    };
    Ok([resid(targets[0]), resid(targets[1])])
}

/// Pearson correlation of the residuals of `x` and `y` after regressing each
/// on `[1, Z]`; plain Pearson correlation when `z` is empty.
pub fn partial_correlation(x: usize, y: usize, z: &[usize], data: &DataMatrix) -> Result<f64> {
    partial_correlation_cols(
        data.column(x),
        data.column(y),
        &z.iter().map(|&c| data.column(c)).collect::<Vec<_>>(),
    )
}

pub(crate) fn partial_correlation_cols(x: &[f64], y: &[f64], z: &[&[f64]]) -> Result<f64> {
    let n = x.len();
    if n <= z.len() + 2 {
        return Err(Error::InvalidArgument(format!(
            "partial correlation needs n > |Z| + 2, got n = {n}, |Z| = {}",
            z.len()
        )));
    }
    if z.is_empty() {
        return Ok(pearson_centered(x, y));
    }
    let [rx, ry] = residualize([x, y], z)?;
    Ok(pearson_centered(&rx, &ry))
}

/// Two-sided p-value of `rho` under a t null with `n - |Z| - 2` degrees of freedom.
pub fn parcorr_p_value(rho: f64, n: usize, z_len: usize) -> Result<(f64, f64)> {
    let dof = n as f64 - z_len as f64 - 2.0;
    if dof <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "non-positive degrees of freedom {dof}"
        )));
    }
    let r2 = (rho * rho).min(1.0);
    if r2 >= 1.0 {
        return Ok((f64::INFINITY.copysign(rho), 0.0));
    }
    let t = rho * (dof / (1.0 - r2)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof).expect("positive dof");
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok((t, p))
}

/// Robust partial-correlation test on columns that are already rank-normal.
pub(crate) fn parcorr_test_prepared(
    columns: &[Vec<f64>],
    x: usize,
    y: usize,
    z: &[usize],
) -> Result<CiTestOutcome> {
    let zc: Vec<&[f64]> = z.iter().map(|&c| columns[c].as_slice()).collect();
    let n = columns[x].len();
    let rho = partial_correlation_cols(&columns[x], &columns[y], &zc)?;
    let (t, p) = parcorr_p_value(rho, n, z.len())?;
    Ok(CiTestOutcome {
        kind: CiTestKind::RobustParcorr,
        statistic: t,
        p_value: p,
        partial_correlation: Some(rho),
        n_effective: n,
        condition_set: z.to_vec(),
    })
}

/// Rank-normal transform of the involved columns, then the partial
/// correlation t-test.
pub fn robust_parcorr_test(
    x: usize,
    y: usize,
    z: &[usize],
    data: &DataMatrix,
) -> Result<CiTestOutcome> {
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); data.n_cols()];
    for &c in std::iter::once(&x).chain(std::iter::once(&y)).chain(z) {
        if cols[c].is_empty() {
            cols[c] = rank_normal_transform(data.column(c)).map_err(|e| Error::CiTest {
                x,
                y,
                z: z.to_vec(),
                message: e.to_string(),
            })?;
        }
    }
    parcorr_test_prepared(&cols, x, y, z).map_err(|e| Error::CiTest {
        x,
        y,
        z: z.to_vec(),
        message: e.to_string(),
    })
}
