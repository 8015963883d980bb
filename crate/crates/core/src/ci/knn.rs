//! Max-norm nearest-neighbour queries for low-dimensional point sets.
//!
//! One-dimensional sets are sorted and searched by sweeping outward from
//! the query point. Higher-dimensional sets are bucketed on a uniform grid
//! over their first two coordinates; max-norm balls are squares there, so a
//! search visits square rings of cells and stops once the next ring lies
//! beyond the current radius.

/// Max-norm neighbour index over columns of equal length.
pub(crate) enum NeighborIndex<'a> {
    Sweep(SweepIndex<'a>),
    Grid(GridIndex<'a>),
}

impl<'a> NeighborIndex<'a> {
    pub fn new(cols: Vec<&'a [f64]>) -> Self {
        if cols.len() == 1 {
            Self::Sweep(SweepIndex::new(cols))
        } else {
            Self::Grid(GridIndex::new(cols))
        }
    }

    /// The `k` nearest other points of `i` as `(distance, index)`, ascending,
    /// ties broken by index.
    pub fn nearest(&self, i: usize, k: usize) -> Vec<(f64, usize)> {
        match self {
            Self::Sweep(s) => s.nearest(i, k),
            Self::Grid(g) => g.nearest(i, k),
        }
    }

    /// Number of points (including `i` itself) strictly closer than `r`.
    pub fn count_within(&self, i: usize, r: f64) -> usize {
        match self {
            Self::Sweep(s) => s.count_within(i, r),
            Self::Grid(g) => g.count_within(i, r),
        }
    }
}

#[inline]
fn max_norm(cols: &[&[f64]], a: usize, b: usize) -> f64 {
    cols.iter().map(|c| (c[a] - c[b]).abs()).fold(0.0, f64::max)
}

/// Keeps the `k` smallest `(distance, index)` pairs in ascending order.
#[inline]
fn insert_bounded(best: &mut Vec<(f64, usize)>, k: usize, d: f64, j: usize) {
    if best.len() == k {
        if (d, j) >= best[k - 1] {
            return;
        }
        best.pop();
    }
    let at = best.partition_point(|&e| e < (d, j));
    best.insert(at, (d, j));
}

pub(crate) struct SweepIndex<'a> {
    cols: Vec<&'a [f64]>,
    order: Vec<usize>,
    pos: Vec<usize>,
    first_sorted: Vec<f64>,
}

impl<'a> SweepIndex<'a> {
    fn new(cols: Vec<&'a [f64]>) -> Self {
        let n = cols[0].len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| cols[0][a].total_cmp(&cols[0][b]).then(a.cmp(&b)));
        let mut pos = vec![0; n];
        for (p, &i) in order.iter().enumerate() {
            pos[i] = p;
        }
        let first_sorted = order.iter().map(|&i| cols[0][i]).collect();
        Self {
            cols,
            order,
            pos,
            first_sorted,
        }
    }

    #[inline]
    fn dist(&self, a: usize, b: usize) -> f64 {
        max_norm(&self.cols, a, b)
    }

    /// The `k` nearest other points of `i` as `(distance, index)`, ascending,
    /// ties broken by index.
    fn nearest(&self, i: usize, k: usize) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        let p0 = self.pos[i];
        let x0 = self.first_sorted[p0];
        let n = self.order.len();
        let (mut up, mut down) = (p0 + 1, p0);
        loop {
            let radius = if best.len() == k {
                best[k - 1].0
            } else {
                f64::INFINITY
            };
            let gap_up = if up < n {
                self.first_sorted[up] - x0
            } else {
                f64::INFINITY
            };
            let gap_down = if down > 0 {
                x0 - self.first_sorted[down - 1]
            } else {
                f64::INFINITY
            };
            if gap_up.min(gap_down) > radius || (up >= n && down == 0) {
                break;
            }
            if gap_up <= gap_down {
                let j = self.order[up];
                insert_bounded(&mut best, k, self.dist(i, j), j);
                up += 1;
            } else {
                let j = self.order[down - 1];
                insert_bounded(&mut best, k, self.dist(i, j), j);
                down -= 1;
            }
        }
        best
    }

    /// Number of points (including `i` itself) strictly closer than `r`.
    fn count_within(&self, i: usize, r: f64) -> usize {
        let p0 = self.pos[i];
        let x0 = self.first_sorted[p0];
        if self.cols.len() == 1 {
            let lo = self.first_sorted.partition_point(|&v| v <= x0 - r);
            let hi = self.first_sorted.partition_point(|&v| v < x0 + r);
            return hi - lo;
        }
        let mut count = 1;
        for p in (p0 + 1)..self.order.len() {
            if self.first_sorted[p] - x0 >= r {
                break;
            }
            if self.dist(i, self.order[p]) < r {
                count += 1;
            }
        }
        for p in (0..p0).rev() {
            if x0 - self.first_sorted[p] >= r {
                break;
            }
            if self.dist(i, self.order[p]) < r {
                count += 1;
            }
        }
        count
    }
}

/// Uniform grid over the first two coordinates, cells stored contiguously.
pub(crate) struct GridIndex<'a> {
    cols: Vec<&'a [f64]>,
    side: usize,
    lo: [f64; 2],
    width: [f64; 2],
    cell_of: Vec<[usize; 2]>,
    starts: Vec<usize>,
    members: Vec<usize>,
}

impl<'a> GridIndex<'a> {
    fn new(cols: Vec<&'a [f64]>) -> Self {
        let n = cols[0].len();
        // about three points per cell
        let side = ((n as f64 / 3.0).sqrt() as usize).max(1);
        let mut lo = [0.0; 2];
        let mut width = [1.0; 2];
        for a in 0..2 {
            let (min, max) = cols[a]
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                    (l.min(v), h.max(v))
                });
            if min.is_finite() {
                lo[a] = min;
                if max > min {
                    width[a] = (max - min) / side as f64;
                }
            }
        }
        let cell = |a: usize, v: f64| (((v - lo[a]) / width[a]) as usize).min(side - 1);
        let cell_of: Vec<[usize; 2]> = (0..n)
            .map(|i| [cell(0, cols[0][i]), cell(1, cols[1][i])])
            .collect();
        let mut starts = vec![0usize; side * side + 1];
        for c in &cell_of {
            starts[c[0] * side + c[1] + 1] += 1;
        }
        for s in 1..starts.len() {
            starts[s] += starts[s - 1];
        }
        let mut fill = starts.clone();
        let mut members = vec![0; n];
        for (i, c) in cell_of.iter().enumerate() {
            let slot = &mut fill[c[0] * side + c[1]];
            members[*slot] = i;
            *slot += 1;
        }
        Self {
            cols,
            side,
            lo,
            width,
            cell_of,
            starts,
            members,
        }
    }

    #[inline]
    fn cell(&self, cx: usize, cy: usize) -> &[usize] {
        let c = cx * self.side + cy;
        &self.members[self.starts[c]..self.starts[c + 1]]
    }

    /// Lower bound on the distance from `i` to any point outside the square
    /// of cells within ring `r` of its own cell.
    fn ring_clearance(&self, i: usize, r: usize) -> f64 {
        let mut clear = f64::INFINITY;
        for a in 0..2 {
            let c = self.cell_of[i][a];
            let v = self.cols[a][i];
            if c > r {
                clear = clear.min(v - (self.lo[a] + (c - r) as f64 * self.width[a]));
            }
            if c + r + 1 < self.side {
                clear = clear.min(self.lo[a] + (c + r + 1) as f64 * self.width[a] - v);
            }
        }
        // slack for rounding in the cell assignment
        clear - 1e-9 * self.width[0].max(self.width[1])
    }

    fn nearest(&self, i: usize, k: usize) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        let [cx, cy] = self.cell_of[i];
        for r in 0..self.side {
            let (x0, x1) = (cx.saturating_sub(r), (cx + r).min(self.side - 1));
            let (y0, y1) = (cy.saturating_sub(r), (cy + r).min(self.side - 1));
            for gx in x0..=x1 {
                for gy in y0..=y1 {
                    if gx.abs_diff(cx).max(gy.abs_diff(cy)) != r {
                        continue;
                    }
                    for &j in self.cell(gx, gy) {
                        if j != i {
                            insert_bounded(&mut best, k, max_norm(&self.cols, i, j), j);
                        }
                    }
                }
            }
            if best.len() == k && best[k - 1].0 < self.ring_clearance(i, r) {
                break;
            }
        }
        best
    }

    fn count_within(&self, i: usize, r: f64) -> usize {
        let range = |a: usize| {
            let v = self.cols[a][i];
            let lo = ((v - r - self.lo[a]) / self.width[a]).floor().max(0.0) as usize;
            let hi = ((v + r - self.lo[a]) / self.width[a]).floor().max(0.0) as usize;
            (lo.saturating_sub(1), (hi + 1).min(self.side - 1))
        };
        let (x0, x1) = range(0);
        let (y0, y1) = range(1);
        let mut count = 0;
        for gx in x0..=x1 {
            for gy in y0..=y1 {
                count += self
                    .cell(gx, gy)
                    .iter()
                    .filter(|&&j| max_norm(&self.cols, i, j) < r)
                    .count();
            }
        }
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use rand::Rng as _;

    fn brute_nearest(cols: &[Vec<f64>], i: usize, k: usize) -> Vec<(f64, usize)> {
        let n = cols[0].len();
        let mut all: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                (
                    cols.iter().map(|c| (c[i] - c[j]).abs()).fold(0.0, f64::max),
                    j,
                )
            })
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all.truncate(k);
        all
    }

    #[test]
    fn sweep_matches_brute_force() {
        let mut r = stats::rng(1);
        for dims in 1..=4 {
            let cols: Vec<Vec<f64>> = (0..dims)
                .map(|_| (0..300).map(|_| r.random::<f64>()).collect())
                .collect();
            let idx = NeighborIndex::new(cols.iter().map(|c| c.as_slice()).collect());
            for i in (0..300).step_by(17) {
                let got = idx.nearest(i, 7);
                assert_eq!(got, brute_nearest(&cols, i, 7));
                let radius = got[6].0;
                let brute_count = (0..300)
                    .filter(|&j| {
                        cols.iter().map(|c| (c[i] - c[j]).abs()).fold(0.0, f64::max) < radius
                    })
                    .count();
                assert_eq!(idx.count_within(i, radius), brute_count);
            }
        }
    }

    #[test]
    fn grid_matches_brute_force_on_skewed_data_with_ties() {
        let mut r = stats::rng(2);
        for dims in 2..=3 {
            let cols: Vec<Vec<f64>> = (0..dims)
                .map(|_| {
                    (0..400)
                        .map(|_| (r.random::<f64>().powi(4) * 50.0).round() / 50.0)
                        .collect()
                })
                .collect();
            let idx = NeighborIndex::new(cols.iter().map(|c| c.as_slice()).collect());
            for i in 0..400 {
                for k in [1, 25] {
                    let got = idx.nearest(i, k);
                    assert_eq!(
                        got,
                        brute_nearest(&cols, i, k),
                        "dims {dims} point {i} k {k}"
                    );
                    let radius = got[k - 1].0 + 0.01;
                    let brute_count = (0..400)
                        .filter(|&j| {
                            cols.iter().map(|c| (c[i] - c[j]).abs()).fold(0.0, f64::max) < radius
                        })
                        .count();
                    assert_eq!(idx.count_within(i, radius), brute_count);
                }
            }
        }
    }
}
