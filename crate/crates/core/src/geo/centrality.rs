//! Urban centrality index: location coefficient × proximity index.
//!
//! The proximity index normalises the Venables spatial-separation value
//! `V = ½ sᵀ D s` by `V_max`, taken here as the value obtained when all jobs
//! are split evenly between the two mutually farthest zones (`d_max / 4`).
//! Job layouts can exceed that reference, so the proximity index is clamped
//! at zero and the clamp is reported.

use serde::{Deserialize, Serialize};

use super::geometry::Point;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentralityResult<T> {
    pub location_coefficient: T,
    pub proximity_index: T,
    pub uci: T,
    pub venables: T,
    pub venables_max: T,
    /// `true` when `V > V_max` forced the proximity index to 0.
    pub proximity_clamped: bool,
    pub venables_max_method: VenablesMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VenablesMax {
    FarthestPairSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobZone<T> {
    pub centroid: Point<T>,
    pub jobs: T,
}

pub fn urban_centrality_index<T: Scalar>(zones: &[JobZone<T>]) -> Result<CentralityResult<T>> {
    let n = zones.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "centrality needs at least 2 zones, got {n}"
        )));
    }
    if zones.iter().any(|z| !(z.jobs >= T::zero())) {
        return Err(Error::InvalidArgument(
            "job counts must be nonnegative".into(),
        ));
    }
    let total: T = zones.iter().map(|z| z.jobs).sum();
    if !(total > T::zero()) {
        return Err(Error::Degenerate("no jobs in any zone".into()));
    }
    let shares: Vec<T> = zones.iter().map(|z| z.jobs / total).collect();
    let inv_n = T::one() / T::of_usize(n);
    let lc =
        shares.iter().map(|&s| (s - inv_n).abs()).sum::<T>() / (T::of(2.0) * (T::one() - inv_n));

    let mut d_max = T::zero();
    let mut venables = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = zones[i].centroid.distance_m(&zones[j].centroid);
            d_max = d_max.max(d);
            // ½ Σ_i Σ_j counts each unordered pair twice.
            venables += shares[i] * shares[j] * d;
        }
    }
    if d_max == T::zero() {
        return Err(Error::Degenerate("all zone centroids coincide".into()));
    }
    let venables_max = d_max / T::of(4.0);
    let raw_pi = T::one() - venables / venables_max;
    let proximity_clamped = raw_pi < T::zero();
    let pi = raw_pi.max(T::zero()).min(T::one());
    let lc = lc.max(T::zero()).min(T::one());
    Ok(CentralityResult {
        location_coefficient: lc,
        proximity_index: pi,
        uci: lc * pi,
        venables,
        venables_max,
        proximity_clamped,
        venables_max_method: VenablesMax::FarthestPairSplit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(jobs: impl Fn(usize) -> f64) -> Vec<JobZone<f64>> {
        (0..9)
            .map(|i| JobZone {
                centroid: Point::new((i % 3) as f64 * 1000.0, (i / 3) as f64 * 1000.0),
                jobs: jobs(i),
            })
            .collect()
    }

    #[test]
    fn single_job_zone_is_monocentric() {
        let r = urban_centrality_index(&grid(|i| if i == 4 { 100.0 } else { 0.0 })).unwrap();
        assert!((r.location_coefficient - 1.0).abs() < 1e-12);
        assert_eq!(r.venables, 0.0);
        assert!((r.uci - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_jobs_are_polycentric() {
        let r = urban_centrality_index(&grid(|_| 10.0)).unwrap();
        assert!(r.location_coefficient.abs() < 1e-12);
        assert!(r.uci.abs() < 1e-12);
    }

    #[test]
    fn two_equal_zones() {
        let d: f64 = 2500.0;
        let zones = [
            JobZone {
                centroid: Point::new(0.0, 0.0),
                jobs: 5.0,
            },
            JobZone {
                centroid: Point::new(d, 0.0),
                jobs: 5.0,
            },
        ];
        let r = urban_centrality_index(&zones).unwrap();
        // ½ sᵀ D s with s = (½, ½) evaluated by hand.
        let oracle_v: f64 = 0.5 * (0.5 * 0.5 * d + 0.5 * 0.5 * d);
        assert!((r.venables - d / 4.0).abs() < 1e-9);
        assert!((r.venables - oracle_v).abs() < 1e-9);
        assert_eq!(r.location_coefficient, 0.0);
        assert_eq!(r.proximity_index, 0.0);
        assert_eq!(r.uci, 0.0);
    }

    #[test]
    fn coincident_centroids_rejected() {
        let zones = [
            JobZone {
                centroid: Point::new(1.0, 1.0),
                jobs: 5.0,
            },
            JobZone {
                centroid: Point::new(1.0, 1.0),
                jobs: 1.0,
            },
        ];
        assert!(urban_centrality_index(&zones).is_err());
    }

    proptest! {
        #[test]
        fn uci_bounded_and_label_invariant(
            zones in proptest::collection::vec((0.0f64..1e4, 0.0f64..1e4, 0.0f64..100.0), 2..10),
            rot in 0usize..10,
        ) {
            let zs: Vec<JobZone<f64>> = zones.iter().map(|&(x, y, j)| JobZone { centroid: Point::new(x, y), jobs: j + 0.1 }).collect();
            let r = urban_centrality_index(&zs).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.uci));
            prop_assert!((r.uci - r.location_coefficient * r.proximity_index).abs() < 1e-12);
            let mut perm = zs.clone();
            perm.rotate_left(rot % zs.len());
            perm.reverse();
            let r2 = urban_centrality_index(&perm).unwrap();
            prop_assert!((r.uci - r2.uci).abs() < 1e-9);
        }
    }
}
