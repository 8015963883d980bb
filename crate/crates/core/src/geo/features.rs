//! The five urban-form features computed per zone.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::geometry::{GeoPoint, Point, Polygon};
use super::network::RoadNetwork;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats;

/// Nodes closer than this are merged before counting intersections.
pub const NODE_MERGE_RADIUS_M: f64 = 1.0;
/// Minimum merged-node degree counted as an intersection.
pub const INTERSECTION_MIN_DEGREE: usize = 3;

pub fn distance_to_center_km<T: Scalar>(centroid: &Point<T>, center: &Point<T>) -> T {
    centroid.distance_m(center) / T::of(1000.0)
}

/// CRS-checked variant of [`distance_to_center_km`].
pub fn distance_to_center<T: Scalar>(centroid: &GeoPoint<T>, center: &GeoPoint<T>) -> Result<T> {
    centroid.ensure_same_crs(center)?;
    Ok(distance_to_center_km(&centroid.point, &center.point))
}

/// Distance to the nearest of several centres.
pub fn distance_to_nearest_center_km<T: Scalar>(
    centroid: &Point<T>,
    centers: &[Point<T>],
) -> Option<T> {
    centers
        .iter()
        .map(|c| distance_to_center_km(centroid, c))
        .reduce(|a, b| a.min(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmploymentSite<T> {
    pub at: Point<T>,
    pub jobs: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmploymentField<T> {
    pub sites: Vec<EmploymentSite<T>>,
}

/// How the `fraction` of jobs is chosen for the distance-to-employment feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmploymentSelector {
    /// The nearest sites holding the job mass.
    #[default]
    NearestMass,
    /// Sites visited in a seeded random order until the mass is covered.
    RandomMass { seed: u64 },
}

pub const DEFAULT_EMPLOYMENT_FRACTION: f64 = 0.01;

#[derive(Debug, Deserialize)]
struct SiteRow {
    x: f64,
    y: f64,
    jobs: f64,
}

impl<T: Scalar> EmploymentField<T> {
    pub fn total_jobs(&self) -> T {
        self.sites.iter().map(|s| s.jobs).sum()
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut sites = Vec::new();
        for (i, row) in csv::Reader::from_reader(reader)
            .deserialize::<SiteRow>()
            .enumerate()
        {
            let row = row?;
            if row.jobs < 0.0 || !row.jobs.is_finite() {
                return Err(Error::InvalidField {
                    row: i + 1,
                    column: "jobs".into(),
                    message: format!("job count {} must be nonnegative", row.jobs),
                });
            }
            sites.push(EmploymentSite {
                at: Point::new(T::of(row.x), T::of(row.y)),
                jobs: T::of(row.jobs),
            });
        }
        Ok(Self { sites })
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "y", "jobs"])?;
        for s in &self.sites {
            w.write_record([
                s.at.x.as_f64().to_string(),
                s.at.y.as_f64().to_string(),
                s.jobs.as_f64().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<employment>", e))?;
        Ok(())
    }
}

/// Job-weighted mean distance (km) from `centroid` to `fraction` of all jobs.
///
/// Sites are visited in selector order and their jobs accumulated until
/// `fraction × total` is covered; the marginal site contributes only the
/// mass still missing.
pub fn distance_to_employment_km<T: Scalar>(
    centroid: &Point<T>,
    field: &EmploymentField<T>,
    fraction: T,
    selector: EmploymentSelector,
) -> Result<T> {
    if !(fraction > T::zero() && fraction <= T::one()) {
        return Err(Error::InvalidArgument(format!(
            "employment fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let total = field.total_jobs();
    if !(total > T::zero()) {
        return Err(Error::Degenerate("employment field has no jobs".into()));
    }
    let mut order: Vec<(T, T)> = field
        .sites
        .iter()
        .filter(|s| s.jobs > T::zero())
        .map(|s| (distance_to_center_km(centroid, &s.at), s.jobs))
        .collect();
    match selector {
        EmploymentSelector::NearestMass => {
            order.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances"));
        }
        EmploymentSelector::RandomMass { seed } => {
            order.shuffle(&mut stats::rng(seed));
        }
    }
    let target = fraction * total;
    let mut covered = T::zero();
    let mut weighted = T::zero();
    for (d, jobs) in order {
        let take = jobs.min(target - covered);
        weighted += take * d;
        covered += take;
        if covered >= target {
            break;
        }
    }
    Ok(weighted / covered)
}

pub fn population_density<T: Scalar>(population: T, area_km2: T) -> Result<T> {
    per_area(population, area_km2)
}

pub fn street_connectivity<T: Scalar>(intersections: T, area_km2: T) -> Result<T> {
    per_area(intersections, area_km2)
}

fn per_area<T: Scalar>(count: T, area_km2: T) -> Result<T> {
    if !(area_km2 > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "area must be positive, got {area_km2} km²"
        )));
    }
    Ok(count / area_km2)
}

/// Merged-node representatives: nodes within [`NODE_MERGE_RADIUS_M`] of each
/// other collapse into one.
fn merge_close_nodes<T: Scalar>(network: &RoadNetwork<T>) -> Vec<usize> {
    let n = network.node_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let cell = NODE_MERGE_RADIUS_M;
    let key = |p: Point<T>| {
        (
            (p.x.as_f64() / cell).floor() as i64,
            (p.y.as_f64() / cell).floor() as i64,
        )
    };
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for i in 0..n {
        buckets
            .entry(key(network.node_coord(i)))
            .or_default()
            .push(i);
    }
    for i in 0..n {
        let p = network.node_coord(i);
        let (cx, cy) = key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(others) = buckets.get(&(cx + dx, cy + dy)) {
                    for &j in others {
                        if j > i && p.distance_m(&network.node_coord(j)).as_f64() <= cell {
                            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                            if ri != rj {
                                parent[ri.max(rj)] = ri.min(rj);
                            }
                        }
                    }
                }
            }
        }
    }
    (0..n).map(|i| find(&mut parent, i)).collect()
}

/// Number of intersections (merged nodes of degree ≥ 3) inside `polygon`.
pub fn count_intersections<T: Scalar>(network: &RoadNetwork<T>, polygon: &Polygon<T>) -> usize {
    if polygon.is_empty() {
        return 0;
    }
    let rep = merge_close_nodes(network);
    let mut neighbours: HashMap<usize, BTreeSet<usize>> = HashMap::new();
    for e in network.edges() {
        let (a, b) = (rep[e.u], rep[e.v]);
        if a != b {
            neighbours.entry(a).or_default().insert(b);
            neighbours.entry(b).or_default().insert(a);
        }
    }
    neighbours
        .iter()
        .filter(|(&node, nb)| {
            nb.len() >= INTERSECTION_MIN_DEGREE && polygon.contains(&network.node_coord(node))
        })
        .count()
}

/// The feature vector used by discovery, boosting and attribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector<T> {
    pub distance_to_center_km: T,
    pub distance_to_employment_km: T,
    pub population_density_per_km2: T,
    pub street_connectivity_per_km2: T,
    pub income: T,
}

/// Column order of [`FeatureVector::to_array`].
pub const FEATURE_NAMES: [&str; 5] = [
    "distance_to_center_km",
    "distance_to_employment_km",
    "population_density_per_km2",
    "street_connectivity_per_km2",
    "income",
];

impl<T: Scalar> FeatureVector<T> {
    pub fn to_array(&self) -> [T; 5] {
        [
            self.distance_to_center_km,
            self.distance_to_employment_km,
            self.population_density_per_km2,
            self.street_connectivity_per_km2,
            self.income,
        ]
    }

    pub fn from_array(a: [T; 5]) -> Self {
        Self {
            distance_to_center_km: a[0],
            distance_to_employment_km: a[1],
            population_density_per_km2: a[2],
            street_connectivity_per_km2: a[3],
            income: a[4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in FEATURE_NAMES.iter().zip(self.to_array()).take(4) {
            if !(v >= T::zero()) {
                return Err(Error::InvalidArgument(format!(
                    "feature {name} must be nonnegative, got {v}"
                )));
            }
        }
        if !self.income.is_finite() {
            return Err(Error::InvalidArgument("income must be finite".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::geometry::Crs;
    use crate::geo::network::{grid_network, RoadClass};
    use proptest::prelude::*;

    fn two_sites() -> EmploymentField<f64> {
        EmploymentField {
            sites: vec![
                EmploymentSite {
                    at: Point::new(1000.0, 0.0),
                    jobs: 60.0,
                },
                EmploymentSite {
                    at: Point::new(-3000.0, 0.0),
                    jobs: 40.0,
                },
            ],
        }
    }

    #[test]
    fn center_distance_examples() {
        let o = Point::new(0.0, 0.0);
        assert_eq!(distance_to_center_km(&o, &o), 0.0);
        assert_eq!(distance_to_center_km(&o, &Point::new(3000.0, 4000.0)), 5.0);
        let a = GeoPoint::new(Crs(1), 0.0, 0.0);
        let b = GeoPoint::new(Crs(2), 3.0, 4.0);
        assert!(distance_to_center(&a, &b).is_err());
    }

    #[test]
    fn employment_single_site() {
        let field: EmploymentField<f64> = EmploymentField {
            sites: vec![EmploymentSite {
                at: Point::new(0.0, 2000.0),
                jobs: 10.0,
            }],
        };
        for f in [0.01_f64, 0.3, 1.0] {
            let d = distance_to_employment_km(
                &Point::new(0.0, 0.0),
                &field,
                f,
                EmploymentSelector::NearestMass,
            )
            .unwrap();
            assert!((d - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn employment_weighted_examples() {
        let o = Point::new(0.0, 0.0);
        let d = distance_to_employment_km(&o, &two_sites(), 1.0, EmploymentSelector::NearestMass)
            .unwrap();
        assert!((d - 1.8).abs() < 1e-12);
        let d = distance_to_employment_km(&o, &two_sites(), 0.5, EmploymentSelector::NearestMass)
            .unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        // 70 jobs: 60 at 1 km + 10 at 3 km.
        let d = distance_to_employment_km(&o, &two_sites(), 0.7, EmploymentSelector::NearestMass)
            .unwrap();
        assert!((d - 90.0 / 70.0).abs() < 1e-12);
    }

    #[test]
    fn employment_errors() {
        let o = Point::new(0.0, 0.0);
        let empty = EmploymentField::<f64> { sites: vec![] };
        assert!(
            distance_to_employment_km(&o, &empty, 0.5, EmploymentSelector::NearestMass).is_err()
        );
        assert!(
            distance_to_employment_km(&o, &two_sites(), 0.0, EmploymentSelector::NearestMass)
                .is_err()
        );
    }

    #[test]
    fn random_selector_full_mass_equals_nearest() {
        let o = Point::new(0.0, 0.0);
        let a = distance_to_employment_km(
            &o,
            &two_sites(),
            1.0,
            EmploymentSelector::RandomMass { seed: 3 },
        )
        .unwrap();
        assert!((a - 1.8).abs() < 1e-12);
    }

    #[test]
    fn density_ratios() {
        assert_eq!(population_density(10000.0, 2.0).unwrap(), 5000.0);
        assert_eq!(street_connectivity(0.0, 2.0).unwrap(), 0.0);
        assert!(population_density(1.0, 0.0).is_err());
    }

    #[test]
    fn grid_intersections() {
        let net = grid_network::<f64>(3, 100.0, RoadClass::Residential);
        let cover = Polygon::rectangle(Point::new(-1.0, -1.0), Point::new(201.0, 201.0));
        assert_eq!(count_intersections(&net, &cover), 5);
        let empty = Polygon::<f64>::new(vec![]);
        assert_eq!(count_intersections(&net, &empty), 0);
    }

    #[test]
    fn duplicate_nodes_are_merged() {
        // A plus-shaped junction drawn as two nodes 0.5 m apart.
        let mut net = RoadNetwork::<f64>::new();
        net.add_node(0, Point::new(0.0, 0.0)).unwrap();
        net.add_node(1, Point::new(0.5, 0.0)).unwrap();
        net.add_node(2, Point::new(-100.0, 0.0)).unwrap();
        net.add_node(3, Point::new(100.0, 0.0)).unwrap();
        net.add_node(4, Point::new(0.0, 100.0)).unwrap();
        net.add_edge(0, 2, 100.0, RoadClass::Residential).unwrap();
        net.add_edge(0, 4, 100.0, RoadClass::Residential).unwrap();
        net.add_edge(1, 3, 100.0, RoadClass::Residential).unwrap();
        let cover = Polygon::rectangle(Point::new(-200.0, -200.0), Point::new(200.0, 200.0));
        assert_eq!(count_intersections(&net, &cover), 1);
    }

    proptest! {
        #[test]
        fn employment_distance_monotone_in_fraction(
            sites in proptest::collection::vec((-5000.0f64..5000.0, -5000.0f64..5000.0, 1.0f64..100.0), 1..12),
            f1 in 0.01f64..1.0, f2 in 0.01f64..1.0,
        ) {
            let field = EmploymentField {
                sites: sites.iter().map(|&(x, y, j)| EmploymentSite { at: Point::new(x, y), jobs: j }).collect(),
            };
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            let o = Point::new(0.0, 0.0);
            let a = distance_to_employment_km(&o, &field, lo, EmploymentSelector::NearestMass).unwrap();
            let b = distance_to_employment_km(&o, &field, hi, EmploymentSelector::NearestMass).unwrap();
            prop_assert!(a <= b + 1e-9);
        }

        #[test]
        fn planar_distance_matches_independent_formula(x1 in -1e5f64..1e5, y1 in -1e5f64..1e5, x2 in -1e5f64..1e5, y2 in -1e5f64..1e5) {
            let d = distance_to_center_km(&Point::new(x1, y1), &Point::new(x2, y2));
            let oracle: f64 = (((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt()) / 1000.0;
            prop_assert!((d - oracle).abs() <= 1e-9);
        }
    }
}
