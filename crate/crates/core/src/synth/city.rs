//! Geometric synthetic city: a square grid of TAZ cells with local street
//! lattices, a population surface decaying from the center, a job surface
//! whose concentration follows the monocentricity parameter, and
//! gravity-style origin-destination demand. Trip distances come from the
//! same endpoint sampling and shortest-path code used on real inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_taz_csv, zones_geojson, TazRecord};
use crate::error::{Error, Result};
use crate::geo::features::{EmploymentField, EmploymentSite};
use crate::geo::{
    mean_vkt_per_taz, sample_trip_endpoints, JobZone, OdDemand, Point, Polygon, RoadClass,
    RoadNetwork, TimeWindow, TripDistance,
};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondaryCluster {
    pub radius_km: f64,
    pub angle_deg: f64,
    /// Fraction of the concentrated jobs placed in the secondary cluster.
    pub share: f64,
    /// Standard deviation of the cluster's Gaussian job kernel.
    #[serde(default = "default_cluster_width")]
    pub width_km: f64,
}

fn default_cluster_width() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CityConfig {
    pub name: String,
    /// Cells per side; the city has `grid²` TAZ.
    pub grid: usize,
    pub cell_km: f64,
    /// 0 spreads jobs evenly over all TAZ, 1 puts them in the central cell.
    pub monocentricity: f64,
    pub secondary_cluster: Option<SecondaryCluster>,
    pub trips_per_taz: u32,
    /// Residents per km² at the center before noise.
    pub peak_density: f64,
    pub density_decay_km: f64,
    /// Log-scale spread of the density noise.
    pub density_noise: f64,
    /// Gravity distance scale (km) for a TAZ at the median density.
    pub trip_length_km: f64,
    /// Exponent linking lower origin density to longer trips.
    pub density_elasticity: f64,
    /// Weight of residents (local services) next to jobs in destination
    /// attractiveness.
    pub service_weight: f64,
    pub seed: u64,
}

impl Default for CityConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            grid: 17,
            cell_km: 2.5,
            monocentricity: 0.8,
            secondary_cluster: None,
            trips_per_taz: 30,
            peak_density: 8000.0,
            density_decay_km: 8.0,
            density_noise: 0.6,
            trip_length_km: 4.0,
            density_elasticity: 0.6,
            service_weight: 0.5,
            seed: 0,
        }
    }
}

impl CityConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.grid < 2 {
            return bad(format!("grid {} gives fewer than 4 TAZ", self.grid));
        }
        if self.grid > 60 {
            return bad(format!("grid {} exceeds 60 cells per side", self.grid));
        }
        if !(0.0..=1.0).contains(&self.monocentricity) {
            return bad(format!(
                "monocentricity {} outside [0, 1]",
                self.monocentricity
            ));
        }
        for (name, v) in [
            ("cell_km", self.cell_km),
            ("peak_density", self.peak_density),
            ("density_decay_km", self.density_decay_km),
            ("trip_length_km", self.trip_length_km),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("density_noise", self.density_noise),
            ("density_elasticity", self.density_elasticity),
            ("service_weight", self.service_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if self.trips_per_taz == 0 {
            return bad("trips_per_taz must be positive".into());
        }
        if let Some(s) = &self.secondary_cluster {
            let half = self.grid as f64 * self.cell_km / 2.0;
            if !(s.radius_km > 0.0 && s.radius_km < half) {
                return bad(format!(
                    "secondary cluster radius {} km lies outside the city",
                    s.radius_km
                ));
            }
            if !(s.width_km > 0.0 && s.width_km.is_finite()) {
                return bad(format!(
                    "secondary cluster width {} km must be positive",
                    s.width_km
                ));
            }
            if !(s.share > 0.0 && s.share < 1.0) {
                return bad(format!(
                    "secondary cluster share {} outside (0, 1)",
                    s.share
                ));
            }
        }
        Ok(())
    }

    pub fn n_taz(&self) -> usize {
        self.grid * self.grid
    }
}

/// One sampled trip with its routed distance and destination point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub origin_taz: String,
    pub destination_taz: String,
    pub departure_minute: u32,
    pub distance_km: f64,
    pub dest_x: f64,
    pub dest_y: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticCity {
    pub config: CityConfig,
    pub center: Point<f64>,
    pub network: RoadNetwork<f64>,
    pub zones: BTreeMap<String, Polygon<f64>>,
    pub records: Vec<TazRecord>,
    pub employment: EmploymentField<f64>,
    pub od: Vec<OdDemand>,
    pub trips: Vec<TripRecord>,
}

/// Metadata written next to the city files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityMeta {
    pub config: CityConfig,
    pub center_x: f64,
    pub center_y: f64,
    pub files: BTreeMap<String, String>,
}

impl SyntheticCity {
    pub fn job_zones(&self) -> Vec<JobZone<f64>> {
        self.records
            .iter()
            .map(|r| JobZone {
                centroid: r.centroid(),
                jobs: r.jobs,
            })
            .collect()
    }

    /// Writes the ingestion formats into `dir` and returns the metadata.
    pub fn write(&self, dir: &Path) -> Result<CityMeta> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = |f: &str| -> PathBuf { dir.join(f) };
        let create = |f: &str| fs::File::create(path(f)).map_err(|e| Error::io(path(f), e));
        write_taz_csv(&self.records, create("taz.csv")?)?;
        let zones = serde_json::to_string_pretty(&zones_geojson(&self.zones))?;
        fs::write(path("zones.geojson"), zones).map_err(|e| Error::io(path("zones.geojson"), e))?;
        self.network
            .write_csv(create("network_nodes.csv")?, create("network_edges.csv")?)?;
        self.employment.write_csv(create("employment.csv")?)?;
        crate::geo::sampling::write_od_csv(create("od.csv")?, &self.od)?;
        let mut w = csv::Writer::from_writer(create("trips.csv")?);
        for t in &self.trips {
            w.serialize(t)?;
        }
        w.flush().map_err(|e| Error::io(path("trips.csv"), e))?;
        let files: BTreeMap<String, String> = [
            ("taz", "taz.csv"),
            ("zones", "zones.geojson"),
            ("network_nodes", "network_nodes.csv"),
            ("network_edges", "network_edges.csv"),
            ("employment", "employment.csv"),
            ("od", "od.csv"),
            ("trips", "trips.csv"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let meta = CityMeta {
            config: self.config.clone(),
            center_x: self.center.x,
            center_y: self.center.y,
            files,
        };
        fs::write(path("city.json"), serde_json::to_string_pretty(&meta)?)
            .map_err(|e| Error::io(path("city.json"), e))?;
        Ok(meta)
    }
}

pub fn read_trips_csv<R: std::io::Read>(reader: R) -> Result<Vec<TripRecord>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Street lattice lines per side for a cell: 3, 5 or 7.
fn lattice_size(rank_fraction: f64, u: f64) -> usize {
    let score = (0.7 * rank_fraction + 0.3 * u).clamp(0.0, 0.999);
    3 + 2 * (score * 3.0) as usize
}

fn build_network(cfg: &CityConfig, lines: &[usize]) -> Result<RoadNetwork<f64>> {
    let g = cfg.grid;
    let c = cfg.cell_km * 1000.0;
    let mut net = RoadNetwork::new();
    // node index of lattice point (a, b) in cell k
    let mut index: Vec<Vec<usize>> = Vec::with_capacity(g * g);
    for row in 0..g {
        for col in 0..g {
            let k = row * g + col;
            let m = lines[k];
            let (x0, y0) = (col as f64 * c, row as f64 * c);
            let mut ids = Vec::with_capacity(m * m);
            for a in 0..m {
                for b in 0..m {
                    let at = Point::new(
                        x0 + (b as f64 + 0.5) * c / m as f64,
                        y0 + (a as f64 + 0.5) * c / m as f64,
                    );
                    ids.push(net.add_node((k * 64 + a * m + b) as u64, at)?);
                }
            }
            let step = c / m as f64;
            for a in 0..m {
                for b in 0..m {
                    if b + 1 < m {
                        net.add_edge(
                            ids[a * m + b],
                            ids[a * m + b + 1],
                            step,
                            RoadClass::Residential,
                        )?;
                    }
                    if a + 1 < m {
                        net.add_edge(
                            ids[a * m + b],
                            ids[(a + 1) * m + b],
                            step,
                            RoadClass::Residential,
                        )?;
                    }
                }
            }
            index.push(ids);
        }
    }
    // tertiary connectors along the center lines of adjacent cells
    for row in 0..g {
        for col in 0..g {
            let k = row * g + col;
            let m = lines[k];
            let mid = m / 2;
            if col + 1 < g {
                let (k2, m2) = (k + 1, lines[k + 1]);
                let a = index[k][mid * m + (m - 1)];
                let b = index[k2][(m2 / 2) * m2];
                let len = net.node_coord(a).distance_m(&net.node_coord(b));
                net.add_edge(a, b, len, RoadClass::Tertiary)?;
            }
            if row + 1 < g {
                let (k2, m2) = (k + g, lines[k + g]);
                let a = index[k][(m - 1) * m + mid];
                let b = index[k2][m2 / 2];
                let len = net.node_coord(a).distance_m(&net.node_coord(b));
                net.add_edge(a, b, len, RoadClass::Tertiary)?;
            }
        }
    }
    Ok(net)
}

/// Job counts per cell: an even share plus a Gaussian concentration around
/// the center (and the optional secondary cluster) weighted by
/// `monocentricity`.
fn job_surface(
    cfg: &CityConfig,
    centroids: &[Point<f64>],
    center: Point<f64>,
    total: f64,
) -> Vec<f64> {
    let n = centroids.len() as f64;
    let half = cfg.grid as f64 * cfg.cell_km / 2.0;
    let width = (0.3 * cfg.cell_km).max((1.0 - cfg.monocentricity) * half);
    let kernel = |at: Point<f64>, width: f64| -> Vec<f64> {
        let k: Vec<f64> = centroids
            .iter()
            .map(|p| {
                let d = p.distance_m(&at) / 1000.0 / width;
                (-0.5 * d * d).exp()
            })
            .collect();
        let s: f64 = k.iter().sum();
        k.into_iter().map(|v| v / s).collect()
    };
    let mut concentrated = kernel(center, width);
    if let Some(sc) = &cfg.secondary_cluster {
        let t = sc.angle_deg.to_radians();
        let at = Point::new(
            center.x + sc.radius_km * 1000.0 * t.cos(),
            center.y + sc.radius_km * 1000.0 * t.sin(),
        );
        let second = kernel(at, sc.width_km);
        for (c, s) in concentrated.iter_mut().zip(second) {
            *c = (1.0 - sc.share) * *c + sc.share * s;
        }
    }
    concentrated
        .into_iter()
        .map(|k| total * ((1.0 - cfg.monocentricity) / n + cfg.monocentricity * k))
        .collect()
}

/// Deterministic synthetic city for `config`.
pub fn generate_city(config: &CityConfig) -> Result<SyntheticCity> {
    config.validate()?;
    let g = config.grid;
    let n = g * g;
    let c_km = config.cell_km;
    let area = c_km * c_km;
    let side_m = g as f64 * c_km * 1000.0;
    let center = Point::new(side_m / 2.0, side_m / 2.0);
    let mut rng = stats::rng(stats::derive_seed(config.seed, 0));

    let ids: Vec<String> = (0..n)
        .map(|k| format!("{}-{:02}-{:02}", config.name, k / g, k % g))
        .collect();
    let zones_vec: Vec<Polygon<f64>> = (0..n)
        .map(|k| {
            let (row, col) = ((k / g) as f64, (k % g) as f64);
            Polygon::rectangle(
                Point::new(col * c_km * 1000.0, row * c_km * 1000.0),
                Point::new((col + 1.0) * c_km * 1000.0, (row + 1.0) * c_km * 1000.0),
            )
        })
        .collect();
    let centroids: Vec<Point<f64>> = zones_vec
        .iter()
        .map(|z| z.centroid().expect("non-degenerate cell"))
        .collect();
    let radius_km: Vec<f64> = centroids
        .iter()
        .map(|p| p.distance_m(&center) / 1000.0)
        .collect();

    let income_z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let density: Vec<f64> = (0..n)
        .map(|k| {
            let eps: f64 = StandardNormal.sample(&mut rng);
            config.peak_density
                * (-radius_km[k] / config.density_decay_km).exp()
                * (config.density_noise * eps - 0.1 * income_z[k]).exp()
        })
        .collect();
    let population: Vec<f64> = density
        .iter()
        .map(|d| (d * area).round().max(1.0))
        .collect();
    let total_pop: f64 = population.iter().sum();
    let jobs: Vec<f64> = job_surface(config, &centroids, center, 0.5 * total_pop)
        .into_iter()
        .map(|j| j.round())
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| density[a].total_cmp(&density[b]).then(a.cmp(&b)));
    let mut rank = vec![0.0; n];
    for (r, &k) in order.iter().enumerate() {
        rank[k] = r as f64 / n as f64;
    }
    let lines: Vec<usize> = (0..n)
        .map(|k| lattice_size(rank[k], rng.random::<f64>()))
        .collect();
    let network = build_network(config, &lines)?;
    let zones: BTreeMap<String, Polygon<f64>> = ids.iter().cloned().zip(zones_vec).collect();

    // gravity demand: attractiveness = jobs + service_weight * residents,
    // distance scale grows as origin density falls
    let median_density = density[order[n / 2]];
    let total_jobs: f64 = jobs.iter().sum::<f64>().max(1.0);
    let attract: Vec<f64> = (0..n)
        .map(|j| jobs[j] / total_jobs + config.service_weight * population[j] / total_pop)
        .collect();
    let mut od: BTreeMap<(usize, usize, u8), u32> = BTreeMap::new();
    for i in 0..n {
        let scale = (config.trip_length_km
            * (median_density / density[i]).powf(config.density_elasticity))
        .clamp(0.5, 60.0);
        let w: Vec<f64> = (0..n)
            .map(|j| attract[j] * (-centroids[i].distance_m(&centroids[j]) / 1000.0 / scale).exp())
            .collect();
        let total: f64 = w.iter().sum();
        let mut cum = Vec::with_capacity(n);
        let mut acc = 0.0;
        for v in &w {
            acc += v / total;
            cum.push(acc);
        }
        for _ in 0..config.trips_per_taz {
            let u: f64 = rng.random();
            let j = cum.partition_point(|&c| c < u).min(n - 1);
            // a fifth of trips depart in the evening, outside the morning window
            let hour = if rng.random::<f64>() < 0.8 {
                6 + rng.random_range(0..4u8)
            } else {
                17
            };
            *od.entry((i, j, hour)).or_insert(0) += 1;
        }
    }
    let od: Vec<OdDemand> = od
        .into_iter()
        .map(|((i, j, h), count)| OdDemand {
            origin_taz: ids[i].clone(),
            destination_taz: ids[j].clone(),
            trip_count: count,
            hour_of_day: h,
        })
        .collect();

    let sampled = sample_trip_endpoints(&network, &zones, &od, stats::derive_seed(config.seed, 1))?;
    let mut minute_rng = stats::rng(stats::derive_seed(config.seed, 2));
    let mut trips = Vec::with_capacity(sampled.len());
    for t in &sampled {
        let d = network
            .shortest_path_km(&t.origin, &t.destination)
            .ok_or_else(|| Error::Degenerate("synthetic network is disconnected".into()))?;
        let at = network.point_coord(&t.destination);
        trips.push(TripRecord {
            origin_taz: t.origin_taz.clone(),
            destination_taz: t.destination_taz.clone(),
            departure_minute: t.hour_of_day as u32 * 60 + minute_rng.random_range(0..60),
            distance_km: d,
            dest_x: at.x,
            dest_y: at.y,
        });
    }
    let window = TimeWindow::MORNING;
    let distances: Vec<TripDistance<f64>> = trips
        .iter()
        .map(|t| TripDistance {
            origin_taz: t.origin_taz.clone(),
            distance_km: t.distance_km,
            departure_minute: t.departure_minute,
        })
        .collect();
    let vkt = mean_vkt_per_taz(&distances, window)?;
    let mut in_window: BTreeMap<&str, u64> = BTreeMap::new();
    for t in &trips {
        if window.contains(t.departure_minute) {
            *in_window.entry(t.origin_taz.as_str()).or_insert(0) += 1;
        }
    }

    // one corner cell is marked as an airport and one edge cell as mostly
    // outside the study boundary, so cleaning has work to do
    let airport = n - 1;
    let clipped = g - 1;
    let records: Vec<TazRecord> = (0..n)
        .map(|k| TazRecord {
            taz_id: ids[k].clone(),
            city: config.name.clone(),
            centroid_x: centroids[k].x,
            centroid_y: centroids[k].y,
            area_km2: area,
            population: population[k],
            jobs: jobs[k],
            income: 50_000.0 + 12_000.0 * income_z[k],
            mean_vkt_km: vkt.get(&ids[k]).copied().unwrap_or(0.0),
            trip_count: in_window.get(ids[k].as_str()).copied().unwrap_or(0),
            is_airport: k == airport,
            boundary_overlap_fraction: if k == clipped { 0.3 } else { 1.0 },
        })
        .collect();
    let employment = EmploymentField {
        sites: centroids
            .iter()
            .zip(&jobs)
            .map(|(p, &j)| EmploymentSite { at: *p, jobs: j })
            .collect(),
    };
    Ok(SyntheticCity {
        config: config.clone(),
        center,
        network,
        zones,
        records,
        employment,
        od,
        trips,
    })
}

/// `count` cities sharing `base` except for name and seed.
pub fn similar_cities(base: &CityConfig, count: usize) -> Result<Vec<SyntheticCity>> {
    (0..count)
        .map(|k| {
            let cfg = CityConfig {
                name: format!("{}{}", base.name, k + 1),
                seed: stats::derive_seed(base.seed, 100 + k as u64),
                ..base.clone()
            };
            generate_city(&cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::urban_centrality_index;

    fn small(m: f64) -> CityConfig {
        CityConfig {
            grid: 9,
            monocentricity: m,
            trips_per_taz: 12,
            ..CityConfig::default()
        }
    }

    #[test]
    fn rejects_infeasible_configs() {
        assert!(generate_city(&CityConfig {
            grid: 1,
            ..small(0.5)
        })
        .is_err());
        assert!(generate_city(&CityConfig {
            monocentricity: 1.5,
            ..small(0.5)
        })
        .is_err());
        let far = SecondaryCluster {
            radius_km: 500.0,
            angle_deg: 0.0,
            share: 0.3,
            width_km: 1.5,
        };
        assert!(generate_city(&CityConfig {
            secondary_cluster: Some(far),
            ..small(0.5)
        })
        .is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_city(&small(0.7)).unwrap();
        let b = generate_city(&small(0.7)).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.trips, b.trips);
    }

    #[test]
    fn uci_tracks_monocentricity() {
        let uci = |m: f64| {
            urban_centrality_index(&generate_city(&small(m)).unwrap().job_zones())
                .unwrap()
                .uci
        };
        let (lo, mid, hi) = (uci(0.0), uci(0.5), uci(1.0));
        assert!(lo <= 0.1, "uniform jobs UCI {lo}");
        assert!(hi >= 0.8, "monocentric UCI {hi}");
        assert!(lo < mid && mid < hi);
    }

    #[test]
    fn every_taz_has_trips() {
        let city = generate_city(&small(0.8)).unwrap();
        assert!(city
            .records
            .iter()
            .all(|r| r.trip_count > 0 && r.mean_vkt_km > 0.0));
    }
}
