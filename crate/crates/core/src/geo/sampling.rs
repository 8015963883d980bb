//! Length-proportional sampling of trip endpoints on eligible roads.

use std::collections::{BTreeMap, HashMap};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::geometry::Polygon;
use super::network::{NetworkPoint, RoadNetwork};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats;

/// Aggregated origin-destination demand for one hour of the day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdDemand {
    pub origin_taz: String,
    pub destination_taz: String,
    pub trip_count: u32,
    pub hour_of_day: u8,
}

impl OdDemand {
    pub fn validate(&self) -> Result<()> {
        if self.hour_of_day > 23 {
            return Err(Error::InvalidArgument(format!(
                "hour of day {} outside 0–23",
                self.hour_of_day
            )));
        }
        Ok(())
    }
}

pub fn read_od_csv<R: std::io::Read>(reader: R) -> Result<Vec<OdDemand>> {
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(reader).deserialize::<OdDemand>() {
        let row = row?;
        row.validate()?;
        out.push(row);
    }
    Ok(out)
}

pub fn write_od_csv<W: std::io::Write>(writer: W, od: &[OdDemand]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in od {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<od>", e))?;
    Ok(())
}

/// One sampled trip: endpoints on the network plus its demand attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledTrip<T> {
    pub origin_taz: String,
    pub destination_taz: String,
    pub hour_of_day: u8,
    pub origin: NetworkPoint<T>,
    pub destination: NetworkPoint<T>,
}

/// Eligible road pieces of one zone with cumulative lengths.
#[derive(Debug, Clone)]
struct Support<T> {
    pieces: Vec<(usize, T, T)>,
    cumulative: Vec<T>,
}

impl<T: Scalar> Support<T> {
    fn build(network: &RoadNetwork<T>, zone: &Polygon<T>) -> Self {
        let (mut min_x, mut min_y) = (T::infinity(), T::infinity());
        let (mut max_x, mut max_y) = (T::neg_infinity(), T::neg_infinity());
        for p in &zone.exterior {
            min_x = min_x.min(p.x);
            min_y = min_y.min(p.y);
            max_x = max_x.max(p.x);
            max_y = max_y.max(p.y);
        }
        let mut pieces = Vec::new();
        let mut cumulative = Vec::new();
        let mut total = T::zero();
        for (i, e) in network.edges().iter().enumerate() {
            if !e.class.is_sampling_eligible() {
                continue;
            }
            let a = network.node_coord(e.u);
            let b = network.node_coord(e.v);
            if a.x.max(b.x) < min_x
                || a.x.min(b.x) > max_x
                || a.y.max(b.y) < min_y
                || a.y.min(b.y) > max_y
            {
                continue;
            }
            for (t0, t1) in zone.clip_segment(&a, &b) {
                total += (t1 - t0) * e.length_m;
                pieces.push((i, t0, t1));
                cumulative.push(total);
            }
        }
        Self { pieces, cumulative }
    }

    fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    fn sample(&self, rng: &mut stats::Rng) -> NetworkPoint<T> {
        let total = *self.cumulative.last().expect("non-empty support");
        let target = T::of(rng.random::<f64>()) * total;
        let k = self
            .cumulative
            .partition_point(|&c| c <= target)
            .min(self.pieces.len() - 1);
        let (edge, t0, t1) = self.pieces[k];
        let u = T::of(rng.random::<f64>());
        NetworkPoint {
            edge,
            fraction: t0 + (t1 - t0) * u,
        }
    }
}

/// Draws `trip_count` origin/destination pairs for every demand row. Points
/// are uniform by length over residential and tertiary roads clipped to the
/// origin and destination zones. Zones are visited in the demand order and
/// one RNG stream is consumed, so output is reproducible under `seed`.
pub fn sample_trip_endpoints<T: Scalar>(
    network: &RoadNetwork<T>,
    zones: &BTreeMap<String, Polygon<T>>,
    od: &[OdDemand],
    seed: u64,
) -> Result<Vec<SampledTrip<T>>> {
    let mut supports: HashMap<&str, Support<T>> = HashMap::new();
    let mut support_for = |taz: &str| -> Result<()> {
        if supports.contains_key(taz) {
            return Ok(());
        }
        let (key, zone) = zones
            .get_key_value(taz)
            .ok_or_else(|| Error::Malformed(format!("demand references unknown TAZ `{taz}`")))?;
        let s = Support::build(network, zone);
        if s.is_empty() {
            return Err(Error::NoEligibleEdges(taz.to_string()));
        }
        supports.insert(key.as_str(), s);
        Ok(())
    };
    for row in od {
        row.validate()?;
        support_for(&row.origin_taz)?;
        support_for(&row.destination_taz)?;
    }
    let mut rng = stats::rng(seed);
    let mut trips = Vec::with_capacity(od.iter().map(|r| r.trip_count as usize).sum());
    for row in od {
        let so = &supports[row.origin_taz.as_str()];
        let sd = &supports[row.destination_taz.as_str()];
        for _ in 0..row.trip_count {
            let origin = so.sample(&mut rng);
            let destination = sd.sample(&mut rng);
            trips.push(SampledTrip {
                origin_taz: row.origin_taz.clone(),
                destination_taz: row.destination_taz.clone(),
                hour_of_day: row.hour_of_day,
                origin,
                destination,
            });
        }
    }
    Ok(trips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::geometry::Point;
    use crate::geo::network::RoadClass;

    fn two_edge_zone() -> (RoadNetwork<f64>, BTreeMap<String, Polygon<f64>>) {
        let mut net = RoadNetwork::new();
        net.add_node(0, Point::new(0.0, 0.0)).unwrap();
        net.add_node(1, Point::new(100.0, 0.0)).unwrap();
        net.add_node(2, Point::new(100.0, 300.0)).unwrap();
        net.add_node(3, Point::new(0.0, 300.0)).unwrap();
        net.add_edge(0, 1, 100.0, RoadClass::Residential).unwrap();
        net.add_edge(1, 2, 300.0, RoadClass::Tertiary).unwrap();
        net.add_edge(2, 3, 100.0, RoadClass::Primary).unwrap();
        let mut zones = BTreeMap::new();
        zones.insert(
            "a".to_string(),
            Polygon::rectangle(Point::new(-10.0, -10.0), Point::new(110.0, 310.0)),
        );
        (net, zones)
    }

    fn demand(n: u32) -> Vec<OdDemand> {
        vec![OdDemand {
            origin_taz: "a".into(),
            destination_taz: "a".into(),
            trip_count: n,
            hour_of_day: 7,
        }]
    }

    #[test]
    fn length_proportional_share() {
        let (net, zones) = two_edge_zone();
        let trips = sample_trip_endpoints(&net, &zones, &demand(10_000), 11).unwrap();
        assert_eq!(trips.len(), 10_000);
        let on_long = trips.iter().filter(|t| t.origin.edge == 1).count() as f64;
        assert!(trips
            .iter()
            .all(|t| t.origin.edge != 2 && t.destination.edge != 2));
        // chi-square with 1 dof at the 0.1% level.
        let chi = stats::chi_square(&[on_long, 10_000.0 - on_long], &[7500.0, 2500.0]);
        assert!(chi < 10.83, "chi2 = {chi}");
    }

    #[test]
    fn deterministic_under_seed() {
        let (net, zones) = two_edge_zone();
        let a = sample_trip_endpoints(&net, &zones, &demand(50), 3).unwrap();
        let b = sample_trip_endpoints(&net, &zones, &demand(50), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zone_without_eligible_edges_fails() {
        let (net, mut zones) = two_edge_zone();
        zones.insert(
            "b".into(),
            Polygon::rectangle(Point::new(5000.0, 5000.0), Point::new(6000.0, 6000.0)),
        );
        let od = vec![OdDemand {
            origin_taz: "b".into(),
            destination_taz: "a".into(),
            trip_count: 1,
            hour_of_day: 8,
        }];
        match sample_trip_endpoints(&net, &zones, &od, 0) {
            Err(Error::NoEligibleEdges(taz)) => assert_eq!(taz, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
