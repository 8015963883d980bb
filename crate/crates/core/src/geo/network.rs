//! Undirected road network with edge-embedded points and shortest paths.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::geometry::Point;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoadClass {
    Residential,
    Tertiary,
    Secondary,
    Primary,
    Highway,
    Other,
}

impl RoadClass {
    /// Trip endpoints are only placed on residential and tertiary roads.
    pub fn is_sampling_eligible(self) -> bool {
        matches!(self, RoadClass::Residential | RoadClass::Tertiary)
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.trim().to_ascii_lowercase().as_str() {
            "residential" => RoadClass::Residential,
            "tertiary" => RoadClass::Tertiary,
            "secondary" => RoadClass::Secondary,
            "primary" => RoadClass::Primary,
            "highway" | "motorway" | "trunk" => RoadClass::Highway,
            "other" => RoadClass::Other,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge<T> {
    pub u: usize,
    pub v: usize,
    pub length_m: T,
    pub class: RoadClass,
}

/// A location on an edge at `fraction ∈ [0, 1]` from `u` towards `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkPoint<T> {
    pub edge: usize,
    pub fraction: T,
}

#[derive(Debug, Clone)]
pub struct RoadNetwork<T> {
    node_ids: Vec<u64>,
    coords: Vec<Point<T>>,
    edges: Vec<Edge<T>>,
    /// node → (neighbour, edge index)
    adjacency: Vec<Vec<(usize, usize)>>,
    index_of: HashMap<u64, usize>,
}

#[derive(Debug, Clone, Copy)]
struct HeapEntry<T> {
    dist: T,
    node: usize,
}

impl<T: Scalar> PartialEq for HeapEntry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for HeapEntry<T> {}
impl<T: Scalar> PartialOrd for HeapEntry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for HeapEntry<T> {
    // Reversed for a min-heap; node index breaks ties deterministically.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

#[derive(Debug, Deserialize)]
struct NodeRow {
    id: u64,
    x: f64,
    y: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeRow {
    u: u64,
    v: u64,
    length_m: f64,
    road_class: String,
}

impl<T: Scalar> RoadNetwork<T> {
    pub fn new() -> Self {
        Self {
            node_ids: Vec::new(),
            coords: Vec::new(),
            edges: Vec::new(),
            adjacency: Vec::new(),
            index_of: HashMap::new(),
        }
    }

    pub fn add_node(&mut self, id: u64, at: Point<T>) -> Result<usize> {
        if self.index_of.contains_key(&id) {
            return Err(Error::Malformed(format!("duplicate node id {id}")));
        }
        let idx = self.coords.len();
        self.node_ids.push(id);
        self.coords.push(at);
        self.adjacency.push(Vec::new());
        self.index_of.insert(id, idx);
        Ok(idx)
    }

    /// Adds an undirected edge between node indices.
    pub fn add_edge(&mut self, u: usize, v: usize, length_m: T, class: RoadClass) -> Result<usize> {
        if u >= self.coords.len() || v >= self.coords.len() {
            return Err(Error::Malformed(format!(
                "edge ({u}, {v}) references unknown node"
            )));
        }
        if !(length_m > T::zero()) || !length_m.is_finite() {
            return Err(Error::Malformed(format!(
                "edge ({u}, {v}) has non-positive length {length_m}"
            )));
        }
        let idx = self.edges.len();
        self.edges.push(Edge {
            u,
            v,
            length_m,
            class,
        });
        self.adjacency[u].push((v, idx));
        if u != v {
            self.adjacency[v].push((u, idx));
        }
        Ok(idx)
    }

    pub fn add_edge_by_id(
        &mut self,
        u: u64,
        v: u64,
        length_m: T,
        class: RoadClass,
    ) -> Result<usize> {
        let (Some(&a), Some(&b)) = (self.index_of.get(&u), self.index_of.get(&v)) else {
            return Err(Error::Malformed(format!(
                "edge ({u}, {v}) references unknown node id"
            )));
        };
        self.add_edge(a, b, length_m, class)
    }

    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_coord(&self, node: usize) -> Point<T> {
        self.coords[node]
    }

    pub fn node_id(&self, node: usize) -> u64 {
        self.node_ids[node]
    }

    pub fn node_index(&self, id: u64) -> Option<usize> {
        self.index_of.get(&id).copied()
    }

    pub fn edges(&self) -> &[Edge<T>] {
        &self.edges
    }

    pub fn edge(&self, idx: usize) -> &Edge<T> {
        &self.edges[idx]
    }

    pub fn neighbours(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    pub fn point_coord(&self, p: &NetworkPoint<T>) -> Point<T> {
        let e = &self.edges[p.edge];
        self.coords[e.u].lerp(&self.coords[e.v], p.fraction)
    }

    /// Loads nodes (`id,x,y`) and edges (`u,v,length_m,road_class`) CSV files.
    pub fn from_csv_paths(nodes: impl AsRef<Path>, edges: impl AsRef<Path>) -> Result<Self> {
        let nodes = nodes.as_ref();
        let edges = edges.as_ref();
        let nf = std::fs::File::open(nodes).map_err(|e| Error::io(nodes, e))?;
        let ef = std::fs::File::open(edges).map_err(|e| Error::io(edges, e))?;
        Self::from_csv_readers(nf, ef)
    }

    pub fn from_csv_readers<R1: std::io::Read, R2: std::io::Read>(
        nodes: R1,
        edges: R2,
    ) -> Result<Self> {
        let mut net = Self::new();
        for row in csv::Reader::from_reader(nodes).deserialize::<NodeRow>() {
            let row = row?;
            net.add_node(row.id, Point::new(T::of(row.x), T::of(row.y)))?;
        }
        for (i, row) in csv::Reader::from_reader(edges)
            .deserialize::<EdgeRow>()
            .enumerate()
        {
            let row = row?;
            let class = RoadClass::parse(&row.road_class).ok_or_else(|| Error::InvalidField {
                row: i + 1,
                column: "road_class".into(),
                message: format!("unknown road class `{}`", row.road_class),
            })?;
            net.add_edge_by_id(row.u, row.v, T::of(row.length_m), class)?;
        }
        Ok(net)
    }

    pub fn write_csv<W1: std::io::Write, W2: std::io::Write>(
        &self,
        nodes: W1,
        edges: W2,
    ) -> Result<()> {
        let mut nw = csv::Writer::from_writer(nodes);
        nw.write_record(["id", "x", "y"])?;
        for (i, p) in self.coords.iter().enumerate() {
            nw.write_record([
                self.node_ids[i].to_string(),
                p.x.as_f64().to_string(),
                p.y.as_f64().to_string(),
            ])?;
        }
        nw.flush().map_err(|e| Error::io("<nodes>", e))?;
        let mut ew = csv::Writer::from_writer(edges);
        for e in &self.edges {
            ew.serialize(EdgeRow {
                u: self.node_ids[e.u],
                v: self.node_ids[e.v],
                length_m: e.length_m.as_f64(),
                road_class: format!("{:?}", e.class).to_ascii_lowercase(),
            })?;
        }
        ew.flush().map_err(|e| Error::io("<edges>", e))?;
        Ok(())
    }

    /// GeoJSON `FeatureCollection` of `LineString`s. Vertices with identical
    /// coordinates become one node; each segment becomes one edge whose length
    /// is the planar segment length unless `length_m` is given for a
    /// single-segment line.
    pub fn from_geojson_str(text: &str) -> Result<Self> {
        let doc: serde_json::Value = serde_json::from_str(text)?;
        let features = doc
            .get("features")
            .and_then(|f| f.as_array())
            .ok_or_else(|| Error::Malformed("GeoJSON without `features` array".into()))?;
        let mut net = Self::new();
        let mut by_coord: HashMap<(u64, u64), usize> = HashMap::new();
        let mut node_for = |net: &mut Self, x: f64, y: f64| -> Result<usize> {
            let key = (x.to_bits(), y.to_bits());
            if let Some(&n) = by_coord.get(&key) {
                return Ok(n);
            }
            let id = net.node_count() as u64;
            let n = net.add_node(id, Point::new(T::of(x), T::of(y)))?;
            by_coord.insert(key, n);
            Ok(n)
        };
        for (fi, f) in features.iter().enumerate() {
            let geom = f
                .get("geometry")
                .ok_or_else(|| Error::Malformed(format!("feature {fi} without geometry")))?;
            if geom.get("type").and_then(|t| t.as_str()) != Some("LineString") {
                return Err(Error::Malformed(format!(
                    "feature {fi} is not a LineString"
                )));
            }
            let coords = geom
                .get("coordinates")
                .and_then(|c| c.as_array())
                .ok_or_else(|| Error::Malformed(format!("feature {fi} without coordinates")))?;
            let props = f.get("properties");
            let class = props
                .and_then(|p| p.get("road_class"))
                .and_then(|c| c.as_str())
                .map(|s| {
                    RoadClass::parse(s).ok_or_else(|| {
                        Error::Malformed(format!("feature {fi}: unknown road class `{s}`"))
                    })
                })
                .transpose()?
                .unwrap_or(RoadClass::Other);
            let given_len = props
                .and_then(|p| p.get("length_m"))
                .and_then(|l| l.as_f64());
            let pts: Vec<(f64, f64)> = coords
                .iter()
                .map(|c| {
                    let a = c.as_array().filter(|a| a.len() >= 2);
                    match a {
                        Some(a) => match (a[0].as_f64(), a[1].as_f64()) {
                            (Some(x), Some(y)) => Ok((x, y)),
                            _ => Err(Error::Malformed(format!("feature {fi}: bad coordinate"))),
                        },
                        None => Err(Error::Malformed(format!("feature {fi}: bad coordinate"))),
                    }
                })
                .collect::<Result<_>>()?;
            for w in pts.windows(2) {
                let a = node_for(&mut net, w[0].0, w[0].1)?;
                let b = node_for(&mut net, w[1].0, w[1].1)?;
                let len = match given_len {
                    Some(l) if pts.len() == 2 => T::of(l),
                    _ => net.coords[a].distance_m(&net.coords[b]),
                };
                net.add_edge(a, b, len, class)?;
            }
        }
        Ok(net)
    }

    /// Multi-source Dijkstra over nodes. `None` marks unreachable nodes.
    pub fn distances_from(&self, sources: &[(usize, T)]) -> Vec<Option<T>> {
        let mut dist: Vec<Option<T>> = vec![None; self.node_count()];
        let mut heap = BinaryHeap::new();
        for &(s, d0) in sources {
            if dist[s].is_none_or(|d| d0 < d) {
                dist[s] = Some(d0);
                heap.push(HeapEntry { dist: d0, node: s });
            }
        }
        while let Some(HeapEntry { dist: d, node }) = heap.pop() {
            if dist[node].is_some_and(|best| d > best) {
                continue;
            }
            for &(next, e) in &self.adjacency[node] {
                let nd = d + self.edges[e].length_m;
                if dist[next].is_none_or(|cur| nd < cur) {
                    dist[next] = Some(nd);
                    heap.push(HeapEntry {
                        dist: nd,
                        node: next,
                    });
                }
            }
        }
        dist
    }

    pub fn node_distance_m(&self, from: usize, to: usize) -> Option<T> {
        self.distances_from(&[(from, T::zero())])[to]
    }

    fn point_sources(&self, p: &NetworkPoint<T>) -> [(usize, T); 2] {
        let e = &self.edges[p.edge];
        [
            (e.u, p.fraction * e.length_m),
            (e.v, (T::one() - p.fraction) * e.length_m),
        ]
    }

    /// Shortest network distance in km between two edge-embedded points, or
    /// `None` when they are disconnected.
    pub fn shortest_path_km(
        &self,
        origin: &NetworkPoint<T>,
        destination: &NetworkPoint<T>,
    ) -> Option<T> {
        let e = &self.edges[destination.edge];
        let dist = self.distances_until(&self.point_sources(origin), &[e.u, e.v]);
        self.distance_to_point_m(&dist, origin, destination)
            .map(|m| m / T::of(1000.0))
    }

    /// Dijkstra that stops once every node in `targets` is settled; other
    /// entries may be unsettled upper bounds or `None`.
    fn distances_until(&self, sources: &[(usize, T)], targets: &[usize]) -> Vec<Option<T>> {
        let mut dist: Vec<Option<T>> = vec![None; self.node_count()];
        let mut settled = vec![false; self.node_count()];
        let mut remaining = targets.len();
        let mut heap = BinaryHeap::new();
        for &(s, d0) in sources {
            if dist[s].is_none_or(|d| d0 < d) {
                dist[s] = Some(d0);
                heap.push(HeapEntry { dist: d0, node: s });
            }
        }
        while let Some(HeapEntry { dist: d, node }) = heap.pop() {
            if settled[node] || dist[node].is_some_and(|best| d > best) {
                continue;
            }
            settled[node] = true;
            if targets.contains(&node) {
                remaining -= targets.iter().filter(|&&t| t == node).count();
                if remaining == 0 {
                    break;
                }
            }
            for &(next, e) in &self.adjacency[node] {
                let nd = d + self.edges[e].length_m;
                if dist[next].is_none_or(|cur| nd < cur) {
                    dist[next] = Some(nd);
                    heap.push(HeapEntry {
                        dist: nd,
                        node: next,
                    });
                }
            }
        }
        dist
    }

    /// Evaluates one origin's Dijkstra tree against many destinations.
    pub fn shortest_paths_km(
        &self,
        origin: &NetworkPoint<T>,
        destinations: &[NetworkPoint<T>],
    ) -> Vec<Option<T>> {
        let dist = self.distances_from(&self.point_sources(origin));
        destinations
            .iter()
            .map(|d| {
                self.distance_to_point_m(&dist, origin, d)
                    .map(|m| m / T::of(1000.0))
            })
            .collect()
    }

    fn distance_to_point_m(
        &self,
        dist: &[Option<T>],
        origin: &NetworkPoint<T>,
        dest: &NetworkPoint<T>,
    ) -> Option<T> {
        let mut best: Option<T> = None;
        let mut consider = |d: T| {
            if best.is_none_or(|b| d < b) {
                best = Some(d);
            }
        };
        if origin.edge == dest.edge {
            let len = self.edges[dest.edge].length_m;
            consider((origin.fraction - dest.fraction).abs() * len);
        }
        for (node, offset) in self.point_sources(dest) {
            if let Some(d) = dist[node] {
                consider(d + offset);
            }
        }
        best
    }

    /// Nearest point on the nearest edge satisfying `filter`, within `radius_m`.
    pub fn snap(
        &self,
        at: &Point<T>,
        radius_m: T,
        filter: impl Fn(&Edge<T>) -> bool,
    ) -> Result<NetworkPoint<T>> {
        let mut best: Option<(T, NetworkPoint<T>)> = None;
        for (i, e) in self.edges.iter().enumerate() {
            if !filter(e) {
                continue;
            }
            let a = self.coords[e.u];
            let b = self.coords[e.v];
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let len2 = dx * dx + dy * dy;
            let t = if len2 == T::zero() {
                T::zero()
            } else {
                (((at.x - a.x) * dx + (at.y - a.y) * dy) / len2)
                    .max(T::zero())
                    .min(T::one())
            };
            let d = a.lerp(&b, t).distance_m(at);
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((
                    d,
                    NetworkPoint {
                        edge: i,
                        fraction: t,
                    },
                ));
            }
        }
        match best {
            Some((d, p)) if d <= radius_m => Ok(p),
            _ => Err(Error::SnapFailed {
                radius_m: radius_m.as_f64(),
            }),
        }
    }

    /// Snap onto residential or tertiary roads with the default 500 m radius.
    pub fn snap_eligible(&self, at: &Point<T>) -> Result<NetworkPoint<T>> {
        self.snap(at, T::of(DEFAULT_SNAP_RADIUS_M), |e| {
            e.class.is_sampling_eligible()
        })
    }
}

pub const DEFAULT_SNAP_RADIUS_M: f64 = 500.0;

impl<T: Scalar> Default for RoadNetwork<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Square grid of `n × n` nodes spaced `spacing_m` apart, every edge `class`.
pub fn grid_network<T: Scalar>(n: usize, spacing_m: T, class: RoadClass) -> RoadNetwork<T> {
    let mut net = RoadNetwork::new();
    for r in 0..n {
        for c in 0..n {
            let id = (r * n + c) as u64;
            net.add_node(
                id,
                Point::new(T::of_usize(c) * spacing_m, T::of_usize(r) * spacing_m),
            )
            .expect("unique grid ids");
        }
    }
    for r in 0..n {
        for c in 0..n {
            let i = r * n + c;
            if c + 1 < n {
                net.add_edge(i, i + 1, spacing_m, class)
                    .expect("valid edge");
            }
            if r + 1 < n {
                net.add_edge(i, i + n, spacing_m, class)
                    .expect("valid edge");
            }
        }
    }
    net
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle4() -> RoadNetwork<f64> {
        // 0-1: 1, 1-2: 1, 2-3: 5, 3-0: 4  (all km scaled to m)
        let mut net = RoadNetwork::new();
        for i in 0..4 {
            net.add_node(i, Point::new(i as f64, 0.0)).unwrap();
        }
        net.add_edge(0, 1, 1000.0, RoadClass::Residential).unwrap();
        net.add_edge(1, 2, 1000.0, RoadClass::Residential).unwrap();
        net.add_edge(2, 3, 5000.0, RoadClass::Residential).unwrap();
        net.add_edge(3, 0, 4000.0, RoadClass::Residential).unwrap();
        net
    }

    #[test]
    fn same_point_is_zero() {
        let net = cycle4();
        let p = NetworkPoint {
            edge: 2,
            fraction: 0.3,
        };
        assert_eq!(net.shortest_path_km(&p, &p), Some(0.0));
    }

    #[test]
    fn cycle_takes_shorter_arc() {
        let net = cycle4();
        // 0 → 2: via 1 is 2 km, via 3 is 9 km.
        assert_eq!(net.node_distance_m(0, 2), Some(2000.0));
        // 1 → 3: via 2 is 6 km, via 0 is 5 km.
        assert_eq!(net.node_distance_m(1, 3), Some(5000.0));
    }

    #[test]
    fn same_edge_direct_distance() {
        let net = cycle4();
        let a = NetworkPoint {
            edge: 2,
            fraction: 0.2,
        };
        let b = NetworkPoint {
            edge: 2,
            fraction: 0.6,
        };
        assert!((net.shortest_path_km(&a, &b).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn disconnected_is_unreachable() {
        let mut net = cycle4();
        net.add_node(10, Point::new(9.0, 9.0)).unwrap();
        net.add_node(11, Point::new(9.5, 9.0)).unwrap();
        let e = net
            .add_edge_by_id(10, 11, 500.0, RoadClass::Residential)
            .unwrap();
        let a = NetworkPoint {
            edge: 0,
            fraction: 0.5,
        };
        let b = NetworkPoint {
            edge: e,
            fraction: 0.5,
        };
        assert_eq!(net.shortest_path_km(&a, &b), None);
    }

    #[test]
    fn rejects_nonpositive_length() {
        let mut net = cycle4();
        assert!(net.add_edge(0, 2, 0.0, RoadClass::Other).is_err());
    }

    #[test]
    fn snapping_respects_class_and_radius() {
        let mut net = RoadNetwork::<f64>::new();
        net.add_node(0, Point::new(0.0, 0.0)).unwrap();
        net.add_node(1, Point::new(1000.0, 0.0)).unwrap();
        net.add_node(2, Point::new(0.0, 100.0)).unwrap();
        net.add_node(3, Point::new(1000.0, 100.0)).unwrap();
        net.add_edge(0, 1, 1000.0, RoadClass::Highway).unwrap();
        let res = net.add_edge(2, 3, 1000.0, RoadClass::Residential).unwrap();
        let p = net.snap_eligible(&Point::new(250.0, 10.0)).unwrap();
        assert_eq!(p.edge, res);
        assert!((p.fraction - 0.25).abs() < 1e-12);
        assert!(net.snap_eligible(&Point::new(250.0, 900.0)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let net = grid_network::<f64>(3, 100.0, RoadClass::Tertiary);
        let (mut n, mut e) = (Vec::new(), Vec::new());
        net.write_csv(&mut n, &mut e).unwrap();
        let back = RoadNetwork::<f64>::from_csv_readers(&n[..], &e[..]).unwrap();
        assert_eq!(back.node_count(), 9);
        assert_eq!(back.edges(), net.edges());
    }

    #[test]
    fn geojson_lines_share_nodes() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"road_class":"residential"},
             "geometry":{"type":"LineString","coordinates":[[0,0],[300,400]]}},
            {"type":"Feature","properties":{"road_class":"primary","length_m":700},
             "geometry":{"type":"LineString","coordinates":[[300,400],[300,1000]]}}]}"#;
        let net = RoadNetwork::<f64>::from_geojson_str(text).unwrap();
        assert_eq!(net.node_count(), 3);
        assert_eq!(net.edge(0).length_m, 500.0);
        assert_eq!(net.edge(1).length_m, 700.0);
        assert_eq!(net.node_distance_m(0, 2), Some(1200.0));
    }
}
