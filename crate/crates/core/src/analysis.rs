//! Spatial post-processing of attributions: LOESS effect curves and their
//! zero crossings, the density versus distance corridor, and destination
//! shares in rings around the city center.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo::{Point, Polygon};
use crate::scalar::Scalar;

pub const DEFAULT_BANDWIDTH: f64 = 0.3;
pub const DEFAULT_RING_WIDTH_KM: f64 = 5.0;
pub const DEFAULT_EFFECT_THRESHOLD_G: f64 = 150.0;
pub const MIN_CURVE_POINTS: usize = 10;
/// Fit description stored next to every curve.
pub const CURVE_METHOD: &str = "loess degree 1, tricube weights";

/// Locally weighted linear fit evaluated at each distinct observed x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCurve<T> {
    pub feature: String,
    pub x: Vec<T>,
    pub fitted: Vec<T>,
    pub bandwidth: f64,
    pub method: String,
}

impl<T: Scalar> EffectCurve<T> {
    /// Linear interpolation of the fitted values; `None` outside the range.
    pub fn value_at(&self, at: T) -> Option<T> {
        let n = self.x.len();
        if n == 0 || at < self.x[0] || at > self.x[n - 1] {
            return None;
        }
        let i = self.x.partition_point(|&v| v < at);
        if self.x[i] == at || i == 0 {
            return Some(self.fitted[i]);
        }
        let (x0, x1) = (self.x[i - 1], self.x[i]);
        let t = (at - x0) / (x1 - x0);
        Some(self.fitted[i - 1] + (self.fitted[i] - self.fitted[i - 1]) * t)
    }
}

/// Weighted least-squares line through `(dx, y, w)` evaluated at `dx = 0`.
fn local_linear<T: Scalar>(pts: impl Iterator<Item = (T, T, T)>) -> T {
    let (mut sw, mut swx, mut swy, mut swxx, mut swxy) =
        (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    for (dx, y, w) in pts {
        sw += w;
        swx += w * dx;
        swy += w * y;
        swxx += w * dx * dx;
        swxy += w * dx * y;
    }
    let det = sw * swxx - swx * swx;
    let scale = sw * swxx;
    if det <= scale * T::of(1e-12) {
        return swy / sw;
    }
    (swxx * swy - swx * swxy) / det
}

/// LOESS with tricube weights and degree 1. Each local fit uses the
/// `ceil(bandwidth * n)` nearest points; a bandwidth of 1 or more gives the
/// unweighted global least-squares line.
pub fn fit_effect_curve<T: Scalar>(
    feature: &str,
    points: &[(T, T)],
    bandwidth: f64,
) -> Result<EffectCurve<T>> {
    let n = points.len();
    if n < MIN_CURVE_POINTS {
        return Err(Error::InvalidArgument(format!(
            "effect curve needs at least {MIN_CURVE_POINTS} points, got {n}"
        )));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bandwidth {bandwidth} must be positive"
        )));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidArgument(
            "effect curve points must be finite".into(),
        ));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("finite")
            .then(a.1.partial_cmp(&b.1).expect("finite"))
    });
    if sorted[0].0 == sorted[n - 1].0 {
        return Err(Error::Degenerate(format!(
            "all `{feature}` values are identical"
        )));
    }
    let mut xs: Vec<T> = sorted.iter().map(|p| p.0).collect();
    xs.dedup();
    let global = bandwidth >= 1.0;
    let q = ((bandwidth * n as f64).ceil() as usize).clamp(2, n);
    let fitted = xs
        .iter()
        .map(|&x0| {
            if global {
                return local_linear(sorted.iter().map(|&(x, y)| (x - x0, y, T::one())));
            }
            // grow a window of q points around x0 in the sorted list
            let i = sorted.partition_point(|p| p.0 < x0);
            let (mut lo, mut hi) = (i, i);
            while hi - lo < q {
                let left = if lo > 0 {
                    Some(x0 - sorted[lo - 1].0)
                } else {
                    None
                };
                let right = if hi < n {
                    Some(sorted[hi].0 - x0)
                } else {
                    None
                };
                match (left, right) {
                    (Some(l), Some(r)) if l <= r => lo -= 1,
                    (Some(_), None) => lo -= 1,
                    _ => hi += 1,
                }
            }
            let mut h = (x0 - sorted[lo].0).max(sorted[hi - 1].0 - x0);
            if h == T::zero() {
                // all q nearest points sit at x0; widen to the next distinct value
                let l = if lo > 0 {
                    x0 - sorted[lo - 1].0
                } else {
                    T::infinity()
                };
                let r = if hi < n {
                    sorted[hi].0 - x0
                } else {
                    T::infinity()
                };
                h = l.min(r);
            }
            // points at exactly h would get zero weight; widen slightly so the
            // window keeps q members
            let h = h * T::of(1.0 + 1e-9);
            local_linear(sorted.iter().filter_map(|&(x, y)| {
                let d = (x - x0).abs() / h;
                if d < T::one() {
                    let t = T::one() - d * d * d;
                    Some((x - x0, y, t * t * t))
                } else {
                    None
                }
            }))
        })
        .collect();
    Ok(EffectCurve {
        feature: feature.to_string(),
        x: xs,
        fitted,
        bandwidth: bandwidth.min(1.0),
        method: CURVE_METHOD.to_string(),
    })
}

/// Sign changes of `values` over `x`, linearly interpolated. A run of exact
/// zeros between opposite signs yields its first point.
pub fn sign_changes<T: Scalar>(x: &[T], values: &[T]) -> Vec<(T, bool)> {
    let mut out = Vec::new();
    let mut last: Option<usize> = None;
    for i in 0..x.len().min(values.len()) {
        let v = values[i];
        if v == T::zero() {
            continue;
        }
        if let Some(p) = last {
            let u = values[p];
            if (u < T::zero()) != (v < T::zero()) {
                let at = if p + 1 == i {
                    x[p] + (x[i] - x[p]) * (-u) / (v - u)
                } else {
                    x[p + 1]
                };
                out.push((at, v > T::zero()));
            }
        }
        last = Some(i);
    }
    out
}

/// Values of x where the fitted effect changes sign.
pub fn zero_crossing<T: Scalar>(curve: &EffectCurve<T>) -> Vec<T> {
    sign_changes(&curve.x, &curve.fitted)
        .into_iter()
        .map(|c| c.0)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dominance {
    Density,
    Distance,
    Neither,
}

impl Dominance {
    pub fn as_str(self) -> &'static str {
        match self {
            Dominance::Density => "density",
            Dominance::Distance => "distance",
            Dominance::Neither => "neither",
        }
    }

    /// Larger of the two effects when it is positive; ties go to neither.
    pub fn classify<T: Scalar>(phi_density: T, phi_distance: T) -> Self {
        let best = phi_density.max(phi_distance);
        if !(best > T::zero()) || phi_density == phi_distance {
            Dominance::Neither
        } else if phi_density > phi_distance {
            Dominance::Density
        } else {
            Dominance::Distance
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorInput<T> {
    pub taz_id: String,
    pub distance_to_center_km: T,
    pub phi_density: T,
    pub phi_distance: T,
    /// Mean emission per trip from this TAZ in grams.
    pub emission_g: T,
    pub trip_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorridorConfig {
    pub bandwidth: f64,
    /// Weight the city mean emission by trip counts instead of per TAZ.
    pub trip_weighted_mean: bool,
}

impl Default for CorridorConfig {
    fn default() -> Self {
        Self {
            bandwidth: DEFAULT_BANDWIDTH,
            trip_weighted_mean: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorResult<T> {
    pub city_mean_emission_g: T,
    /// Only TAZ above the city mean emission appear.
    pub dominance: BTreeMap<String, Dominance>,
    pub density_onset_km: Option<T>,
    pub distance_onset_km: Option<T>,
    pub crossover_km: Option<T>,
    pub max_differential_g: Option<T>,
    pub density_curve: Option<EffectCurve<T>>,
    pub distance_curve: Option<EffectCurve<T>>,
}

impl<T: Scalar> CorridorResult<T> {
    /// Distance intervals where the fitted density effect is positive and
    /// exceeds the fitted distance effect.
    pub fn density_bands(&self) -> Vec<(T, T)> {
        let (Some(dc), Some(sc)) = (&self.density_curve, &self.distance_curve) else {
            return Vec::new();
        };
        let mut bands = Vec::new();
        let mut open: Option<T> = None;
        let mut prev = dc.x[0];
        for (i, &x) in dc.x.iter().enumerate() {
            let inside = dc.fitted[i] > T::zero() && dc.fitted[i] > sc.fitted[i];
            match (inside, open) {
                (true, None) => open = Some(x),
                (false, Some(a)) => {
                    bands.push((a, prev));
                    open = None;
                }
                _ => {}
            }
            prev = x;
        }
        if let Some(a) = open {
            bands.push((a, prev));
        }
        bands
    }
}

/// First crossing of a curve from negative to positive, falling back to its
/// first crossing of either direction.
fn onset<T: Scalar>(curve: &EffectCurve<T>) -> Option<T> {
    let changes = sign_changes(&curve.x, &curve.fitted);
    changes
        .iter()
        .find(|c| c.1)
        .or(changes.first())
        .map(|c| c.0)
}

pub fn threshold_corridor<T: Scalar>(
    inputs: &[CorridorInput<T>],
    config: &CorridorConfig,
) -> Result<CorridorResult<T>> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument(
            "corridor analysis needs at least one TAZ".into(),
        ));
    }
    let mean = if config.trip_weighted_mean {
        let w: T = inputs.iter().map(|r| T::of(r.trip_count as f64)).sum();
        if !(w > T::zero()) {
            return Err(Error::Degenerate("no trips to weight the city mean".into()));
        }
        inputs
            .iter()
            .map(|r| r.emission_g * T::of(r.trip_count as f64))
            .sum::<T>()
            / w
    } else {
        inputs.iter().map(|r| r.emission_g).sum::<T>() / T::of_usize(inputs.len())
    };
    let above: Vec<&CorridorInput<T>> = inputs.iter().filter(|r| r.emission_g > mean).collect();
    let dominance = above
        .iter()
        .map(|r| {
            (
                r.taz_id.clone(),
                Dominance::classify(r.phi_density, r.phi_distance),
            )
        })
        .collect();
    let mut result = CorridorResult {
        city_mean_emission_g: mean,
        dominance,
        density_onset_km: None,
        distance_onset_km: None,
        crossover_km: None,
        max_differential_g: None,
        density_curve: None,
        distance_curve: None,
    };
    let distinct =
        above
            .iter()
            .map(|r| r.distance_to_center_km)
            .fold(Vec::new(), |mut v: Vec<T>, x| {
                if !v.contains(&x) && v.len() < 2 {
                    v.push(x);
                }
                v
            });
    if above.len() < MIN_CURVE_POINTS || distinct.len() < 2 {
        return Ok(result);
    }
    let pts = |f: fn(&CorridorInput<T>) -> T| -> Vec<(T, T)> {
        above
            .iter()
            .map(|r| (r.distance_to_center_km, f(r)))
            .collect()
    };
    let dc = fit_effect_curve(
        "population_density",
        &pts(|r| r.phi_density),
        config.bandwidth,
    )?;
    let sc = fit_effect_curve(
        "distance_to_center",
        &pts(|r| r.phi_distance),
        config.bandwidth,
    )?;
    result.density_onset_km = onset(&dc);
    result.distance_onset_km = onset(&sc);

    // smallest distance beyond which the distance effect stays at or above
    // the density effect
    let diff: Vec<T> = sc
        .fitted
        .iter()
        .zip(&dc.fitted)
        .map(|(s, d)| *s - *d)
        .collect();
    let n = diff.len();
    if diff[n - 1] >= T::zero() {
        let mut i = n - 1;
        while i > 0 && diff[i - 1] >= T::zero() {
            i -= 1;
        }
        result.crossover_km = Some(if i == 0 {
            dc.x[0]
        } else {
            let (a, b) = (diff[i - 1], diff[i]);
            dc.x[i - 1] + (dc.x[i] - dc.x[i - 1]) * (-a) / (b - a)
        });
    }
    let lo = result.density_onset_km.unwrap_or(dc.x[0]);
    let hi = result.crossover_km.unwrap_or(dc.x[n - 1]);
    result.max_differential_g =
        dc.x.iter()
            .zip(&diff)
            .filter(|(x, _)| **x >= lo && **x <= hi)
            .map(|(_, d)| -*d)
            .fold(None, |m: Option<T>, v| Some(m.map_or(v, |m| m.max(v))));
    result.density_curve = Some(dc);
    result.distance_curve = Some(sc);
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingShares<T> {
    pub ring_width_km: T,
    pub effect_threshold_g: T,
    pub counts: Vec<usize>,
    pub shares: Vec<T>,
    pub n_trips: usize,
}

impl<T: Scalar> RingShares<T> {
    /// Inner radius of ring `i` in km.
    pub fn ring_start_km(&self, i: usize) -> T {
        self.ring_width_km * T::of_usize(i)
    }

    /// Ring indices whose share exceeds both neighbours.
    pub fn peaks(&self) -> Vec<usize> {
        let s = &self.shares;
        (0..s.len())
            .filter(|&i| {
                let left = if i == 0 { T::zero() } else { s[i - 1] };
                let right = s.get(i + 1).copied().unwrap_or(T::zero());
                s[i] > left && s[i] > right
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripDestination<T> {
    pub origin_taz: String,
    /// Projected coordinates in metres.
    pub destination: Point<T>,
}

/// Shares of trip destinations per ring of nearest-center distance, over
/// trips whose origin TAZ has a distance effect above the threshold.
pub fn ring_destination_shares<T: Scalar>(
    trips: &[TripDestination<T>],
    centers: &[Point<T>],
    phi_distance: &BTreeMap<String, T>,
    ring_width_km: T,
    effect_threshold_g: T,
) -> Result<RingShares<T>> {
    if centers.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one center is required".into(),
        ));
    }
    if !(ring_width_km > T::zero()) {
        return Err(Error::InvalidArgument("ring width must be positive".into()));
    }
    let mut counts: Vec<usize> = Vec::new();
    let km = T::of(1000.0);
    for t in trips {
        let qualifies = phi_distance
            .get(&t.origin_taz)
            .is_some_and(|&p| p > effect_threshold_g);
        if !qualifies {
            continue;
        }
        let d = centers
            .iter()
            .map(|c| c.distance_m(&t.destination))
            .fold(T::infinity(), T::min)
            / km;
        let ring = (d / ring_width_km).floor().to_usize().unwrap_or(usize::MAX);
        if ring == usize::MAX {
            return Err(Error::InvalidArgument(
                "destination distance is not finite".into(),
            ));
        }
        if ring >= counts.len() {
            counts.resize(ring + 1, 0);
        }
        counts[ring] += 1;
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Degenerate(
            "no trips start in a TAZ whose distance effect exceeds the threshold".into(),
        ));
    }
    let shares = counts
        .iter()
        .map(|&c| T::of_usize(c) / T::of_usize(total))
        .collect();
    Ok(RingShares {
        ring_width_km,
        effect_threshold_g,
        counts,
        shares,
        n_trips: total,
    })
}

pub fn write_curve_csv<T: Scalar, W: Write>(curves: &[&EffectCurve<T>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "x", "fitted", "bandwidth", "method"])?;
    for c in curves {
        for (x, f) in c.x.iter().zip(&c.fitted) {
            w.write_record([
                c.feature.clone(),
                x.to_string(),
                f.to_string(),
                c.bandwidth.to_string(),
                c.method.clone(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_ring_csv<T: Scalar, W: Write>(rings: &RingShares<T>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ring_start_km", "ring_end_km", "count", "share"])?;
    for (i, (c, s)) in rings.counts.iter().zip(&rings.shares).enumerate() {
        w.write_record([
            rings.ring_start_km(i).to_string(),
            rings.ring_start_km(i + 1).to_string(),
            c.to_string(),
            s.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// FeatureCollection with each classified TAZ's polygon and dominance class.
pub fn dominance_geojson<T: Scalar>(
    result: &CorridorResult<T>,
    zones: &BTreeMap<String, Polygon<T>>,
) -> Value {
    let features: Vec<Value> = result
        .dominance
        .iter()
        .filter_map(|(id, d)| {
            let poly = zones.get(id)?;
            let mut ring: Vec<Value> = poly
                .exterior
                .iter()
                .map(|p| json!([p.x.as_f64(), p.y.as_f64()]))
                .collect();
            if let Some(first) = ring.first().cloned() {
                ring.push(first);
            }
            Some(json!({
                "type": "Feature",
                "properties": {"taz_id": id, "dominant": d.as_str()},
                "geometry": {"type": "Polygon", "coordinates": [ring]},
            }))
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}
