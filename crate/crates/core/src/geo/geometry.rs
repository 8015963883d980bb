use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Planar coordinates in metres of a projected reference system.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn distance_m(&self, other: &Point<T>) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(&self, other: &Point<T>, t: T) -> Point<T> {
        Point::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }
}

/// EPSG code of a projected coordinate reference system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Crs(pub u32);

/// A point tagged with the reference system it was projected into.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint<T> {
    pub crs: Crs,
    pub point: Point<T>,
}

impl<T: Scalar> GeoPoint<T> {
    pub fn new(crs: Crs, x: T, y: T) -> Self {
        Self {
            crs,
            point: Point::new(x, y),
        }
    }

    pub fn ensure_same_crs(&self, other: &GeoPoint<T>) -> Result<()> {
        if self.crs != other.crs {
            return Err(Error::CrsMismatch {
                left: self.crs.0,
                right: other.crs.0,
            });
        }
        Ok(())
    }
}

/// Simple polygon given by its exterior ring (closing vertex optional).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon<T> {
    pub exterior: Vec<Point<T>>,
}

impl<T: Scalar> Polygon<T> {
    pub fn new(mut exterior: Vec<Point<T>>) -> Self {
        if exterior.len() > 1 && exterior.first() == exterior.last() {
            exterior.pop();
        }
        Self { exterior }
    }

    pub fn rectangle(min: Point<T>, max: Point<T>) -> Self {
        Self::new(vec![
            min,
            Point::new(max.x, min.y),
            max,
            Point::new(min.x, max.y),
        ])
    }

    pub fn is_empty(&self) -> bool {
        self.exterior.len() < 3 || self.area_m2() == T::zero()
    }

    fn ring_edges(&self) -> impl Iterator<Item = (Point<T>, Point<T>)> + '_ {
        let n = self.exterior.len();
        (0..n).map(move |i| (self.exterior[i], self.exterior[(i + 1) % n]))
    }

    pub fn area_m2(&self) -> T {
        let twice: T = self.ring_edges().map(|(a, b)| a.x * b.y - b.x * a.y).sum();
        (twice / T::of(2.0)).abs()
    }

    pub fn centroid(&self) -> Option<Point<T>> {
        let mut a = T::zero();
        let mut cx = T::zero();
        let mut cy = T::zero();
        for (p, q) in self.ring_edges() {
            let cross = p.x * q.y - q.x * p.y;
            a += cross;
            cx += (p.x + q.x) * cross;
            cy += (p.y + q.y) * cross;
        }
        if a == T::zero() {
            return None;
        }
        let six_a = T::of(3.0) * a;
        Some(Point::new(cx / six_a, cy / six_a))
    }

    /// Even-odd point-in-polygon test. Points exactly on the ring follow the
    /// half-open crossing rule, so a shared edge belongs to exactly one of two
    /// adjacent polygons.
    pub fn contains(&self, p: &Point<T>) -> bool {
        if self.exterior.len() < 3 {
            return false;
        }
        let mut inside = false;
        for (a, b) in self.ring_edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Parameter intervals `[t0, t1] ⊆ [0, 1]` of segment `a→b` lying inside.
    pub fn clip_segment(&self, a: &Point<T>, b: &Point<T>) -> Vec<(T, T)> {
        if self.exterior.len() < 3 {
            return Vec::new();
        }
        let mut cuts = vec![T::zero(), T::one()];
        let d = Point::new(b.x - a.x, b.y - a.y);
        for (p, q) in self.ring_edges() {
            let e = Point::new(q.x - p.x, q.y - p.y);
            let denom = d.x * e.y - d.y * e.x;
            if denom == T::zero() {
                continue;
            }
            let w = Point::new(p.x - a.x, p.y - a.y);
            let t = (w.x * e.y - w.y * e.x) / denom;
            let u = (w.x * d.y - w.y * d.x) / denom;
            if t > T::zero() && t < T::one() && u >= T::zero() && u <= T::one() {
                cuts.push(t);
            }
        }
        cuts.sort_by(|x, y| x.partial_cmp(y).expect("finite parameters"));
        cuts.dedup();
        let half = T::of(0.5);
        let mut out: Vec<(T, T)> = Vec::new();
        for w in cuts.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            if t1 <= t0 {
                continue;
            }
            let mid = a.lerp(b, (t0 + t1) * half);
            if self.contains(&mid) {
                match out.last_mut() {
                    Some(last) if last.1 == t0 => last.1 = t1,
                    _ => out.push((t0, t1)),
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Polygon<f64> {
        Polygon::rectangle(Point::new(0.0, 0.0), Point::new(1.0, 1.0))
    }

    #[test]
    fn square_area_and_centroid() {
        let sq = unit_square();
        assert_eq!(sq.area_m2(), 1.0);
        assert_eq!(sq.centroid().unwrap(), Point::new(0.5, 0.5));
    }

    #[test]
    fn containment() {
        let sq = unit_square();
        assert!(sq.contains(&Point::new(0.5, 0.5)));
        assert!(!sq.contains(&Point::new(1.5, 0.5)));
    }

    #[test]
    fn clip_crossing_segment() {
        let sq = unit_square();
        let parts = sq.clip_segment(&Point::new(-1.0, 0.5), &Point::new(3.0, 0.5));
        assert_eq!(parts.len(), 1);
        assert!((parts[0].0 - 0.25).abs() < 1e-12);
        assert!((parts[0].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn clip_inside_and_outside() {
        let sq = unit_square();
        assert_eq!(
            sq.clip_segment(&Point::new(0.2, 0.2), &Point::new(0.8, 0.8)),
            vec![(0.0, 1.0)]
        );
        assert!(sq
            .clip_segment(&Point::new(2.0, 2.0), &Point::new(3.0, 3.0))
            .is_empty());
    }

    #[test]
    fn crs_mismatch_detected() {
        let a = GeoPoint::new(Crs(25833), 0.0, 0.0);
        let b = GeoPoint::new(Crs(32610), 0.0, 0.0);
        assert!(a.ensure_same_crs(&b).is_err());
        assert!(a.ensure_same_crs(&a).is_ok());
    }
}
