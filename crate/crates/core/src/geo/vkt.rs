use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Departure window `[start, end)` in minutes after midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start_minute: u32,
    pub end_minute: u32,
}

impl TimeWindow {
    /// Morning commute window, 06:00 inclusive to 10:00 exclusive.
    pub const MORNING: TimeWindow = TimeWindow {
        start_minute: 6 * 60,
        end_minute: 10 * 60,
    };

    pub fn contains(&self, minute: u32) -> bool {
        minute >= self.start_minute && minute < self.end_minute
    }
}

impl Default for TimeWindow {
    fn default() -> Self {
        Self::MORNING
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripDistance<T> {
    pub origin_taz: String,
    pub distance_km: T,
    /// Departure time in minutes after midnight.
    pub departure_minute: u32,
}

/// Mean trip distance per origin zone over trips departing inside `window`.
/// Zones without an in-window trip are omitted.
pub fn mean_vkt_per_taz<T: Scalar>(
    trips: &[TripDistance<T>],
    window: TimeWindow,
) -> Result<BTreeMap<String, T>> {
    let mut acc: BTreeMap<String, (T, usize)> = BTreeMap::new();
    for t in trips {
        if !(t.distance_km >= T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "trip from `{}` has negative distance {}",
                t.origin_taz, t.distance_km
            )));
        }
        if !window.contains(t.departure_minute) {
            continue;
        }
        let e = acc.entry(t.origin_taz.clone()).or_insert((T::zero(), 0));
        e.0 += t.distance_km;
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(k, (sum, n))| (k, sum / T::of_usize(n)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trip(taz: &str, km: f64, h: u32, m: u32) -> TripDistance<f64> {
        TripDistance {
            origin_taz: taz.into(),
            distance_km: km,
            departure_minute: h * 60 + m,
        }
    }

    #[test]
    fn single_trip() {
        let m = mean_vkt_per_taz(&[trip("a", 5.0, 7, 0)], TimeWindow::MORNING).unwrap();
        assert_eq!(m["a"], 5.0);
    }

    #[test]
    fn window_boundaries() {
        let m = mean_vkt_per_taz(
            &[
                trip("a", 5.0, 5, 59),
                trip("a", 7.0, 10, 0),
                trip("b", 1.0, 6, 0),
            ],
            TimeWindow::MORNING,
        )
        .unwrap();
        assert!(!m.contains_key("a"));
        assert_eq!(m["b"], 1.0);
    }

    #[test]
    fn arithmetic_mean() {
        let trips = [
            trip("a", 3.0, 6, 30),
            trip("a", 5.0, 8, 0),
            trip("a", 10.0, 9, 59),
        ];
        assert_eq!(
            mean_vkt_per_taz(&trips, TimeWindow::MORNING).unwrap()["a"],
            6.0
        );
    }

    #[test]
    fn negative_distance_rejected() {
        assert!(mean_vkt_per_taz(&[trip("a", -1.0, 7, 0)], TimeWindow::MORNING).is_err());
    }
}
