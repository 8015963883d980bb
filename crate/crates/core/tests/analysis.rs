use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use urbcause::analysis::{
    fit_effect_curve, ring_destination_shares, threshold_corridor, zero_crossing, CorridorConfig,
    CorridorInput, Dominance, TripDestination,
};
use urbcause::geo::Point;
use urbcause::stats;

#[test]
fn parabola_minimum_at_vertex() {
    let step = 0.25;
    let pts: Vec<(f64, f64)> = (0..81)
        .map(|i| {
            let x = i as f64 * step;
            (x, (x - 7.3).powi(2))
        })
        .collect();
    let c = fit_effect_curve("f", &pts, 0.3).unwrap();
    let (imin, _) =
        c.fitted.iter().enumerate().fold(
            (0, f64::INFINITY),
            |b, (i, &v)| if v < b.1 { (i, v) } else { b },
        );
    assert!((c.x[imin] - 7.3).abs() <= step, "minimum at {}", c.x[imin]);
}

#[test]
fn full_bandwidth_is_global_line() {
    let mut rng = stats::rng(1);
    let pts: Vec<(f64, f64)> = (0..50)
        .map(|_| {
            let x = rng.random::<f64>() * 10.0;
            (x, x.sin() * 3.0 + x)
        })
        .collect();
    let c = fit_effect_curve("f", &pts, 1.0).unwrap();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let b = sxy / sxx;
    for (x, f) in c.x.iter().zip(&c.fitted) {
        assert!((f - (my + b * (x - mx))).abs() < 1e-9);
    }
}

#[test]
fn noisy_line_crosses_near_22() {
    let mut rng = stats::rng(2);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let pts: Vec<(f64, f64)> = (0..400)
        .map(|_| {
            let x = rng.random::<f64>() * 60.0;
            (x, x - 22.0 + noise.sample(&mut rng))
        })
        .collect();
    let c = fit_effect_curve("distance_to_center", &pts, 0.3).unwrap();
    let z = zero_crossing(&c);
    assert_eq!(z.len(), 1, "crossings {z:?}");
    assert!((z[0] - 22.0).abs() <= 1.0);
}

#[test]
fn fit_is_affine_equivariant() {
    let mut rng = stats::rng(3);
    let pts: Vec<(f64, f64)> = (0..100)
        .map(|_| {
            let x = rng.random::<f64>() * 5.0;
            (x, (2.0 * x).cos() + rng.random::<f64>())
        })
        .collect();
    let (a, b) = (-2.5, 40.0);
    let base = fit_effect_curve("f", &pts, 0.3).unwrap();
    let moved: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x, a * y + b)).collect();
    let other = fit_effect_curve("f", &moved, 0.3).unwrap();
    for (u, v) in base.fitted.iter().zip(&other.fitted) {
        assert!((a * u + b - v).abs() < 1e-9);
    }
}

fn trip(origin: &str, x_km: f64) -> TripDestination<f64> {
    TripDestination {
        origin_taz: origin.into(),
        destination: Point::new(x_km * 1000.0, 0.0),
    }
}

#[test]
fn ring_shares_examples() {
    let phi = BTreeMap::from([("a".to_string(), 200.0), ("b".to_string(), 100.0)]);
    let center = [Point::new(0.0, 0.0)];
    let at_center =
        ring_destination_shares(&[trip("a", 0.0), trip("a", 0.0)], &center, &phi, 5.0, 150.0)
            .unwrap();
    assert_eq!(at_center.shares, vec![1.0]);
    let two = ring_destination_shares(
        &[trip("a", 3.0), trip("a", 7.0), trip("b", 40.0)],
        &center,
        &phi,
        5.0,
        150.0,
    )
    .unwrap();
    assert_eq!(two.shares, vec![0.5, 0.5]);
    assert!(ring_destination_shares(&[trip("b", 1.0)], &center, &phi, 5.0, 150.0).is_err());
}

#[test]
fn ring_shares_sum_to_one_with_several_centers() {
    let mut rng = stats::rng(4);
    let phi = BTreeMap::from([("a".to_string(), 500.0)]);
    let trips: Vec<_> = (0..1000)
        .map(|_| trip("a", rng.random::<f64>() * 80.0))
        .collect();
    let centers = [Point::new(0.0, 0.0), Point::new(60_000.0, 0.0)];
    let r = ring_destination_shares(&trips, &centers, &phi, 5.0, 150.0).unwrap();
    assert!((r.shares.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    assert!(r.shares.iter().all(|&s| s >= 0.0));
    // nearest-center distance never exceeds 30 km on this segment
    assert!(r.counts.len() <= 6);
}

fn corridor_row(id: usize, d: f64, dens: f64, dist: f64, emission: f64) -> CorridorInput<f64> {
    CorridorInput {
        taz_id: format!("t{id}"),
        distance_to_center_km: d,
        phi_density: dens,
        phi_distance: dist,
        emission_g: emission,
        trip_count: 10,
    }
}

#[test]
fn corridor_dominance_rules() {
    let rows = vec![
        corridor_row(0, 5.0, 30.0, 10.0, 100.0),
        corridor_row(1, 5.0, 0.0, 0.0, 10.0),
    ];
    let r = threshold_corridor(&rows, &CorridorConfig::default()).unwrap();
    assert_eq!(r.dominance.len(), 1);
    assert_eq!(r.dominance["t0"], Dominance::Density);
    let flat = vec![
        corridor_row(0, 5.0, 30.0, 10.0, 50.0),
        corridor_row(1, 6.0, 1.0, 2.0, 50.0),
    ];
    let r = threshold_corridor(&flat, &CorridorConfig::default()).unwrap();
    assert!(r.dominance.is_empty());
}

#[test]
fn corridor_dominance_invariant_under_equal_shift() {
    let mut rng = stats::rng(5);
    let rows: Vec<_> = (0..200)
        .map(|i| {
            corridor_row(
                i,
                rng.random::<f64>() * 50.0,
                rng.random::<f64>() * 200.0 - 50.0,
                rng.random::<f64>() * 200.0 - 50.0,
                rng.random::<f64>(),
            )
        })
        .collect();
    let base = threshold_corridor(&rows, &CorridorConfig::default()).unwrap();
    let shifted: Vec<_> = rows
        .iter()
        .map(|r| CorridorInput {
            phi_density: r.phi_density + 1000.0,
            phi_distance: r.phi_distance + 1000.0,
            ..r.clone()
        })
        .collect();
    let moved = threshold_corridor(&shifted, &CorridorConfig::default()).unwrap();
    for (id, d) in &base.dominance {
        if *d != Dominance::Neither {
            assert_eq!(moved.dominance[id], *d);
        }
    }
}

#[test]
fn constructed_corridor_bounds_are_ordered() {
    // density effect rises from 5 km and saturates; distance effect rises
    // from 15 km and overtakes density at 30 km
    let mut rng = stats::rng(6);
    let rows: Vec<_> = (0..600)
        .map(|i| {
            let d = rng.random::<f64>() * 60.0;
            let dens = 150.0 * ((d - 5.0) / 10.0).clamp(-0.5, 1.0);
            let dist = 10.0 * (d - 15.0);
            corridor_row(i, d, dens, dist, 1.0 + (i % 2) as f64)
        })
        .collect();
    let r = threshold_corridor(&rows, &CorridorConfig::default()).unwrap();
    let (a, b, c) = (
        r.density_onset_km.unwrap(),
        r.distance_onset_km.unwrap(),
        r.crossover_km.unwrap(),
    );
    assert!(a < b && b < c, "{a} {b} {c}");
    assert!((a - 5.0).abs() < 1.5 && (b - 15.0).abs() < 1.5 && (c - 30.0).abs() < 1.5);
    let bands = r.density_bands();
    assert_eq!(bands.len(), 1, "{bands:?}");
    assert!(r.max_differential_g.unwrap() > 100.0);
}
