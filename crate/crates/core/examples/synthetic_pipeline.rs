//! Runs the full pipeline on synthetic cities and prints the headline
//! quantities: held-out R2 per city, the corridor of one city and the ring
//! shares of a city with a secondary job cluster.

use std::collections::BTreeMap;
use std::time::Instant;

use urbcause::analysis::{
    ring_destination_shares, threshold_corridor, CorridorConfig, TripDestination,
};
use urbcause::dataset::{clean_taz, CityDataset, CleaningConfig};
use urbcause::emissions::EmissionFactorTable;
use urbcause::gbdt::{citywise_cross_validation, TrainConfig};
use urbcause::geo::features::DEFAULT_EMPLOYMENT_FRACTION;
use urbcause::geo::Point;
use urbcause::pipeline::{
    compute_features, corridor_inputs, default_chain, explain_city, model_features, train_pooled,
};
use urbcause::shapley::{ShapleyConfig, ValueKind};
use urbcause::synth::{generate_city, similar_cities, CityConfig, SecondaryCluster, SyntheticCity};

fn dataset(city: &SyntheticCity) -> CityDataset {
    let (kept, _) = clean_taz(&city.records, &CleaningConfig::default());
    let features = compute_features(
        &kept,
        &city.network,
        &city.zones,
        &[city.center],
        &city.employment,
        DEFAULT_EMPLOYMENT_FRACTION,
    )
    .unwrap();
    CityDataset::from_records(&city.config.name, &kept, &features).unwrap()
}

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let factor = EmissionFactorTable::<f64>::builtin()
        .get("Germany")
        .unwrap()
        .combined;
    let t0 = Instant::now();
    let base = CityConfig {
        name: "mono".into(),
        seed,
        ..CityConfig::default()
    };
    let cities = similar_cities(&base, 6).unwrap();
    println!("generated 6 cities in {:.1?}", t0.elapsed());
    let data: Vec<CityDataset> = cities.iter().map(dataset).collect();
    println!("features in {:.1?}", t0.elapsed());
    let features = model_features();
    let cv = citywise_cross_validation(&data, &features, "mean_vkt_km", &TrainConfig::default())
        .unwrap();
    for f in &cv {
        println!(
            "{} n={} r2_train={:.3} r2={:.3} mae={:.2} rmse={:.2} mean={:.2}",
            f.city, f.n, f.r2_train, f.r2, f.mae, f.rmse, f.mean_vkt
        );
    }
    println!("cv in {:.1?}", t0.elapsed());

    let model = train_pooled(&data[1..], &features, &TrainConfig::default()).unwrap();
    let ex = explain_city(
        &model,
        &data[0],
        &default_chain(),
        ValueKind::Causal,
        &ShapleyConfig::default(),
    )
    .unwrap();
    println!("explained {} TAZ in {:.1?}", ex.len(), t0.elapsed());
    let counts: BTreeMap<String, u64> = cities[0]
        .records
        .iter()
        .map(|r| (r.taz_id.clone(), r.trip_count))
        .collect();
    let inputs = corridor_inputs(&data[0], &ex, &counts, factor).unwrap();
    let cor = threshold_corridor(&inputs, &CorridorConfig::default()).unwrap();
    println!(
        "mean emission {:.1} g; onsets density {:?} distance {:?}; crossover {:?}; max diff {:?}",
        cor.city_mean_emission_g,
        cor.density_onset_km,
        cor.distance_onset_km,
        cor.crossover_km,
        cor.max_differential_g
    );
    println!("density bands {:?}", cor.density_bands());
    let mut by_ring: BTreeMap<usize, [usize; 3]> = BTreeMap::new();
    for r in &inputs {
        if let Some(d) = cor.dominance.get(&r.taz_id) {
            let e = by_ring
                .entry((r.distance_to_center_km / 2.5) as usize)
                .or_default();
            e[*d as usize] += 1;
        }
    }
    for (ring, c) in &by_ring {
        println!(
            "  ring {:>4.1} km: density {:>3} distance {:>3} neither {:>3}",
            *ring as f64 * 2.5,
            c[0],
            c[1],
            c[2]
        );
    }
    if let (Some(dc), Some(sc)) = (&cor.density_curve, &cor.distance_curve) {
        for i in (0..dc.x.len()).step_by((dc.x.len() / 15).max(1)) {
            println!(
                "  x={:>5.1} dens={:>8.1} dist={:>8.1}",
                dc.x[i], dc.fitted[i], sc.fitted[i]
            );
        }
    }

    let rings_for = |secondary: Option<SecondaryCluster>| {
        let city = generate_city(&CityConfig {
            name: "bi".into(),
            seed: seed + 50,
            secondary_cluster: secondary,
            ..CityConfig::default()
        })
        .unwrap();
        let d = dataset(&city);
        let model =
            train_pooled(std::slice::from_ref(&d), &features, &TrainConfig::default()).unwrap();
        let ex = explain_city(
            &model,
            &d,
            &default_chain(),
            ValueKind::Causal,
            &ShapleyConfig::default(),
        )
        .unwrap();
        let phi: BTreeMap<String, f64> = d
            .taz_ids
            .iter()
            .zip(&ex)
            .map(|(id, e)| (id.clone(), e.phi[0] * factor))
            .collect();
        let trips: Vec<TripDestination<f64>> = city
            .trips
            .iter()
            .map(|t| TripDestination {
                origin_taz: t.origin_taz.clone(),
                destination: Point::new(t.dest_x, t.dest_y),
            })
            .collect();
        ring_destination_shares(&trips, &[city.center], &phi, 5.0, 150.0).unwrap()
    };
    let radius: f64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(12.5);
    for secondary in [
        None,
        Some(SecondaryCluster {
            radius_km: radius,
            angle_deg: 30.0,
            share: 0.35,
            width_km: 1.5,
        }),
    ] {
        let label = if secondary.is_some() {
            "secondary"
        } else {
            "control"
        };
        let rings = rings_for(secondary);
        println!(
            "{label} ring shares {:?} (n={}) peaks {:?}",
            rings
                .shares
                .iter()
                .map(|s| (s * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>(),
            rings.n_trips,
            rings.peaks()
        );
    }
    println!("total {:.1?}", t0.elapsed());
}
