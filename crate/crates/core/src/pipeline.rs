//! Stage helpers shared by the command-line pipeline and the end-to-end
//! tests: feature computation, pooled training on per-city standardized
//! features, Shapley explanation of one city and corridor inputs.

use std::collections::BTreeMap;

use crate::analysis::CorridorInput;
use crate::dataset::{CityDataset, CityScaler, FeatureTable, TazRecord, TARGET_NAME};
use crate::error::{Error, Result};
use crate::gbdt::{fit_named, GbdtModel, TrainConfig};
use crate::geo::features::{
    count_intersections, distance_to_employment_km, distance_to_nearest_center_km,
    population_density, street_connectivity, EmploymentField, EmploymentSelector,
};
use crate::geo::{FeatureVector, Point, Polygon, RoadNetwork};
use crate::matrix::DataMatrix;
use crate::shapley::{explain_rows, CausalChain, ShapleyConfig, ShapleyExplanation, ValueKind};

/// Features with a direct edge into the target in the urban-form graph, in
/// causal-chain order.
pub const MODEL_FEATURES: [&str; 4] = [
    "distance_to_center_km",
    "distance_to_employment_km",
    "population_density_per_km2",
    "street_connectivity_per_km2",
];

/// Index of the density and distance features within [`MODEL_FEATURES`].
pub const DISTANCE_FEATURE: usize = 0;
pub const DENSITY_FEATURE: usize = 2;

pub fn model_features() -> Vec<String> {
    MODEL_FEATURES.iter().map(|s| s.to_string()).collect()
}

/// Singleton chain in [`MODEL_FEATURES`] order.
pub fn default_chain() -> CausalChain {
    CausalChain::singletons(&[0, 1, 2, 3])
}

/// Computes the five features for every record that has a zone polygon.
pub fn compute_features(
    records: &[TazRecord],
    network: &RoadNetwork<f64>,
    zones: &BTreeMap<String, Polygon<f64>>,
    centers: &[Point<f64>],
    employment: &EmploymentField<f64>,
    employment_fraction: f64,
) -> Result<FeatureTable> {
    let mut out = FeatureTable::new();
    for r in records {
        let zone = zones
            .get(&r.taz_id)
            .ok_or_else(|| Error::Malformed(format!("no zone polygon for TAZ `{}`", r.taz_id)))?;
        let c = r.centroid();
        let fv = FeatureVector {
            distance_to_center_km: distance_to_nearest_center_km(&c, centers)
                .ok_or_else(|| Error::InvalidArgument("at least one center is required".into()))?,
            distance_to_employment_km: distance_to_employment_km(
                &c,
                employment,
                employment_fraction,
                EmploymentSelector::NearestMass,
            )?,
            population_density_per_km2: population_density(r.population, r.area_km2)?,
            street_connectivity_per_km2: street_connectivity(
                count_intersections(network, zone) as f64,
                r.area_km2,
            )?,
            income: r.income,
        };
        fv.validate()?;
        out.insert(r.taz_id.clone(), fv);
    }
    Ok(out)
}

/// Feature columns of one city standardized within that city, plus the
/// raw target.
pub fn standardized_city(
    city: &CityDataset,
    features: &[String],
) -> Result<(DataMatrix, Vec<f64>, CityScaler)> {
    let idx = |name: &str| {
        city.data.index_of(name).ok_or_else(|| {
            Error::InvalidArgument(format!("city `{}` lacks column `{name}`", city.city))
        })
    };
    let cols = features
        .iter()
        .map(|f| idx(f))
        .collect::<Result<Vec<_>>>()?;
    let x = city.data.select_columns(&cols);
    let scaler = CityScaler::fit(&city.city, &x)?;
    let xs = scaler.transform(&x)?;
    Ok((xs, city.data.column(idx(TARGET_NAME)?).to_vec(), scaler))
}

pub fn matrix_rows(m: &DataMatrix) -> Vec<Vec<f64>> {
    (0..m.n_rows()).map(|i| m.row(i)).collect()
}

/// Fits one model on all cities with features standardized per city.
pub fn train_pooled(
    cities: &[CityDataset],
    features: &[String],
    config: &TrainConfig,
) -> Result<GbdtModel<f64>> {
    let mut cols = vec![Vec::new(); features.len()];
    let mut y = Vec::new();
    for c in cities {
        let (x, t, _) = standardized_city(c, features)?;
        for (f, col) in cols.iter_mut().enumerate() {
            col.extend_from_slice(x.column(f));
        }
        y.extend(t);
    }
    fit_named(&cols, &y, config, features.to_vec())
}

/// Explains every TAZ of `city`; the city's own standardized rows serve as
/// the reference distribution.
pub fn explain_city(
    model: &GbdtModel<f64>,
    city: &CityDataset,
    chain: &CausalChain,
    kind: ValueKind,
    config: &ShapleyConfig,
) -> Result<Vec<ShapleyExplanation<f64>>> {
    let (x, _, _) = standardized_city(city, &model.feature_names)?;
    let rows = matrix_rows(&x);
    explain_rows(model, &rows, kind, chain, &rows, config)
}

/// Corridor rows for one city: attributions converted from km to grams with
/// `factor_g_per_km`, raw distance to center, per-TAZ emission of the mean
/// trip.
pub fn corridor_inputs(
    city: &CityDataset,
    explanations: &[ShapleyExplanation<f64>],
    trip_counts: &BTreeMap<String, u64>,
    factor_g_per_km: f64,
) -> Result<Vec<CorridorInput<f64>>> {
    if explanations.len() != city.len() {
        return Err(Error::InvalidArgument(
            "one explanation per TAZ is required".into(),
        ));
    }
    let col = |name: &str| {
        city.data.index_of(name).ok_or_else(|| {
            Error::InvalidArgument(format!("city `{}` lacks column `{name}`", city.city))
        })
    };
    let (dc, vkt) = (col(MODEL_FEATURES[DISTANCE_FEATURE])?, col(TARGET_NAME)?);
    Ok(city
        .taz_ids
        .iter()
        .enumerate()
        .map(|(i, id)| CorridorInput {
            taz_id: id.clone(),
            distance_to_center_km: city.data.column(dc)[i],
            phi_density: explanations[i].phi[DENSITY_FEATURE] * factor_g_per_km,
            phi_distance: explanations[i].phi[DISTANCE_FEATURE] * factor_g_per_km,
            emission_g: city.data.column(vkt)[i] * factor_g_per_km,
            trip_count: trip_counts.get(id).copied().unwrap_or(0),
        })
        .collect())
}
