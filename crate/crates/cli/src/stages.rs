//! The pipeline stages. Each reads its inputs (configured city files or
//! artifacts of earlier stages in the same output root), writes artifacts
//! into its own directory and commits a manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use urbcause::analysis::{
    dominance_geojson, ring_destination_shares, threshold_corridor, write_curve_csv,
    write_ring_csv, CorridorConfig, CorridorInput, Dominance, TripDestination,
};
use urbcause::causal::{
    stability_analysis, BackgroundKnowledge, KnowledgeSpec, PcConfig, GRAPH_SCHEMA,
};
use urbcause::dataset::{
    clean_taz, read_taz_csv, read_taz_geojson, read_zone_polygons, write_taz_csv, CityDataset,
    ColumnSchema, TazRecord, TARGET_NAME,
};
use urbcause::emissions::EmissionFactorTable;
use urbcause::gbdt::{citywise_cross_validation, write_metrics_csv, GbdtModel};
use urbcause::geo::features::{EmploymentField, FEATURE_NAMES};
use urbcause::geo::{FeatureVector, Point, RoadNetwork};
use urbcause::matrix::DataMatrix;
use urbcause::pipeline::{compute_features, explain_city, train_pooled};
use urbcause::shapley::{
    mean_absolute_importance, write_explanations_csv, CausalChain, ShapleyConfig,
};
use urbcause::stats::derive_seed;
use urbcause::synth::{read_trips_csv, similar_cities, CityConfig};

use crate::config::{CityInput, PipelineConfig, ResolvedCity};
use crate::failure::Failure;
use crate::manifest::{Manifest, RunInfo, Stage};

pub const DISCOVERY_SEED_STREAM: u64 = 1;
pub const SHAPLEY_SEED_STREAM: u64 = 2;

pub struct Context<'a> {
    pub root: &'a Path,
    pub config: &'a PipelineConfig,
    pub cities: &'a [ResolvedCity],
    pub run: &'a RunInfo,
}

fn csv_failure(what: &str) -> impl Fn(csv::Error) -> Failure + '_ {
    move |e| Failure::other(what, e)
}

fn flush<W: std::io::Write>(w: &mut csv::Writer<W>, what: &str) -> Result<(), Failure> {
    w.flush().map_err(|e| Failure::other(what, e))
}

pub fn ingest(ctx: &Context) -> Result<Manifest, Failure> {
    let mut stage = Stage::begin(ctx.root, "ingest")?;
    let rules = ctx.config.cleaning.to_core();
    let mut all = Vec::new();
    let mut report = BTreeMap::new();
    let mut seen = std::collections::BTreeSet::new();
    for c in ctx.cities {
        let text = stage.read_string(&c.taz)?;
        let mut schema = ColumnSchema::identity();
        for (field, column) in &c.columns {
            schema = schema.with(field, column);
        }
        let source = c.taz.display().to_string();
        let is_geojson = c
            .taz
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("geojson") || e.eq_ignore_ascii_case("json"));
        let mut records = if is_geojson {
            read_taz_geojson(&text, &schema, &source)?
        } else {
            read_taz_csv(text.as_bytes(), &schema, &source)?
        };
        for r in &mut records {
            r.city = c.name.clone();
            if !seen.insert(r.taz_id.clone()) {
                return Err(Failure::Data(format!(
                    "TAZ id `{}` appears twice",
                    r.taz_id
                )));
            }
        }
        let (kept, removed) = clean_taz(&records, &rules);
        if kept.is_empty() {
            return Err(Failure::Data(format!(
                "city `{}` has no TAZ left after cleaning",
                c.name
            )));
        }
        report.insert(c.name.clone(), removed);
        all.extend(kept);
    }
    write_taz_csv(&all, stage.create("taz_clean.csv")?)?;
    stage.write_json("removal_report.json", &report)?;
    stage.commit(ctx.run)
}

/// One row of `features.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeatureRow {
    city: String,
    taz_id: String,
    distance_to_center_km: f64,
    distance_to_employment_km: f64,
    population_density_per_km2: f64,
    street_connectivity_per_km2: f64,
    income: f64,
    mean_vkt_km: f64,
    trip_count: u64,
}

pub fn features(ctx: &Context) -> Result<Manifest, Failure> {
    let mut stage = Stage::begin(ctx.root, "features")?;
    let text = stage.read_artifact("ingest", "taz_clean.csv")?;
    let records: Vec<TazRecord> = read_taz_csv(
        text.as_slice(),
        &ColumnSchema::identity(),
        "ingest/taz_clean.csv",
    )?;
    let mut w = csv::Writer::from_writer(stage.create("features.csv")?);
    for c in ctx.cities {
        let mine: Vec<TazRecord> = records
            .iter()
            .filter(|r| r.city == c.name)
            .cloned()
            .collect();
        let zones_text = stage.read_string(&c.zones)?;
        let zones = read_zone_polygons(&zones_text, &c.zone_id_field)?;
        let nodes = stage.read(&c.network_nodes)?;
        let edges = stage.read(&c.network_edges)?;
        let network = RoadNetwork::<f64>::from_csv_readers(nodes.as_slice(), edges.as_slice())?;
        let employment =
            EmploymentField::<f64>::from_csv_reader(stage.read(&c.employment)?.as_slice())?;
        let centers: Vec<Point<f64>> = c.centers.iter().map(|p| Point::new(p[0], p[1])).collect();
        let table = compute_features(
            &mine,
            &network,
            &zones,
            &centers,
            &employment,
            ctx.config.features.employment_fraction,
        )?;
        for r in &mine {
            let f: &FeatureVector<f64> = &table[&r.taz_id];
            w.serialize(FeatureRow {
                city: c.name.clone(),
                taz_id: r.taz_id.clone(),
                distance_to_center_km: f.distance_to_center_km,
                distance_to_employment_km: f.distance_to_employment_km,
                population_density_per_km2: f.population_density_per_km2,
                street_connectivity_per_km2: f.street_connectivity_per_km2,
                income: f.income,
                mean_vkt_km: r.mean_vkt_km,
                trip_count: r.trip_count,
            })
            .map_err(csv_failure("features.csv"))?;
        }
    }
    flush(&mut w, "features.csv")?;
    drop(w);
    stage.commit(ctx.run)
}

/// Per-city datasets (five features and the target) in configured city
/// order, plus trip counts by TAZ.
fn load_datasets(
    stage: &mut Stage,
    ctx: &Context,
) -> Result<(Vec<CityDataset>, BTreeMap<String, u64>), Failure> {
    let bytes = stage.read_artifact("features", "features.csv")?;
    let rows: Vec<FeatureRow> = csv::Reader::from_reader(bytes.as_slice())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::data("features/features.csv", e))?;
    let mut names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    names.push(TARGET_NAME.into());
    let mut out = Vec::new();
    for c in ctx.cities {
        let mine: Vec<&FeatureRow> = rows.iter().filter(|r| r.city == c.name).collect();
        let ids = mine.iter().map(|r| r.taz_id.clone()).collect();
        let data: Vec<Vec<f64>> = mine
            .iter()
            .map(|r| {
                vec![
                    r.distance_to_center_km,
                    r.distance_to_employment_km,
                    r.population_density_per_km2,
                    r.street_connectivity_per_km2,
                    r.income,
                    r.mean_vkt_km,
                ]
            })
            .collect();
        out.push(CityDataset::new(
            c.name.clone(),
            ids,
            DataMatrix::from_rows(names.clone(), &data)?,
        )?);
    }
    let counts = rows
        .iter()
        .map(|r| (r.taz_id.clone(), r.trip_count))
        .collect();
    Ok((out, counts))
}

pub fn discover(ctx: &Context) -> Result<Manifest, Failure> {
    let mut stage = Stage::begin(ctx.root, "discover")?;
    let (cities, _) = load_datasets(&mut stage, ctx)?;
    let d = &ctx.config.discovery;
    if d.pool % cities.len() != 0 {
        return Err(Failure::Config(format!(
            "discovery.pool: {} is not divisible by {} cities",
            d.pool,
            cities.len()
        )));
    }
    let variables = cities[0].data.names().to_vec();
    let knowledge = if d.background_knowledge {
        BackgroundKnowledge::resolve(
            &KnowledgeSpec::urban_form("distance_to_center_km", "income", TARGET_NAME),
            &variables,
        )?
    } else {
        BackgroundKnowledge::none()
    };
    let pc = PcConfig {
        ci: ctx.config.ci_config(),
        stable: d.stable,
    };
    let seed = derive_seed(ctx.config.seed, DISCOVERY_SEED_STREAM);
    stage.seed("discovery", seed);
    let (report, graph) = stability_analysis(&cities, d.rounds, d.pool, seed, &pc, &knowledge)?;
    for (r, s) in report.round_seeds.iter().enumerate() {
        stage.seed(&format!("discovery.round{r}"), *s);
    }
    stage.write_json("graph.json", &graph.to_json())?;
    stage.write("graph.dot", graph.to_dot().as_bytes())?;
    stage.write("graph.schema.json", GRAPH_SCHEMA.as_bytes())?;
    stage.write_json("stability.json", &report)?;
    stage.commit(ctx.run)
}

pub fn train(ctx: &Context) -> Result<Manifest, Failure> {
    let mut stage = Stage::begin(ctx.root, "train")?;
    let (cities, _) = load_datasets(&mut stage, ctx)?;
    let cfg = ctx.config.gbdt.to_core(ctx.config.seed);
    stage.seed("gbdt", cfg.seed);
    let features = &ctx.config.gbdt.features;
    for (i, f) in features.iter().enumerate() {
        if !FEATURE_NAMES.contains(&f.as_str()) {
            return Err(Failure::Config(format!(
                "gbdt.features[{i}]: unknown feature `{f}`"
            )));
        }
    }
    if cities.len() >= 2 {
        let folds = citywise_cross_validation(&cities, features, TARGET_NAME, &cfg)?;
        write_metrics_csv(&folds, stage.create("cv_metrics.csv")?)?;
    }
    let model = train_pooled(&cities, features, &cfg)?;
    let mut json = model.to_json()?;
    json.push('\n');
    stage.write("model.json", json.as_bytes())?;
    stage.commit(ctx.run)
}

fn chain_for(config: &PipelineConfig, feature_names: &[String]) -> Result<CausalChain, Failure> {
    let d = feature_names.len();
    if config.shapley.chain.is_empty() {
        return Ok(CausalChain::singletons(&(0..d).collect::<Vec<_>>()));
    }
    let mut components = Vec::new();
    for (i, comp) in config.shapley.chain.iter().enumerate() {
        let mut idx = Vec::new();
        for (j, name) in comp.iter().enumerate() {
            let k = feature_names
                .iter()
                .position(|f| f == name)
                .ok_or_else(|| {
                    Failure::Config(format!(
                        "shapley.chain[{i}][{j}]: `{name}` is not a model feature"
                    ))
                })?;
            idx.push(k);
        }
        components.push(idx);
    }
    let chain = CausalChain { components };
    chain
        .validate(d)
        .map_err(|e| Failure::Config(format!("shapley.chain: {e}")))?;
    Ok(chain)
}

fn shapley_file(city: &str) -> String {
    format!("shapley/{city}.csv")
}

#[derive(Serialize)]
struct ImportanceRow<'a> {
    city: &'a str,
    feature: &'a str,
    mean_abs_phi: f64,
    share: f64,
}

pub fn explain(ctx: &Context) -> Result<Manifest, Failure> {
    let mut stage = Stage::begin(ctx.root, "explain")?;
    let (cities, _) = load_datasets(&mut stage, ctx)?;
    let model_text = stage.read_artifact_string("train", "model.json")?;
    let model = GbdtModel::<f64>::from_json(&model_text)?;
    let chain = chain_for(ctx.config, &model.feature_names)?;
    let seed = derive_seed(ctx.config.seed, SHAPLEY_SEED_STREAM);
    stage.seed("shapley", seed);
    let cfg = ShapleyConfig {
        n_samples: ctx.config.shapley.n_samples,
        knn_k: ctx.config.shapley.knn_k,
        seed,
    };
    let mut w = csv::Writer::from_writer(stage.create("importance.csv")?);
    for c in &cities {
        let ex = explain_city(&model, c, &chain, ctx.config.shapley.kind, &cfg)?;
        write_explanations_csv(
            &c.taz_ids,
            &model.feature_names,
            &ex,
            stage.create(&shapley_file(&c.city))?,
        )?;
        let raw = mean_absolute_importance(&ex, false)?;
        let share = mean_absolute_importance(&ex, true)?;
        for (k, f) in model.feature_names.iter().enumerate() {
            w.serialize(ImportanceRow {
                city: &c.city,
                feature: f,
                mean_abs_phi: raw[k],
                share: share[k],
            })
            .map_err(csv_failure("importance.csv"))?;
        }
    }
    flush(&mut w, "importance.csv")?;
    drop(w);
    stage.commit(ctx.run)
}

/// Attributions of one city by TAZ id for the named feature columns.
fn read_phi(
    text: &[u8],
    file: &str,
    features: &[&str],
) -> Result<BTreeMap<String, Vec<f64>>, Failure> {
    let mut r = csv::Reader::from_reader(text);
    let headers = r.headers().map_err(|e| Failure::data(file, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Failure::Data(format!("{file} has no column `{name}`")))
    };
    let id = col("taz_id")?;
    let cols = features
        .iter()
        .map(|f| col(&format!("phi_{f}")))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Failure::data(file, e))?;
        let vals = cols
            .iter()
            .map(|&c| rec[c].parse::<f64>().map_err(|e| Failure::data(file, e)))
            .collect::<Result<Vec<_>, _>>()?;
        out.insert(rec[id].to_string(), vals);
    }
    Ok(out)
}

#[derive(Serialize)]
struct CorridorSummary {
    city: String,
    emission_factor_g_per_km: f64,
    city_mean_emission_g: f64,
    density_onset_km: Option<f64>,
    distance_onset_km: Option<f64>,
    crossover_km: Option<f64>,
    max_differential_g: Option<f64>,
    density_bands_km: Vec<(f64, f64)>,
    taz_density_dominant: usize,
    taz_distance_dominant: usize,
    taz_neither: usize,
    ring_peaks: Option<Vec<usize>>,
}

pub fn analyze(ctx: &Context) -> Result<Manifest, Failure> {
    let mut stage = Stage::begin(ctx.root, "analyze")?;
    let (cities, counts) = load_datasets(&mut stage, ctx)?;
    let factors = EmissionFactorTable::<f64>::builtin();
    let a = &ctx.config.analysis;
    let corridor_cfg = CorridorConfig {
        bandwidth: a.bandwidth,
        trip_weighted_mean: a.trip_weighted_mean,
    };
    let mut summaries = Vec::new();
    for (c, input) in cities.iter().zip(ctx.cities) {
        let factor = factors
            .get(&input.region)
            .expect("region checked at load")
            .combined;
        let file = shapley_file(&c.city);
        let text = stage.read_artifact("explain", &file)?;
        let phi = read_phi(
            &text,
            &file,
            &["population_density_per_km2", "distance_to_center_km"],
        )?;
        let dc = c
            .data
            .index_of("distance_to_center_km")
            .expect("feature column");
        let vkt = c.data.index_of(TARGET_NAME).expect("target column");
        let mut inputs = Vec::with_capacity(c.len());
        for (i, id) in c.taz_ids.iter().enumerate() {
            let p = phi
                .get(id)
                .ok_or_else(|| Failure::Data(format!("{file} has no row for TAZ `{id}`")))?;
            inputs.push(CorridorInput {
                taz_id: id.clone(),
                distance_to_center_km: c.data.column(dc)[i],
                phi_density: p[0] * factor,
                phi_distance: p[1] * factor,
                emission_g: c.data.column(vkt)[i] * factor,
                trip_count: counts.get(id).copied().unwrap_or(0),
            });
        }
        let result = threshold_corridor(&inputs, &corridor_cfg)?;
        let dir = &c.city;
        let curves: Vec<_> = [&result.density_curve, &result.distance_curve]
            .into_iter()
            .flatten()
            .collect();
        write_curve_csv(&curves, stage.create(&format!("{dir}/curves.csv"))?)?;
        let zones_text = stage.read_string(&input.zones)?;
        let zones = read_zone_polygons(&zones_text, &input.zone_id_field)?;
        stage.write_json(
            &format!("{dir}/dominance.geojson"),
            &dominance_geojson(&result, &zones),
        )?;

        let mut ring_peaks = None;
        if let Some(trips_path) = &input.trips {
            let trips = read_trips_csv(stage.read(trips_path)?.as_slice())?;
            let dest: Vec<TripDestination<f64>> = trips
                .iter()
                .map(|t| TripDestination {
                    origin_taz: t.origin_taz.clone(),
                    destination: Point::new(t.dest_x, t.dest_y),
                })
                .collect();
            let phi_distance: BTreeMap<String, f64> = inputs
                .iter()
                .map(|r| (r.taz_id.clone(), r.phi_distance))
                .collect();
            let centers: Vec<Point<f64>> = input
                .centers
                .iter()
                .map(|p| Point::new(p[0], p[1]))
                .collect();
            let rings = ring_destination_shares(
                &dest,
                &centers,
                &phi_distance,
                a.ring_width_km,
                a.effect_threshold_g,
            )?;
            write_ring_csv(&rings, stage.create(&format!("{dir}/rings.csv"))?)?;
            ring_peaks = Some(rings.peaks());
        }
        let count = |d: Dominance| result.dominance.values().filter(|&&v| v == d).count();
        summaries.push(CorridorSummary {
            city: c.city.clone(),
            emission_factor_g_per_km: factor,
            city_mean_emission_g: result.city_mean_emission_g,
            density_onset_km: result.density_onset_km,
            distance_onset_km: result.distance_onset_km,
            crossover_km: result.crossover_km,
            max_differential_g: result.max_differential_g,
            density_bands_km: result.density_bands(),
            taz_density_dominant: count(Dominance::Density),
            taz_distance_dominant: count(Dominance::Distance),
            taz_neither: count(Dominance::Neither),
            ring_peaks,
        });
    }
    stage.write_json("corridor.json", &summaries)?;
    stage.commit(ctx.run)
}

/// Configuration written next to the synthetic cities so that `all` can run
/// on them directly.
#[derive(Serialize)]
struct GeneratedConfig {
    seed: u64,
    cities: Vec<CityInput>,
}

pub fn synth(root: &Path, config: &PipelineConfig, run: &RunInfo) -> Result<Manifest, Failure> {
    let mut stage = Stage::begin(root, "synth")?;
    let base = CityConfig {
        seed: config.seed,
        ..config.synth.city.clone()
    };
    stage.seed("synth", base.seed);
    let cities = similar_cities(&base, config.synth.count)?;
    let mut inputs = Vec::new();
    for city in &cities {
        let name = city.config.name.clone();
        stage.seed(&format!("synth.{name}"), city.config.seed);
        city.write(&stage.artifact_path(&name)?)?;
        inputs.push(CityInput {
            name: name.clone(),
            dir: Some(name.into()),
            taz: None,
            zones: None,
            network_nodes: None,
            network_edges: None,
            employment: None,
            trips: None,
            centers: Vec::new(),
            region: "Germany".into(),
            zone_id_field: "taz_id".into(),
            columns: BTreeMap::new(),
        });
    }
    let generated = GeneratedConfig {
        seed: config.seed,
        cities: inputs,
    };
    let text = toml::to_string(&generated).map_err(|e| Failure::other("pipeline.toml", e))?;
    stage.write("pipeline.toml", text.as_bytes())?;
    stage.commit(run)
}
