//! TAZ records, ingestion, cleaning, per-city standardization and balanced
//! cross-city pooling.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo::{FeatureVector, Point, Polygon, TimeWindow, FEATURE_NAMES};
use crate::matrix::DataMatrix;
use crate::stats;

/// Column name of the target in every [`CityDataset`].
pub const TARGET_NAME: &str = "mean_vkt_km";

/// One traffic assignment zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TazRecord {
    pub taz_id: String,
    pub city: String,
    pub centroid_x: f64,
    pub centroid_y: f64,
    pub area_km2: f64,
    pub population: f64,
    pub jobs: f64,
    pub income: f64,
    pub mean_vkt_km: f64,
    pub trip_count: u64,
    pub is_airport: bool,
    pub boundary_overlap_fraction: f64,
}

impl TazRecord {
    pub fn centroid(&self) -> Point<f64> {
        Point::new(self.centroid_x, self.centroid_y)
    }

    /// Checks the record invariants, naming the first offending column.
    pub fn validate(&self, row: usize) -> Result<()> {
        let bad = |column: &str, message: String| Error::InvalidField {
            row,
            column: column.into(),
            message,
        };
        if !(self.area_km2 > 0.0 && self.area_km2.is_finite()) {
            return Err(bad(
                "area_km2",
                format!("must be positive, got {}", self.area_km2),
            ));
        }
        for (name, v) in [
            ("population", self.population),
            ("jobs", self.jobs),
            ("mean_vkt_km", self.mean_vkt_km),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(name, format!("must be nonnegative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.boundary_overlap_fraction) {
            return Err(bad(
                "boundary_overlap_fraction",
                format!("must lie in [0, 1], got {}", self.boundary_overlap_fraction),
            ));
        }
        for (name, v) in [
            ("centroid_x", self.centroid_x),
            ("centroid_y", self.centroid_y),
            ("income", self.income),
        ] {
            if !v.is_finite() {
                return Err(bad(name, "must be finite".into()));
            }
        }
        Ok(())
    }
}

const REQUIRED_FIELDS: [&str; 10] = [
    "taz_id",
    "city",
    "centroid_x",
    "centroid_y",
    "area_km2",
    "population",
    "jobs",
    "income",
    "mean_vkt_km",
    "trip_count",
];

/// Maps record fields to source column names; unmapped fields use their own
/// name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ColumnSchema {
    pub columns: BTreeMap<String, String>,
}

impl ColumnSchema {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn with(mut self, field: &str, column: &str) -> Self {
        self.columns.insert(field.into(), column.into());
        self
    }

    pub fn column<'a>(&'a self, field: &'a str) -> &'a str {
        self.columns.get(field).map_or(field, String::as_str)
    }
}

fn parse_f64(row: usize, column: &str, raw: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| Error::InvalidField {
        row,
        column: column.into(),
        message: format!("expected a number, got `{raw}`"),
    })
}

fn parse_count(row: usize, column: &str, raw: &str) -> Result<u64> {
    let v = parse_f64(row, column, raw)?;
    if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::InvalidField {
            row,
            column: column.into(),
            message: format!("expected a nonnegative integer, got `{raw}`"),
        });
    }
    Ok(v as u64)
}

fn parse_bool(row: usize, column: &str, raw: &str) -> Result<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "t" | "y" => Ok(true),
        "false" | "0" | "no" | "f" | "n" | "" => Ok(false),
        _ => Err(Error::InvalidField {
            row,
            column: column.into(),
            message: format!("expected a boolean, got `{raw}`"),
        }),
    }
}

/// Builds a record from a field lookup; `get` returns the raw text of a
/// source column or `None` when it is absent.
fn record_from_fields(
    row: usize,
    schema: &ColumnSchema,
    get: impl Fn(&str) -> Option<String>,
) -> Result<TazRecord> {
    let req = |field: &str| -> Result<String> {
        let col = schema.column(field);
        get(col).ok_or_else(|| Error::InvalidField {
            row,
            column: col.into(),
            message: "missing value".into(),
        })
    };
    let num = |field: &str| -> Result<f64> { parse_f64(row, schema.column(field), &req(field)?) };
    let rec = TazRecord {
        taz_id: req("taz_id")?.trim().to_string(),
        city: req("city")?.trim().to_string(),
        centroid_x: num("centroid_x")?,
        centroid_y: num("centroid_y")?,
        area_km2: num("area_km2")?,
        population: num("population")?,
        jobs: num("jobs")?,
        income: num("income")?,
        mean_vkt_km: num("mean_vkt_km")?,
        trip_count: parse_count(row, schema.column("trip_count"), &req("trip_count")?)?,
        is_airport: match get(schema.column("is_airport")) {
            Some(raw) => parse_bool(row, schema.column("is_airport"), &raw)?,
            None => false,
        },
        boundary_overlap_fraction: match get(schema.column("boundary_overlap_fraction")) {
            Some(raw) if !raw.trim().is_empty() => {
                parse_f64(row, schema.column("boundary_overlap_fraction"), &raw)?
            }
            _ => 1.0,
        },
    };
    rec.validate(row).map_err(|e| match e {
        Error::InvalidField {
            row,
            column,
            message,
        } => Error::InvalidField {
            row,
            column: schema.column(&column).to_string(),
            message,
        },
        e => e,
    })?;
    Ok(rec)
}

/// Reads TAZ records from CSV. Rows are numbered from 1 (the first data row).
pub fn read_taz_csv<R: Read>(
    reader: R,
    schema: &ColumnSchema,
    source_name: &str,
) -> Result<Vec<TazRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: BTreeMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    for field in REQUIRED_FIELDS {
        let col = schema.column(field);
        if !index.contains_key(col) {
            return Err(Error::MissingColumn {
                source_name: source_name.into(),
                column: col.into(),
            });
        }
    }
    let mut out = Vec::new();
    for (r, row) in rdr.records().enumerate() {
        let row = row?;
        out.push(record_from_fields(r + 1, schema, |col| {
            index.get(col).and_then(|&i| row.get(i)).map(str::to_string)
        })?);
    }
    Ok(out)
}

fn property_text(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        other => Some(other.to_string()),
    }
}

/// Reads TAZ records from a GeoJSON feature collection whose properties
/// mirror the CSV columns. A missing centroid is taken from a Point geometry
/// or the centroid of a Polygon's exterior ring.
pub fn read_taz_geojson(
    text: &str,
    schema: &ColumnSchema,
    source_name: &str,
) -> Result<Vec<TazRecord>> {
    let doc: Value = serde_json::from_str(text)?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| {
            Error::Malformed(format!("{source_name}: not a GeoJSON FeatureCollection"))
        })?;
    let mut out = Vec::with_capacity(features.len());
    for (r, feature) in features.iter().enumerate() {
        let row = r + 1;
        let empty = serde_json::Map::new();
        let props = feature
            .get("properties")
            .and_then(Value::as_object)
            .unwrap_or(&empty);
        let geom_centroid = feature.get("geometry").and_then(geometry_centroid);
        let cx = schema.column("centroid_x").to_string();
        let cy = schema.column("centroid_y").to_string();
        for field in REQUIRED_FIELDS {
            let col = schema.column(field);
            let from_geometry = (col == cx || col == cy) && geom_centroid.is_some();
            if !props.contains_key(col) && !from_geometry {
                return Err(Error::MissingColumn {
                    source_name: format!("{source_name} (feature {row})"),
                    column: col.into(),
                });
            }
        }
        out.push(record_from_fields(row, schema, |col| {
            match props.get(col).and_then(property_text) {
                Some(v) => Some(v),
                None if col == cx => geom_centroid.map(|p| p.x.to_string()),
                None if col == cy => geom_centroid.map(|p| p.y.to_string()),
                None => None,
            }
        })?);
    }
    Ok(out)
}

fn coords(v: &Value) -> Option<Point<f64>> {
    let a = v.as_array()?;
    Some(Point::new(a.first()?.as_f64()?, a.get(1)?.as_f64()?))
}

fn geometry_centroid(g: &Value) -> Option<Point<f64>> {
    let c = g.get("coordinates")?;
    match g.get("type")?.as_str()? {
        "Point" => coords(c),
        "Polygon" => {
            let ring: Vec<Point<f64>> = c
                .as_array()?
                .first()?
                .as_array()?
                .iter()
                .filter_map(coords)
                .collect();
            Polygon::new(ring).centroid()
        }
        _ => None,
    }
}

/// Zone polygons keyed by the `id_field` property of each Polygon feature.
pub fn read_zone_polygons(text: &str, id_field: &str) -> Result<BTreeMap<String, Polygon<f64>>> {
    let doc: Value = serde_json::from_str(text)?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Malformed("zones: not a GeoJSON FeatureCollection".into()))?;
    let mut out = BTreeMap::new();
    for (i, f) in features.iter().enumerate() {
        let id = f
            .get("properties")
            .and_then(|p| p.get(id_field))
            .and_then(property_text)
            .ok_or_else(|| {
                Error::Malformed(format!("zone feature {}: missing `{id_field}`", i + 1))
            })?;
        let geom = f.get("geometry");
        let ring: Option<Vec<Point<f64>>> =
            match geom.and_then(|g| g.get("type")).and_then(Value::as_str) {
                Some("Polygon") => geom.and_then(|g| g.get("coordinates")).and_then(|c| {
                    c.as_array()?
                        .first()?
                        .as_array()
                        .map(|r| r.iter().filter_map(coords).collect())
                }),
                _ => None,
            };
        let ring = ring
            .ok_or_else(|| Error::Malformed(format!("zone `{id}`: expected a Polygon geometry")))?;
        if out.insert(id.clone(), Polygon::new(ring)).is_some() {
            return Err(Error::Malformed(format!("zone `{id}` appears twice")));
        }
    }
    Ok(out)
}

/// FeatureCollection of zone polygons with the id under `taz_id`.
pub fn zones_geojson(zones: &BTreeMap<String, Polygon<f64>>) -> Value {
    let features: Vec<Value> = zones
        .iter()
        .map(|(id, poly)| {
            let mut ring: Vec<Value> = poly.exterior.iter().map(|p| json!([p.x, p.y])).collect();
            if let Some(first) = ring.first().cloned() {
                ring.push(first);
            }
            json!({
                "type": "Feature",
                "properties": {"taz_id": id},
                "geometry": {"type": "Polygon", "coordinates": [ring]},
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

/// Loads a CSV or GeoJSON file (chosen by extension).
pub fn load_city_dataset(path: &Path, schema: &ColumnSchema) -> Result<Vec<TazRecord>> {
    let name = path.display().to_string();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    if ext == "geojson" || ext == "json" {
        read_taz_geojson(&text, schema, &name)
    } else {
        read_taz_csv(text.as_bytes(), schema, &name)
    }
}

pub fn write_taz_csv<W: Write>(records: &[TazRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// GeoJSON feature collection with Point geometries at the centroids.
pub fn taz_geojson(records: &[TazRecord]) -> Value {
    let features: Vec<Value> = records
        .iter()
        .map(|r| {
            json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [r.centroid_x, r.centroid_y]},
                "properties": serde_json::to_value(r).expect("record serializes"),
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

/// Cleaning rules. `window` is carried for provenance: time filtering
/// happens when trips are aggregated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningConfig {
    pub min_trips: u64,
    pub min_overlap: f64,
    pub drop_airports: bool,
    pub window: TimeWindow,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            min_trips: 10,
            min_overlap: 0.5,
            drop_airports: true,
            window: TimeWindow::MORNING,
        }
    }
}

/// Removed-record counts keyed by rule. A record failing several rules is
/// counted under the first one in the order `min_trips`, `min_overlap`,
/// `airport`.
pub type RemovalReport = BTreeMap<String, usize>;

pub const RULE_MIN_TRIPS: &str = "min_trips";
pub const RULE_MIN_OVERLAP: &str = "min_overlap";
pub const RULE_AIRPORT: &str = "airport";

pub fn clean_taz(records: &[TazRecord], rules: &CleaningConfig) -> (Vec<TazRecord>, RemovalReport) {
    let mut report: RemovalReport = [RULE_MIN_TRIPS, RULE_MIN_OVERLAP, RULE_AIRPORT]
        .into_iter()
        .map(|r| (r.to_string(), 0))
        .collect();
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        let failed = if r.trip_count < rules.min_trips {
            Some(RULE_MIN_TRIPS)
        } else if r.boundary_overlap_fraction < rules.min_overlap {
            Some(RULE_MIN_OVERLAP)
        } else if rules.drop_airports && r.is_airport {
            Some(RULE_AIRPORT)
        } else {
            None
        };
        match failed {
            Some(rule) => *report.get_mut(rule).expect("rule preset") += 1,
            None => kept.push(r.clone()),
        }
    }
    (kept, report)
}

/// Per-TAZ features keyed by `taz_id`.
pub type FeatureTable = BTreeMap<String, FeatureVector<f64>>;

pub fn read_features_csv<R: Read>(reader: R, source_name: &str) -> Result<FeatureTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                source_name: source_name.into(),
                column: name.into(),
            })
    };
    let id_col = find("taz_id")?;
    let cols = FEATURE_NAMES
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>>>()?;
    let mut out = FeatureTable::new();
    for (r, row) in rdr.records().enumerate() {
        let row = row?;
        let mut a = [0.0; 5];
        for (k, &c) in cols.iter().enumerate() {
            a[k] = parse_f64(r + 1, FEATURE_NAMES[k], row.get(c).unwrap_or(""))?;
        }
        out.insert(
            row.get(id_col).unwrap_or("").to_string(),
            FeatureVector::from_array(a),
        );
    }
    Ok(out)
}

pub fn write_features_csv<W: Write>(table: &FeatureTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["taz_id".to_string()];
    header.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (id, f) in table {
        let mut rec = vec![id.clone()];
        rec.extend(f.to_array().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// One city's analysis table: a row per TAZ with named numeric columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityDataset {
    pub city: String,
    pub taz_ids: Vec<String>,
    pub data: DataMatrix,
}

impl CityDataset {
    pub fn new(city: impl Into<String>, taz_ids: Vec<String>, data: DataMatrix) -> Result<Self> {
        if taz_ids.len() != data.n_rows() {
            return Err(Error::InvalidArgument(format!(
                "{} ids for {} rows",
                taz_ids.len(),
                data.n_rows()
            )));
        }
        Ok(Self {
            city: city.into(),
            taz_ids,
            data,
        })
    }

    /// Joins records with their features; columns are the five features
    /// followed by [`TARGET_NAME`]. Rows follow record order.
    pub fn from_records(
        city: &str,
        records: &[TazRecord],
        features: &FeatureTable,
    ) -> Result<Self> {
        let mut rows = Vec::new();
        let mut ids = Vec::new();
        for r in records.iter().filter(|r| r.city == city) {
            let f = features
                .get(&r.taz_id)
                .ok_or_else(|| Error::Malformed(format!("no features for TAZ `{}`", r.taz_id)))?;
            let mut row = f.to_array().to_vec();
            row.push(r.mean_vkt_km);
            rows.push(row);
            ids.push(r.taz_id.clone());
        }
        let mut names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
        names.push(TARGET_NAME.into());
        Self::new(city, ids, DataMatrix::from_rows(names, &rows)?)
    }

    pub fn len(&self) -> usize {
        self.taz_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taz_ids.is_empty()
    }
}

/// Splits records by city (sorted by city name) and joins their features.
pub fn city_datasets(records: &[TazRecord], features: &FeatureTable) -> Result<Vec<CityDataset>> {
    let cities: BTreeSet<&str> = records.iter().map(|r| r.city.as_str()).collect();
    cities
        .into_iter()
        .map(|c| CityDataset::from_records(c, records, features))
        .collect()
}

/// Per-column mean and population standard deviation for one city.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityScaler {
    pub city: String,
    pub columns: Vec<String>,
    pub means: Vec<f64>,
    pub std_devs: Vec<f64>,
    pub variance_convention: String,
}

impl CityScaler {
    pub fn fit(city: &str, data: &DataMatrix) -> Result<Self> {
        if data.n_rows() < 2 {
            return Err(Error::InsufficientRows {
                city: city.into(),
                available: data.n_rows(),
                required: 2,
            });
        }
        let mut means = Vec::new();
        let mut std_devs = Vec::new();
        for (c, name) in data.names().iter().enumerate() {
            let col = data.column(c);
            let m = stats::mean(col);
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64;
            let sd = var.sqrt();
            if !(sd > 1e-12 * m.abs().max(1.0)) {
                return Err(Error::ZeroVariance {
                    city: city.into(),
                    feature: name.clone(),
                });
            }
            means.push(m);
            std_devs.push(sd);
        }
        Ok(Self {
            city: city.into(),
            columns: data.names().to_vec(),
            means,
            std_devs,
            variance_convention: "population".into(),
        })
    }

    pub fn transform(&self, data: &DataMatrix) -> Result<DataMatrix> {
        self.check(data)?;
        let cols = (0..data.n_cols())
            .map(|c| {
                data.column(c)
                    .iter()
                    .map(|v| (v - self.means[c]) / self.std_devs[c])
                    .collect()
            })
            .collect();
        DataMatrix::from_columns(data.names().to_vec(), cols)
    }

    pub fn inverse_transform(&self, data: &DataMatrix) -> Result<DataMatrix> {
        self.check(data)?;
        let cols = (0..data.n_cols())
            .map(|c| {
                data.column(c)
                    .iter()
                    .map(|v| v * self.std_devs[c] + self.means[c])
                    .collect()
            })
            .collect();
        DataMatrix::from_columns(data.names().to_vec(), cols)
    }

    fn check(&self, data: &DataMatrix) -> Result<()> {
        if data.names() != self.columns.as_slice() {
            return Err(Error::InvalidArgument(format!(
                "scaler for {:?} applied to {:?}",
                self.columns,
                data.names()
            )));
        }
        Ok(())
    }
}

/// Standardizes every column of every city to mean 0 and unit population
/// variance within that city.
pub fn standardize_per_city(cities: &[CityDataset]) -> Result<(Vec<CityDataset>, Vec<CityScaler>)> {
    let mut out = Vec::with_capacity(cities.len());
    let mut scalers = Vec::with_capacity(cities.len());
    for c in cities {
        let s = CityScaler::fit(&c.city, &c.data)?;
        out.push(CityDataset {
            city: c.city.clone(),
            taz_ids: c.taz_ids.clone(),
            data: s.transform(&c.data)?,
        });
        scalers.push(s);
    }
    Ok((out, scalers))
}

/// Equal-size per-city subsamples, standardized within each city, stacked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledSample {
    pub cities: Vec<String>,
    pub taz_ids: Vec<String>,
    pub data: DataMatrix,
    pub seed: u64,
    pub per_city_count: usize,
}

/// Draws `n_total / n_cities` rows per city uniformly without replacement
/// (seeded shuffle of the sorted ids), then standardizes each city's draw.
pub fn balanced_pool(cities: &[CityDataset], n_total: usize, seed: u64) -> Result<PooledSample> {
    if cities.is_empty() {
        return Err(Error::InvalidArgument("no cities to pool".into()));
    }
    if n_total % cities.len() != 0 {
        return Err(Error::InvalidArgument(format!(
            "pool size {n_total} is not divisible by {} cities",
            cities.len()
        )));
    }
    let per_city = n_total / cities.len();
    let mut parts = Vec::with_capacity(cities.len());
    let mut city_col = Vec::with_capacity(n_total);
    let mut ids = Vec::with_capacity(n_total);
    for (k, c) in cities.iter().enumerate() {
        if c.len() < per_city {
            return Err(Error::InsufficientRows {
                city: c.city.clone(),
                available: c.len(),
                required: per_city,
            });
        }
        let mut order: Vec<usize> = (0..c.len()).collect();
        order.sort_by(|&a, &b| c.taz_ids[a].cmp(&c.taz_ids[b]).then(a.cmp(&b)));
        let mut rng = stats::rng(stats::derive_seed(seed, k as u64));
        order.shuffle(&mut rng);
        order.truncate(per_city);
        let sub = c.data.select_rows(&order);
        let scaler = CityScaler::fit(&c.city, &sub)?;
        parts.push(scaler.transform(&sub)?);
        city_col.extend(std::iter::repeat_n(c.city.clone(), per_city));
        ids.extend(order.iter().map(|&i| c.taz_ids[i].clone()));
    }
    Ok(PooledSample {
        cities: city_col,
        taz_ids: ids,
        data: DataMatrix::vstack(&parts)?,
        seed,
        per_city_count: per_city,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "taz_id,city,centroid_x,centroid_y,area_km2,population,jobs,income,mean_vkt_km,trip_count,is_airport,boundary_overlap_fraction
a,berlin,0,0,1.5,1000,200,30000,5.5,20,false,1
b,berlin,1000,0,2,500,100,28000,7.5,12,false,0.5
c,berlin,2000,0,3,250,50,25000,9,9,true,0.2
";

    fn rec(id: &str, trips: u64, overlap: f64, airport: bool) -> TazRecord {
        TazRecord {
            taz_id: id.into(),
            city: "x".into(),
            centroid_x: 0.0,
            centroid_y: 0.0,
            area_km2: 1.0,
            population: 1.0,
            jobs: 1.0,
            income: 1.0,
            mean_vkt_km: 1.0,
            trip_count: trips,
            is_airport: airport,
            boundary_overlap_fraction: overlap,
        }
    }

    #[test]
    fn csv_parses_three_rows() {
        let r = read_taz_csv(CSV.as_bytes(), &ColumnSchema::identity(), "t").unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[2].trip_count, 9);
        assert!(r[2].is_airport);
    }

    #[test]
    fn negative_area_names_row_and_column() {
        let bad = CSV.replace("2000,0,3,", "2000,0,-3,");
        match read_taz_csv(bad.as_bytes(), &ColumnSchema::identity(), "t") {
            Err(Error::InvalidField { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "area_km2");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_field_is_reported() {
        let bad = CSV.replace("30000", "lots");
        assert!(matches!(
            read_taz_csv(bad.as_bytes(), &ColumnSchema::identity(), "t"),
            Err(Error::InvalidField { row: 1, ref column, .. }) if column == "income"
        ));
    }

    #[test]
    fn missing_column_and_schema_mapping() {
        let renamed = CSV.replacen("income", "hh_income", 1);
        assert!(matches!(
            read_taz_csv(renamed.as_bytes(), &ColumnSchema::identity(), "t"),
            Err(Error::MissingColumn { .. })
        ));
        let schema = ColumnSchema::identity().with("income", "hh_income");
        assert_eq!(
            read_taz_csv(renamed.as_bytes(), &schema, "t")
                .unwrap()
                .len(),
            3
        );
    }

    #[test]
    fn geojson_round_trip_matches_csv() {
        let r = read_taz_csv(CSV.as_bytes(), &ColumnSchema::identity(), "t").unwrap();
        let g = taz_geojson(&r).to_string();
        assert_eq!(
            read_taz_geojson(&g, &ColumnSchema::identity(), "g").unwrap(),
            r
        );
    }

    #[test]
    fn cleaning_rules_and_report() {
        let recs = vec![
            rec("a", 9, 1.0, false),
            rec("b", 10, 0.5, false),
            rec("c", 50, 0.49, false),
            rec("d", 50, 1.0, true),
        ];
        let (kept, report) = clean_taz(&recs, &CleaningConfig::default());
        assert_eq!(
            kept.iter().map(|r| r.taz_id.as_str()).collect::<Vec<_>>(),
            ["b"]
        );
        assert_eq!(report[RULE_MIN_TRIPS], 1);
        assert_eq!(report[RULE_MIN_OVERLAP], 1);
        assert_eq!(report[RULE_AIRPORT], 1);
        let (again, _) = clean_taz(&kept, &CleaningConfig::default());
        assert_eq!(again, kept);
    }

    fn city(name: &str, n: usize, offset: f64) -> CityDataset {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![i as f64 + offset, ((i * 7) % 5) as f64])
            .collect();
        CityDataset::new(
            name,
            (0..n).map(|i| format!("{name}-{i:03}")).collect(),
            DataMatrix::from_rows(vec!["a".into(), "b".into()], &rows).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn standardize_hand_values_and_inverse() {
        let c = CityDataset::new(
            "c",
            vec!["1".into(), "2".into(), "3".into()],
            DataMatrix::from_columns(vec!["v".into()], vec![vec![1.0, 2.0, 3.0]]).unwrap(),
        )
        .unwrap();
        let (s, scalers) = standardize_per_city(&[c.clone()]).unwrap();
        let expect = [-1.224744871391589, 0.0, 1.224744871391589];
        for (a, b) in s[0].data.column(0).iter().zip(expect) {
            assert!((a - b).abs() < 1e-9);
        }
        let back = scalers[0].inverse_transform(&s[0].data).unwrap();
        for (a, b) in back.column(0).iter().zip(c.data.column(0)) {
            assert!((a - b).abs() <= 1e-9 * b.abs());
        }
        let (twice, _) = standardize_per_city(&s).unwrap();
        for (a, b) in twice[0].data.column(0).iter().zip(s[0].data.column(0)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_column_is_an_error() {
        let c = CityDataset::new(
            "flat",
            vec!["1".into(), "2".into()],
            DataMatrix::from_columns(vec!["v".into()], vec![vec![4.0, 4.0]]).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            standardize_per_city(&[c]),
            Err(Error::ZeroVariance { ref city, ref feature }) if city == "flat" && feature == "v"
        ));
    }

    #[test]
    fn pool_is_balanced_standardized_and_reproducible() {
        let cities: Vec<CityDataset> = (0..6)
            .map(|k| city(&format!("c{k}"), 300 + 10 * k, k as f64 * 100.0))
            .collect();
        let p = balanced_pool(&cities, 1542, 3).unwrap();
        assert_eq!(p.per_city_count, 257);
        assert_eq!(p.data.n_rows(), 1542);
        for k in 0..6 {
            let name = format!("c{k}");
            let rows: Vec<usize> = (0..1542).filter(|&r| p.cities[r] == name).collect();
            assert_eq!(rows.len(), 257);
            let col: Vec<f64> = rows.iter().map(|&r| p.data.column(0)[r]).collect();
            let m = stats::mean(&col);
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
        }
        let q = balanced_pool(&cities, 1542, 3).unwrap();
        assert_eq!(p, q);
        let other = balanced_pool(&cities, 1542, 4).unwrap();
        assert_ne!(p.taz_ids, other.taz_ids);
        let all: BTreeSet<&String> = cities.iter().flat_map(|c| &c.taz_ids).collect();
        assert!(p
            .taz_ids
            .iter()
            .chain(&other.taz_ids)
            .all(|id| all.contains(id)));
    }

    #[test]
    fn exhaustive_pool_takes_every_row() {
        let cities = vec![city("a", 5, 0.0), city("b", 5, 1.0)];
        for seed in 0..4 {
            let p = balanced_pool(&cities, 10, seed).unwrap();
            let ids: BTreeSet<&String> = p.taz_ids.iter().collect();
            assert_eq!(ids.len(), 10);
        }
    }

    #[test]
    fn pool_errors() {
        let cities = vec![city("a", 5, 0.0), city("b", 4, 1.0)];
        assert!(matches!(
            balanced_pool(&cities, 9, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            balanced_pool(&cities, 10, 0),
            Err(Error::InsufficientRows { .. })
        ));
    }
}
