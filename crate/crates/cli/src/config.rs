//! Pipeline configuration: TOML or JSON, every section optional, unknown
//! keys rejected with the path of the offending key.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use urbcause::analysis::{DEFAULT_BANDWIDTH, DEFAULT_EFFECT_THRESHOLD_G, DEFAULT_RING_WIDTH_KM};
use urbcause::ci::{CiTestConfig, CiTestKind};
use urbcause::dataset::CleaningConfig;
use urbcause::emissions::EmissionFactorTable;
use urbcause::gbdt::TrainConfig;
use urbcause::geo::features::DEFAULT_EMPLOYMENT_FRACTION;
use urbcause::geo::TimeWindow;
use urbcause::pipeline::model_features;
use urbcause::shapley::ValueKind;
use urbcause::synth::CityConfig;

use crate::failure::Failure;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "URBCAUSE_OUT";
pub const DEFAULT_OUT: &str = "urbcause_out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub cities: Vec<CityInput>,
    pub cleaning: CleaningSection,
    pub features: FeatureSection,
    pub discovery: DiscoverySection,
    pub gbdt: GbdtSection,
    pub shapley: ShapleySection,
    pub analysis: AnalysisSection,
    pub synth: SynthSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: None,
            cities: Vec::new(),
            cleaning: CleaningSection::default(),
            features: FeatureSection::default(),
            discovery: DiscoverySection::default(),
            gbdt: GbdtSection::default(),
            shapley: ShapleySection::default(),
            analysis: AnalysisSection::default(),
            synth: SynthSection::default(),
        }
    }
}

/// One city's input files. With `dir` set, unset paths default to the file
/// names written by `synth` inside that directory and the center is read
/// from its `city.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CityInput {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taz: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zones: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network_nodes: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network_edges: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub employment: Option<PathBuf>,
    /// Trips with destination coordinates; enables the ring analysis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trips: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub centers: Vec<[f64; 2]>,
    #[serde(default = "default_region")]
    pub region: String,
    #[serde(default = "default_zone_id_field")]
    pub zone_id_field: String,
    /// TAZ field name to input column name, for inputs with other headers.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub columns: BTreeMap<String, String>,
}

fn default_region() -> String {
    "Germany".into()
}

fn default_zone_id_field() -> String {
    "taz_id".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningSection {
    pub min_trips: u64,
    pub min_overlap: f64,
    pub drop_airports: bool,
    pub window_start_minute: u32,
    pub window_end_minute: u32,
}

impl Default for CleaningSection {
    fn default() -> Self {
        let c = CleaningConfig::default();
        Self {
            min_trips: c.min_trips,
            min_overlap: c.min_overlap,
            drop_airports: c.drop_airports,
            window_start_minute: c.window.start_minute,
            window_end_minute: c.window.end_minute,
        }
    }
}

impl CleaningSection {
    pub fn to_core(&self) -> CleaningConfig {
        CleaningConfig {
            min_trips: self.min_trips,
            min_overlap: self.min_overlap,
            drop_airports: self.drop_airports,
            window: TimeWindow {
                start_minute: self.window_start_minute,
                end_minute: self.window_end_minute,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    /// Share of all jobs that must lie within the employment distance.
    pub employment_fraction: f64,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            employment_fraction: DEFAULT_EMPLOYMENT_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoverySection {
    pub test: CiTestKind,
    pub alpha: f64,
    /// Stability rounds, each with its own pool and seed.
    pub rounds: usize,
    /// Rows pooled per round, split evenly over the cities.
    pub pool: usize,
    pub stable: bool,
    pub background_knowledge: bool,
    pub knn_k: usize,
    pub n_permutations: usize,
    pub perm_neighbors: usize,
}

impl Default for DiscoverySection {
    fn default() -> Self {
        let ci = CiTestConfig::default();
        Self {
            test: ci.kind,
            alpha: ci.alpha,
            rounds: 5,
            pool: 1542,
            stable: true,
            background_knowledge: true,
            knn_k: ci.knn_k,
            n_permutations: ci.n_permutations,
            perm_neighbors: ci.perm_neighbors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtSection {
    pub features: Vec<String>,
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub min_gain: f64,
}

impl Default for GbdtSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            features: model_features(),
            n_trees: t.n_trees,
            max_depth: t.max_depth,
            learning_rate: t.learning_rate,
            min_samples_leaf: t.min_samples_leaf,
            min_gain: t.min_gain,
        }
    }
}

impl GbdtSection {
    pub fn to_core(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            learning_rate: self.learning_rate,
            min_samples_leaf: self.min_samples_leaf,
            min_gain: self.min_gain,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapleySection {
    pub kind: ValueKind,
    /// Ordered components of feature names; empty means one singleton per
    /// model feature in model order.
    pub chain: Vec<Vec<String>>,
    pub n_samples: usize,
    pub knn_k: usize,
}

impl Default for ShapleySection {
    fn default() -> Self {
        Self {
            kind: ValueKind::Causal,
            chain: Vec::new(),
            n_samples: 200,
            knn_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub bandwidth: f64,
    pub ring_width_km: f64,
    pub effect_threshold_g: f64,
    pub trip_weighted_mean: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            bandwidth: DEFAULT_BANDWIDTH,
            ring_width_km: DEFAULT_RING_WIDTH_KM,
            effect_threshold_g: DEFAULT_EFFECT_THRESHOLD_G,
            trip_weighted_mean: false,
        }
    }
}

/// Synthetic cities: `count` similar cities from one base configuration.
/// The base city's seed is the top-level seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub count: usize,
    pub city: CityConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            count: 6,
            city: CityConfig {
                name: "synth".into(),
                ..CityConfig::default()
            },
        }
    }
}

/// Configuration as loaded plus the keys that fell back to defaults.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub defaults_applied: Vec<String>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

/// Parses TOML or JSON text. A manifest written by this tool is accepted
/// too; its embedded configuration is used.
pub fn parse_config(text: &str) -> Result<(PipelineConfig, Vec<String>), Failure> {
    let trimmed = text.trim_start();
    let mut raw: Value = if trimmed.starts_with('{') {
        serde_json::from_str(text).map_err(|e| Failure::Config(format!("invalid JSON: {e}")))?
    } else {
        toml::from_str(text).map_err(|e| Failure::Config(format!("invalid TOML: {e}")))?
    };
    if raw.get("manifest_version").is_some() {
        raw = raw
            .get("config")
            .cloned()
            .ok_or_else(|| Failure::Config("manifest has no `config` key".into()))?;
    }
    let config: PipelineConfig = serde_path_to_error::deserialize(raw.clone()).map_err(|e| {
        let path = e.path().to_string();
        Failure::Config(format!("{path}: {}", e.into_inner()))
    })?;
    let defaults =
        serde_json::to_value(PipelineConfig::default()).expect("default config serializes");
    let mut missing = Vec::new();
    missing_leaves(&defaults, &raw, "", &mut missing);
    missing.retain(|k| k != "synth.city.seed");
    Ok((config, missing))
}

/// Dotted paths of scalar leaves of `defaults` that `given` does not set.
fn missing_leaves(defaults: &Value, given: &Value, prefix: &str, out: &mut Vec<String>) {
    let Value::Object(map) = defaults else { return };
    for (k, v) in map {
        if k == "cities" {
            continue;
        }
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        let sub = given.get(k);
        match (v, sub) {
            (Value::Object(_), Some(s)) => missing_leaves(v, s, &path, out),
            (Value::Object(_), None) => missing_leaves(v, &Value::Null, &path, out),
            (_, None) => out.push(path),
            _ => {}
        }
    }
}

pub fn load_config(path: Option<&Path>) -> Result<LoadedConfig, Failure> {
    let Some(path) = path else {
        let (config, defaults_applied) = parse_config("")?;
        return Ok(LoadedConfig {
            config,
            defaults_applied,
            base_dir: PathBuf::from("."),
        });
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
    let (config, defaults_applied) = parse_config(&text).map_err(|f| match f {
        Failure::Config(m) => Failure::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig {
        config,
        defaults_applied,
        base_dir,
    })
}

/// Command-line overrides; an overridden key no longer counts as defaulted.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub test: Option<CiTestKind>,
    pub alpha: Option<f64>,
    pub pool: Option<usize>,
    pub rounds: Option<usize>,
}

impl LoadedConfig {
    pub fn apply(&mut self, o: &Overrides) {
        let mut set = |key: &str| self.defaults_applied.retain(|k| k != key);
        if let Some(s) = o.seed {
            self.config.seed = s;
            set("seed");
        }
        if let Some(t) = o.test {
            self.config.discovery.test = t;
            set("discovery.test");
        }
        if let Some(a) = o.alpha {
            self.config.discovery.alpha = a;
            set("discovery.alpha");
        }
        if let Some(p) = o.pool {
            self.config.discovery.pool = p;
            set("discovery.pool");
        }
        if let Some(r) = o.rounds {
            self.config.discovery.rounds = r;
            set("discovery.rounds");
        }
        // command-line and environment paths are relative to the working
        // directory, not to the configuration file
        if let Some(out) = &o.out {
            self.config.out_dir = Some(std::path::absolute(out).unwrap_or_else(|_| out.clone()));
        }
    }

    /// Output root: `--out` or the environment variable (both arrive as
    /// overrides), then `out_dir` relative to the config file, then
    /// [`DEFAULT_OUT`].
    pub fn out_root(&self) -> PathBuf {
        match &self.config.out_dir {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => self.base_dir.join(p),
            None => std::env::var_os(OUT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), Failure> {
        let bad = |key: &str, msg: String| Err(Failure::Config(format!("{key}: {msg}")));
        let d = &self.discovery;
        if !(d.alpha > 0.0 && d.alpha < 1.0) {
            return bad("discovery.alpha", format!("{} outside (0, 1)", d.alpha));
        }
        if d.rounds == 0 {
            return bad("discovery.rounds", "must be at least 1".into());
        }
        if d.pool == 0 {
            return bad("discovery.pool", "must be positive".into());
        }
        let ci = self.ci_config();
        if let Err(e) = ci.validate() {
            return bad("discovery", e.to_string());
        }
        if let Err(e) = self.gbdt.to_core(self.seed).validate() {
            return bad("gbdt", e.to_string());
        }
        if self.gbdt.features.is_empty() {
            return bad("gbdt.features", "at least one feature is required".into());
        }
        if self.shapley.n_samples == 0 || self.shapley.knn_k == 0 {
            return bad("shapley", "n_samples and knn_k must be positive".into());
        }
        let a = &self.analysis;
        if !(a.bandwidth > 0.0) {
            return bad(
                "analysis.bandwidth",
                format!("{} must be positive", a.bandwidth),
            );
        }
        if !(a.ring_width_km > 0.0) {
            return bad(
                "analysis.ring_width_km",
                format!("{} must be positive", a.ring_width_km),
            );
        }
        if !(self.features.employment_fraction > 0.0 && self.features.employment_fraction <= 1.0) {
            return bad(
                "features.employment_fraction",
                format!("{} outside (0, 1]", self.features.employment_fraction),
            );
        }
        if self.cleaning.window_start_minute >= self.cleaning.window_end_minute {
            return bad("cleaning.window_start_minute", "window is empty".into());
        }
        if self.synth.count == 0 {
            return bad("synth.count", "must be at least 1".into());
        }
        if let Err(e) = self.synth.city.validate() {
            return bad("synth.city", e.to_string());
        }
        let factors = EmissionFactorTable::<f64>::builtin();
        let mut names = std::collections::BTreeSet::new();
        for (i, c) in self.cities.iter().enumerate() {
            if c.name.is_empty() || c.name.contains(['/', '\\']) {
                return bad(
                    &format!("cities[{i}].name"),
                    format!("`{}` is not a usable name", c.name),
                );
            }
            if !names.insert(c.name.as_str()) {
                return bad(
                    &format!("cities[{i}].name"),
                    format!("duplicate city `{}`", c.name),
                );
            }
            if factors.get(&c.region).is_none() {
                return bad(
                    &format!("cities[{i}].region"),
                    format!("unknown emission region `{}`", c.region),
                );
            }
        }
        Ok(())
    }

    pub fn ci_config(&self) -> CiTestConfig {
        let d = &self.discovery;
        CiTestConfig {
            kind: d.test,
            alpha: d.alpha,
            knn_k: d.knn_k,
            n_permutations: d.n_permutations,
            perm_neighbors: d.perm_neighbors,
            seed: self.seed,
        }
    }
}

/// A city's inputs with every path resolved and checked.
#[derive(Debug, Clone)]
pub struct ResolvedCity {
    pub name: String,
    pub taz: PathBuf,
    pub zones: PathBuf,
    pub network_nodes: PathBuf,
    pub network_edges: PathBuf,
    pub employment: PathBuf,
    pub trips: Option<PathBuf>,
    pub centers: Vec<[f64; 2]>,
    pub region: String,
    pub zone_id_field: String,
    pub columns: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct CenterMeta {
    center_x: f64,
    center_y: f64,
}

pub fn resolve_cities(
    config: &PipelineConfig,
    base_dir: &Path,
) -> Result<Vec<ResolvedCity>, Failure> {
    if config.cities.is_empty() {
        return Err(Failure::Config(
            "cities: at least one city is required".into(),
        ));
    }
    config
        .cities
        .iter()
        .enumerate()
        .map(|(i, c)| resolve_city(c, i, base_dir))
        .collect()
}

fn resolve_city(c: &CityInput, i: usize, base_dir: &Path) -> Result<ResolvedCity, Failure> {
    let under = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    };
    let dir = c.dir.as_deref().map(under);
    let pick = |key: &str,
                given: &Option<PathBuf>,
                default: &str,
                required: bool|
     -> Result<Option<PathBuf>, Failure> {
        let path = match (given, &dir) {
            (Some(p), _) => under(p),
            (None, Some(d)) => d.join(default),
            (None, None) if required => {
                return Err(Failure::Config(format!(
                    "cities[{i}].{key}: path is required without `dir`"
                )))
            }
            (None, None) => return Ok(None),
        };
        if path.is_file() {
            Ok(Some(path))
        } else if required || given.is_some() {
            Err(Failure::Config(format!(
                "cities[{i}].{key}: {} does not exist",
                path.display()
            )))
        } else {
            Ok(None)
        }
    };
    let taz = pick("taz", &c.taz, "taz.csv", true)?.expect("required");
    let zones = pick("zones", &c.zones, "zones.geojson", true)?.expect("required");
    let network_nodes =
        pick("network_nodes", &c.network_nodes, "network_nodes.csv", true)?.expect("required");
    let network_edges =
        pick("network_edges", &c.network_edges, "network_edges.csv", true)?.expect("required");
    let employment = pick("employment", &c.employment, "employment.csv", true)?.expect("required");
    let trips = pick("trips", &c.trips, "trips.csv", false)?;
    let mut centers = c.centers.clone();
    if centers.is_empty() {
        let meta = dir
            .as_ref()
            .map(|d| d.join("city.json"))
            .filter(|p| p.is_file())
            .ok_or_else(|| {
                Failure::Config(format!(
                    "cities[{i}].centers: no centers given and no city.json found"
                ))
            })?;
        let text = fs::read_to_string(&meta).map_err(|e| {
            Failure::Config(format!(
                "cities[{i}].centers: cannot read {}: {e}",
                meta.display()
            ))
        })?;
        let m: CenterMeta = serde_json::from_str(&text).map_err(|e| {
            Failure::Config(format!("cities[{i}].centers: {}: {e}", meta.display()))
        })?;
        centers.push([m.center_x, m.center_y]);
    }
    Ok(ResolvedCity {
        name: c.name.clone(),
        taz,
        zones,
        network_nodes,
        network_edges,
        employment,
        trips,
        centers,
        region: c.region.clone(),
        zone_id_field: c.zone_id_field.clone(),
        columns: c.columns.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_defaults_alpha() {
        let (c, d) = parse_config("").unwrap();
        assert_eq!(c.discovery.alpha, 0.025);
        assert!(d.contains(&"discovery.alpha".to_string()));
        assert!(d.contains(&"seed".to_string()));
    }

    #[test]
    fn given_keys_are_not_defaulted() {
        let (c, d) = parse_config("seed = 4\n[discovery]\nalpha = 0.05\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.discovery.alpha, 0.05);
        assert!(!d.contains(&"discovery.alpha".to_string()));
        assert!(d.contains(&"discovery.pool".to_string()));
    }

    #[test]
    fn json_and_toml_agree() {
        let (a, _) = parse_config("seed = 3\n[gbdt]\nn_trees = 20\n").unwrap();
        let (b, _) = parse_config(r#"{"seed": 3, "gbdt": {"n_trees": 20}}"#).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_key_names_its_path() {
        let e = parse_config("[discovery]\nalpah = 0.1\n").unwrap_err();
        assert!(
            matches!(&e, Failure::Config(m) if m.contains("discovery") && m.contains("alpah")),
            "{e}"
        );
    }

    #[test]
    fn wrong_type_names_its_path() {
        let e = parse_config("[gbdt]\nn_trees = \"many\"\n").unwrap_err();
        assert!(
            matches!(&e, Failure::Config(m) if m.starts_with("gbdt.n_trees")),
            "{e}"
        );
    }

    #[test]
    fn alpha_out_of_range_names_key() {
        let (c, _) = parse_config("[discovery]\nalpha = 1.5\n").unwrap();
        let e = c.validate().unwrap_err();
        assert!(
            matches!(&e, Failure::Config(m) if m.starts_with("discovery.alpha")),
            "{e}"
        );
    }

    #[test]
    fn manifest_config_is_reused() {
        let (c, _) = parse_config("seed = 9\n").unwrap();
        let manifest = serde_json::json!({"manifest_version": 1, "config": c});
        let (back, _) = parse_config(&manifest.to_string()).unwrap();
        assert_eq!(back, c);
    }
}
