//! `urbcause`: batch pipeline from TAZ inputs to causal graph, model,
//! attributions and spatial effect analyses.

mod config;
mod failure;
mod manifest;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use urbcause::ci::CiTestKind;

use config::{
    load_config, resolve_cities, CityInput, LoadedConfig, Overrides, PipelineConfig, ResolvedCity,
    OUT_ENV,
};
use failure::Failure;
use manifest::{OutputLock, RunInfo};
use stages::Context;

#[derive(Debug, Parser)]
#[command(
    name = "urbcause",
    version,
    about = "Causal analysis of urban form against car travel distance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline configuration (TOML or JSON); a stage manifest is accepted too.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; the environment variable, then `out_dir` in the config, are fallbacks.
    #[arg(long, global = true, env = OUT_ENV)]
    out: Option<PathBuf>,
    /// Conditional independence test for discovery.
    #[arg(long, global = true, value_parser = parse_test)]
    test: Option<CiTestKind>,
    /// Significance level for discovery.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Rows pooled per discovery round.
    #[arg(long, global = true)]
    pool: Option<usize>,
    /// Discovery stability rounds.
    #[arg(long, global = true)]
    rounds: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// Read and clean the TAZ tables of every city.
    Ingest,
    /// Compute the urban-form features of every kept TAZ.
    Features,
    /// Causal discovery with stability rounds and consensus.
    Discover,
    /// Leave-one-city-out evaluation and the pooled model.
    Train,
    /// Shapley attributions of every TAZ.
    Explain,
    /// Threshold corridor, dominance map and ring shares.
    Analyze,
    /// Generate synthetic cities and a configuration pointing at them.
    Synth,
    /// Run ingest through analyze.
    All,
}

fn parse_test(s: &str) -> Result<CiTestKind, String> {
    CiTestKind::parse(s).ok_or_else(|| format!("unknown test `{s}` (robust_parcorr or cmiknn)"))
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// The configuration as run: city paths resolved to absolute paths and
/// centers filled in, so the manifest alone reproduces the run.
fn effective_config(config: &PipelineConfig, cities: &[ResolvedCity]) -> PipelineConfig {
    let mut out = config.clone();
    out.out_dir = None;
    out.cities = cities
        .iter()
        .map(|c| CityInput {
            name: c.name.clone(),
            dir: None,
            taz: Some(absolute(&c.taz)),
            zones: Some(absolute(&c.zones)),
            network_nodes: Some(absolute(&c.network_nodes)),
            network_edges: Some(absolute(&c.network_edges)),
            employment: Some(absolute(&c.employment)),
            trips: c.trips.as_deref().map(absolute),
            centers: c.centers.clone(),
            region: c.region.clone(),
            zone_id_field: c.zone_id_field.clone(),
            columns: c.columns.clone(),
        })
        .collect();
    out
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mut loaded: LoadedConfig = load_config(cli.config.as_deref())?;
    loaded.apply(&Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        test: cli.test,
        alpha: cli.alpha,
        pool: cli.pool,
        rounds: cli.rounds,
    });
    loaded.config.validate()?;
    let root = loaded.out_root();
    let to_value = |c: &PipelineConfig| serde_json::to_value(c).expect("config serializes");

    if cli.command == Command::Synth {
        let mut eff = loaded.config.clone();
        eff.out_dir = None;
        let run = RunInfo::new(to_value(&eff), loaded.defaults_applied.clone());
        let _lock = OutputLock::acquire(&root)?;
        let m = stages::synth(&root, &loaded.config, &run)?;
        report(&root, &m);
        return Ok(());
    }

    let cities = resolve_cities(&loaded.config, &loaded.base_dir)?;
    let run = RunInfo::new(
        to_value(&effective_config(&loaded.config, &cities)),
        loaded.defaults_applied.clone(),
    );
    let _lock = OutputLock::acquire(&root)?;
    let ctx = Context {
        root: &root,
        config: &loaded.config,
        cities: &cities,
        run: &run,
    };
    let steps: &[fn(&Context) -> Result<manifest::Manifest, Failure>] = match cli.command {
        Command::Ingest => &[stages::ingest],
        Command::Features => &[stages::features],
        Command::Discover => &[stages::discover],
        Command::Train => &[stages::train],
        Command::Explain => &[stages::explain],
        Command::Analyze => &[stages::analyze],
        Command::All => &[
            stages::ingest,
            stages::features,
            stages::discover,
            stages::train,
            stages::explain,
            stages::analyze,
        ],
        Command::Synth => unreachable!("handled above"),
    };
    for step in steps {
        let m = step(&ctx)?;
        report(&root, &m);
    }
    Ok(())
}

fn report(root: &Path, m: &manifest::Manifest) {
    let ms = m.timings_ms.values().sum::<u64>();
    eprintln!(
        "{}: {} artifacts in {} ({ms} ms)",
        m.stage,
        m.artifacts.len(),
        root.join(&m.stage).display()
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
