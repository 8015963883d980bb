use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::graph::{EdgeMark, GraphJson, MixedGraph};
use super::knowledge::BackgroundKnowledge;
use super::pc::{run_pc, PcConfig};
use crate::dataset::{balanced_pool, CityDataset};
use crate::error::{Error, Result};
use crate::stats;

/// Orientation votes for one unordered pair `(lo, hi)` across rounds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrientationVotes {
    /// Rounds with `lo → hi`.
    pub forward: usize,
    /// Rounds with `hi → lo`.
    pub backward: usize,
    pub unresolved: usize,
}

impl OrientationVotes {
    pub fn record(&mut self, graph: &MixedGraph, lo: usize, hi: usize) {
        if graph.is_directed(lo, hi) {
            self.forward += 1;
        } else if graph.is_directed(hi, lo) {
            self.backward += 1;
        } else {
            self.unresolved += 1;
        }
    }

    /// Plurality winner; a tie for first place is unresolved.
    pub fn winner(&self) -> Option<(bool, bool)> {
        let top = self.forward.max(self.backward).max(self.unresolved);
        let n_top = [self.forward, self.backward, self.unresolved]
            .iter()
            .filter(|&&v| v == top)
            .count();
        if n_top > 1 || self.unresolved == top {
            None
        } else {
            Some((self.forward == top, self.backward == top))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusVote {
    pub from: String,
    pub to: String,
    pub forward: usize,
    pub backward: usize,
    pub unresolved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub round_seeds: Vec<u64>,
    pub rounds: Vec<GraphJson>,
    pub votes: Vec<ConsensusVote>,
    pub conflicts: Vec<Vec<String>>,
    pub consensus: GraphJson,
}

/// Combines per-round graphs: an edge survives only if present in every
/// round, its orientation follows the plurality vote and its strength is
/// the mean over rounds.
pub fn consensus_graph(rounds: &[MixedGraph]) -> Result<(MixedGraph, Vec<ConsensusVote>)> {
    let first = rounds
        .first()
        .ok_or_else(|| Error::InvalidArgument("no rounds to combine".into()))?;
    let vars = first.variables().to_vec();
    if rounds.iter().any(|g| g.variables() != vars.as_slice()) {
        return Err(Error::InvalidArgument(
            "rounds disagree on variables".into(),
        ));
    }
    let common: BTreeSet<(usize, usize)> =
        rounds.iter().skip(1).fold(first.skeleton(), |acc, g| {
            acc.intersection(&g.skeleton()).copied().collect()
        });
    let mut out = MixedGraph::empty(vars.clone());
    let mut votes = Vec::new();
    for (lo, hi) in common {
        let mut v = OrientationVotes::default();
        let mut rhos = Vec::new();
        let mut max_p: Option<f64> = None;
        for g in rounds {
            v.record(g, lo, hi);
            let e = g.edge(lo, hi).expect("common edge");
            rhos.extend(e.rho);
            if let Some(p) = e.max_p {
                max_p = Some(max_p.map_or(p, |m: f64| m.max(p)));
            }
        }
        out.add_undirected(lo, hi);
        match v.winner() {
            Some((true, _)) => out.orient(lo, hi),
            Some((_, true)) => out.orient(hi, lo),
            _ => out.set_mark(lo, hi, EdgeMark::Unresolved),
        }
        let e = out.edge_mut(lo, hi).expect("added");
        e.rho = (rhos.len() == rounds.len()).then(|| stats::mean(&rhos));
        e.max_p = max_p;
        votes.push(ConsensusVote {
            from: vars[lo].clone(),
            to: vars[hi].clone(),
            forward: v.forward,
            backward: v.backward,
            unresolved: v.unresolved,
        });
    }
    out.finalize();
    Ok((out, votes))
}

/// Runs pooling plus the full search for each round (round `r` uses seed
/// `derive_seed(seed, r)` for both the pool and the test) and builds the
/// consensus graph.
pub fn stability_analysis(
    cities: &[CityDataset],
    n_rounds: usize,
    n_total: usize,
    seed: u64,
    config: &PcConfig,
    knowledge: &BackgroundKnowledge,
) -> Result<(StabilityReport, MixedGraph)> {
    if n_rounds == 0 {
        return Err(Error::InvalidArgument(
            "at least one round is required".into(),
        ));
    }
    let mut graphs = Vec::with_capacity(n_rounds);
    let mut seeds = Vec::with_capacity(n_rounds);
    let mut conflicts = Vec::with_capacity(n_rounds);
    for r in 0..n_rounds {
        let round_seed = stats::derive_seed(seed, r as u64);
        let pool = balanced_pool(cities, n_total, round_seed)?;
        let mut cfg = config.clone();
        cfg.ci.seed = round_seed;
        let res = run_pc(&pool.data, &cfg, knowledge)?;
        seeds.push(round_seed);
        conflicts.push(res.conflicts);
        graphs.push(res.graph);
    }
    let (consensus, votes) = consensus_graph(&graphs)?;
    Ok((
        StabilityReport {
            round_seeds: seeds,
            rounds: graphs.iter().map(MixedGraph::to_json).collect(),
            votes,
            conflicts,
            consensus: consensus.to_json(),
        },
        consensus,
    ))
}
