use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::graph::{EdgeMark, MixedGraph};
use super::knowledge::{apply_background_knowledge, BackgroundKnowledge};
use crate::ci::{CiEngine, CiTestConfig};
use crate::error::{Error, Result};
use crate::matrix::DataMatrix;

/// One conditional independence test run on an adjacent pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub condition_set: Vec<usize>,
    pub p_value: f64,
    pub statistic: f64,
    pub rho: Option<f64>,
}

/// Conditioning sets that rendered each removed pair independent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeparationSets {
    sets: BTreeMap<(usize, usize), Vec<Vec<usize>>>,
}

impl SeparationSets {
    pub fn insert(&mut self, a: usize, b: usize, z: Vec<usize>) {
        self.sets.entry((a.min(b), a.max(b))).or_default().push(z);
    }

    pub fn get(&self, a: usize, b: usize) -> Option<&[Vec<usize>]> {
        self.sets.get(&(a.min(b), a.max(b))).map(Vec::as_slice)
    }

    pub fn pairs(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.sets.keys()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcConfig {
    pub ci: CiTestConfig,
    /// Order-independent skeleton search; `false` runs the original PC.
    pub stable: bool,
}

impl Default for PcConfig {
    fn default() -> Self {
        Self {
            ci: CiTestConfig::default(),
            stable: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PcResult {
    pub graph: MixedGraph,
    pub sepsets: SeparationSets,
    pub tests: BTreeMap<(usize, usize), Vec<TestRecord>>,
    pub conflicts: Vec<String>,
}

/// Subsets of `items` of size `k` in lexicographic order.
pub fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(
        items: &[usize],
        k: usize,
        start: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            if items.len() - i < k - cur.len() {
                break;
            }
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, k, 0, &mut Vec::with_capacity(k), &mut out);
    out
}

fn run_test(
    engine: &CiEngine,
    a: usize,
    b: usize,
    z: &[usize],
    tests: &mut BTreeMap<(usize, usize), Vec<TestRecord>>,
) -> Result<f64> {
    let out = engine.test(a, b, z)?;
    tests.entry((a, b)).or_default().push(TestRecord {
        condition_set: z.to_vec(),
        p_value: out.p_value,
        statistic: out.statistic,
        rho: out.partial_correlation,
    });
    Ok(out.p_value)
}

/// Learns the adjacency skeleton starting from the complete graph.
///
/// In stable mode each level conditions on the adjacency sets frozen at the
/// start of the level, and every candidate set of the level is tested, so
/// both the skeleton and the recorded separating sets are independent of
/// variable order. Plain mode uses the live adjacencies and stops at the
/// first separating set.
pub fn pc_skeleton(
    engine: &CiEngine,
    variables: Vec<String>,
    stable: bool,
) -> Result<(
    MixedGraph,
    SeparationSets,
    BTreeMap<(usize, usize), Vec<TestRecord>>,
)> {
    let alpha = engine.config().alpha;
    let mut g = MixedGraph::complete(variables);
    let d = g.n_vars();
    let mut sepsets = SeparationSets::default();
    let mut tests = BTreeMap::new();
    let mut level = 0;
    loop {
        let snapshot: Vec<Vec<usize>> = (0..d).map(|i| g.adjacencies(i)).collect();
        let mut any_candidate = false;
        for (a, b) in g.skeleton() {
            if !g.adjacent(a, b) {
                continue;
            }
            let mut sets: BTreeSet<Vec<usize>> = BTreeSet::new();
            for (x, y) in [(a, b), (b, a)] {
                let adj = if stable {
                    snapshot[x].clone()
                } else {
                    g.adjacencies(x)
                };
                let cand: Vec<usize> = adj.into_iter().filter(|&v| v != y).collect();
                if cand.len() >= level {
                    any_candidate = true;
                    sets.extend(combinations(&cand, level));
                }
            }
            let mut separated = false;
            for z in sets {
                if run_test(engine, a, b, &z, &mut tests)? > alpha {
                    sepsets.insert(a, b, z);
                    separated = true;
                    if !stable {
                        break;
                    }
                }
            }
            if separated {
                g.remove(a, b);
            }
        }
        if !any_candidate {
            break;
        }
        level += 1;
    }
    for e in g.skeleton() {
        if let Some(best) = max_p_record(&tests, e.0, e.1) {
            let (rho, p) = (best.rho, best.p_value);
            let edge = g.edge_mut(e.0, e.1).expect("in skeleton");
            edge.rho = rho;
            edge.max_p = Some(p);
        }
    }
    Ok((g, sepsets, tests))
}

fn max_p_record(
    tests: &BTreeMap<(usize, usize), Vec<TestRecord>>,
    a: usize,
    b: usize,
) -> Option<&TestRecord> {
    tests
        .get(&(a.min(b), a.max(b)))?
        .iter()
        .fold(None, |best: Option<&TestRecord>, t| match best {
            Some(b) if b.p_value >= t.p_value => Some(b),
            _ => Some(t),
        })
}

/// Dependence strength of a skeleton edge: the test with the largest
/// p-value among all tests run on the pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkStrength {
    pub rho: Option<f64>,
    pub statistic: f64,
    pub max_p: f64,
    pub condition_set: Vec<usize>,
}

pub fn link_strength(result: &PcResult, x: usize, y: usize) -> Result<LinkStrength> {
    if !result.graph.adjacent(x, y) {
        return Err(Error::EdgeAbsent(x, y));
    }
    let t = max_p_record(&result.tests, x, y).ok_or(Error::EdgeAbsent(x, y))?;
    Ok(LinkStrength {
        rho: t.rho,
        statistic: t.statistic,
        max_p: t.p_value,
        condition_set: t.condition_set.clone(),
    })
}

/// Orients unshielded colliders `x → y ← z` when `y` is in none of the
/// recorded separating sets of `(x, z)`. An edge demanded in both
/// directions becomes unresolved. Edges already directed are kept, with
/// disagreements reported.
pub fn orient_colliders(graph: &mut MixedGraph, sepsets: &SeparationSets) -> Vec<String> {
    let d = graph.n_vars();
    let mut demands: BTreeMap<(usize, usize), BTreeSet<(usize, usize)>> = BTreeMap::new();
    for y in 0..d {
        let adj = graph.adjacencies(y);
        for (i, &x) in adj.iter().enumerate() {
            for &z in &adj[i + 1..] {
                if graph.adjacent(x, z) {
                    continue;
                }
                let Some(sets) = sepsets.get(x, z) else {
                    continue;
                };
                if sets.iter().all(|s| !s.contains(&y)) {
                    for src in [x, z] {
                        demands
                            .entry((src.min(y), src.max(y)))
                            .or_default()
                            .insert((src, y));
                    }
                }
            }
        }
    }
    let mut conflicts = Vec::new();
    let name = |g: &MixedGraph, i: usize| g.variables()[i].clone();
    for ((a, b), dirs) in demands {
        let mark = graph.edge(a, b).map(|e| e.mark);
        match mark {
            Some(EdgeMark::Directed) => {
                for &(f, t) in &dirs {
                    if graph.is_directed(t, f) {
                        conflicts.push(format!(
                            "collider demands {} -> {} but {} -> {} is fixed",
                            name(graph, f),
                            name(graph, t),
                            name(graph, t),
                            name(graph, f)
                        ));
                    }
                }
            }
            Some(EdgeMark::Undirected) if dirs.len() > 1 => {
                conflicts.push(format!(
                    "colliders demand both orientations of {} - {}; edge left unresolved",
                    name(graph, a),
                    name(graph, b)
                ));
                graph.set_mark(a, b, EdgeMark::Unresolved);
            }
            Some(EdgeMark::Undirected) => {
                let &(f, t) = dirs.iter().next().expect("nonempty");
                graph.orient(f, t);
            }
            _ => {}
        }
    }
    conflicts
}

fn meek_orientation(g: &MixedGraph, a: usize, b: usize) -> bool {
    let d = g.n_vars();
    let others = || (0..d).filter(move |&c| c != a && c != b);
    // R1: c → a − b with c, b nonadjacent
    if others().any(|c| g.is_directed(c, a) && !g.adjacent(c, b)) {
        return true;
    }
    // R2: a → c → b
    if others().any(|c| g.is_directed(a, c) && g.is_directed(c, b)) {
        return true;
    }
    // R3: a − c → b, a − e → b with c, e nonadjacent
    let into_b: Vec<usize> = others()
        .filter(|&c| g.is_undirected(a, c) && g.is_directed(c, b))
        .collect();
    for (i, &c) in into_b.iter().enumerate() {
        if into_b[i + 1..].iter().any(|&e| !g.adjacent(c, e)) {
            return true;
        }
    }
    // R4: a − k → l → b with k, b nonadjacent and a adjacent to l
    others().any(|k| {
        g.is_undirected(a, k)
            && !g.adjacent(k, b)
            && others()
                .any(|l| l != k && g.is_directed(k, l) && g.is_directed(l, b) && g.adjacent(a, l))
    })
}

/// Applies Meek's rules R1–R4 to a fixpoint. Orientations that would close
/// a directed cycle are skipped.
pub fn apply_orientation_rules(graph: &mut MixedGraph) {
    loop {
        let mut changed = false;
        let undirected: Vec<(usize, usize)> = graph
            .edges()
            .filter(|e| e.mark == EdgeMark::Undirected)
            .map(|e| (e.from, e.to))
            .collect();
        for (a, b) in undirected {
            if !graph.is_undirected(a, b) {
                continue;
            }
            for (x, y) in [(a, b), (b, a)] {
                if meek_orientation(graph, x, y) && !graph.has_directed_path(y, x) {
                    graph.orient(x, y);
                    changed = true;
                    break;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Marks the edges of any directed cycle unresolved until none remain.
fn break_cycles(graph: &mut MixedGraph) -> Vec<String> {
    let mut out = Vec::new();
    while let Some(cycle) = graph.find_directed_cycle() {
        let names: Vec<&str> = cycle
            .iter()
            .map(|&i| graph.variables()[i].as_str())
            .collect();
        out.push(format!(
            "directed cycle {} left unresolved",
            names.join(" -> ")
        ));
        let cycle = cycle.clone();
        for (i, &u) in cycle.iter().enumerate() {
            graph.set_mark(u, cycle[(i + 1) % cycle.len()], EdgeMark::Unresolved);
        }
    }
    out
}

/// Full search: skeleton, background knowledge, colliders, Meek rules,
/// background knowledge again. Remaining undirected edges end unresolved.
pub fn run_pc(
    data: &DataMatrix,
    config: &PcConfig,
    knowledge: &BackgroundKnowledge,
) -> Result<PcResult> {
    knowledge.validate()?;
    let engine = CiEngine::new(data, config.ci.clone())?;
    let (mut graph, sepsets, tests) = pc_skeleton(&engine, data.names().to_vec(), config.stable)?;
    let mut conflicts = apply_background_knowledge(&mut graph, knowledge);
    conflicts.extend(orient_colliders(&mut graph, &sepsets));
    apply_orientation_rules(&mut graph);
    conflicts.extend(apply_background_knowledge(&mut graph, knowledge));
    conflicts.extend(break_cycles(&mut graph));
    graph.finalize();
    Ok(PcResult {
        graph,
        sepsets,
        tests,
        conflicts,
    })
}
