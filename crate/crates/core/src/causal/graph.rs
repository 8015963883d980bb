use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeMark {
    /// Not yet oriented; only present while the search runs.
    Undirected,
    /// `from → to`.
    Directed,
    /// Orientation could not be decided (`o−o`).
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: usize,
    pub to: usize,
    pub mark: EdgeMark,
    pub rho: Option<f64>,
    pub max_p: Option<f64>,
}

/// Graph over named variables with at most one edge per unordered pair.
/// Edges are keyed by `(min, max)`; for non-directed marks `from < to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedGraph {
    variables: Vec<String>,
    edges: BTreeMap<(usize, usize), GraphEdge>,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl MixedGraph {
    pub fn empty(variables: Vec<String>) -> Self {
        Self {
            variables,
            edges: BTreeMap::new(),
        }
    }

    pub fn complete(variables: Vec<String>) -> Self {
        let mut g = Self::empty(variables);
        let d = g.n_vars();
        for a in 0..d {
            for b in a + 1..d {
                g.add_undirected(a, b);
            }
        }
        g
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn add_undirected(&mut self, a: usize, b: usize) {
        assert!(
            a != b && a < self.n_vars() && b < self.n_vars(),
            "invalid edge ({a}, {b})"
        );
        let (from, to) = key(a, b);
        self.edges.insert(
            (from, to),
            GraphEdge {
                from,
                to,
                mark: EdgeMark::Undirected,
                rho: None,
                max_p: None,
            },
        );
    }

    pub fn add_directed(&mut self, from: usize, to: usize) {
        self.add_undirected(from, to);
        self.orient(from, to);
    }

    pub fn remove(&mut self, a: usize, b: usize) -> Option<GraphEdge> {
        self.edges.remove(&key(a, b))
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.edges.contains_key(&key(a, b))
    }

    pub fn edge(&self, a: usize, b: usize) -> Option<&GraphEdge> {
        self.edges.get(&key(a, b))
    }

    pub fn edge_mut(&mut self, a: usize, b: usize) -> Option<&mut GraphEdge> {
        self.edges.get_mut(&key(a, b))
    }

    pub fn edges(&self) -> impl Iterator<Item = &GraphEdge> {
        self.edges.values()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Unordered adjacent pairs `(min, max)`.
    pub fn skeleton(&self) -> BTreeSet<(usize, usize)> {
        self.edges.keys().copied().collect()
    }

    pub fn adjacencies(&self, i: usize) -> Vec<usize> {
        (0..self.n_vars())
            .filter(|&j| j != i && self.adjacent(i, j))
            .collect()
    }

    pub fn is_undirected(&self, a: usize, b: usize) -> bool {
        self.edge(a, b)
            .is_some_and(|e| e.mark == EdgeMark::Undirected)
    }

    pub fn is_unresolved(&self, a: usize, b: usize) -> bool {
        self.edge(a, b)
            .is_some_and(|e| e.mark == EdgeMark::Unresolved)
    }

    /// True for `a → b`.
    pub fn is_directed(&self, a: usize, b: usize) -> bool {
        self.edge(a, b)
            .is_some_and(|e| e.mark == EdgeMark::Directed && e.from == a && e.to == b)
    }

    pub fn orient(&mut self, from: usize, to: usize) {
        if let Some(e) = self.edge_mut(from, to) {
            e.from = from;
            e.to = to;
            e.mark = EdgeMark::Directed;
        }
    }

    pub fn set_mark(&mut self, a: usize, b: usize, mark: EdgeMark) {
        let (lo, hi) = key(a, b);
        if let Some(e) = self.edge_mut(a, b) {
            e.mark = mark;
            if mark != EdgeMark::Directed {
                e.from = lo;
                e.to = hi;
            }
        }
    }

    pub fn parents(&self, i: usize) -> Vec<usize> {
        (0..self.n_vars())
            .filter(|&j| self.is_directed(j, i))
            .collect()
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.n_vars())
            .filter(|&j| self.is_directed(i, j))
            .collect()
    }

    /// Directed edges as `(from, to)`.
    pub fn directed_edges(&self) -> BTreeSet<(usize, usize)> {
        self.edges()
            .filter(|e| e.mark == EdgeMark::Directed)
            .map(|e| (e.from, e.to))
            .collect()
    }

    /// Whether `to` is reachable from `from` along directed edges.
    pub fn has_directed_path(&self, from: usize, to: usize) -> bool {
        let mut seen = vec![false; self.n_vars()];
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            if u == to {
                return true;
            }
            for c in self.children(u) {
                if !seen[c] {
                    seen[c] = true;
                    queue.push_back(c);
                }
            }
        }
        false
    }

    /// A directed cycle as a vertex list, if any.
    pub fn find_directed_cycle(&self) -> Option<Vec<usize>> {
        let d = self.n_vars();
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; d];
        let mut stack_path = Vec::new();
        fn dfs(
            g: &MixedGraph,
            u: usize,
            state: &mut [u8],
            path: &mut Vec<usize>,
        ) -> Option<Vec<usize>> {
            state[u] = 1;
            path.push(u);
            for c in g.children(u) {
                if state[c] == 1 {
                    let start = path.iter().position(|&v| v == c).expect("on stack");
                    return Some(path[start..].to_vec());
                }
                if state[c] == 0 {
                    if let Some(cy) = dfs(g, c, state, path) {
                        return Some(cy);
                    }
                }
            }
            path.pop();
            state[u] = 2;
            None
        }
        (0..d).find_map(|u| {
            if state[u] == 0 {
                dfs(self, u, &mut state, &mut stack_path)
            } else {
                None
            }
        })
    }

    /// Topological order of the directed part, or `None` if it has a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let d = self.n_vars();
        let mut indeg: Vec<usize> = (0..d).map(|i| self.parents(i).len()).collect();
        let mut ready: BTreeSet<usize> = (0..d).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(d);
        while let Some(u) = ready.pop_first() {
            order.push(u);
            for c in self.children(u) {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        (order.len() == d).then_some(order)
    }

    /// Turns every remaining undirected edge into an unresolved one.
    pub fn finalize(&mut self) {
        for e in self.edges.values_mut() {
            if e.mark == EdgeMark::Undirected {
                e.mark = EdgeMark::Unresolved;
            }
        }
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            variables: self.variables.clone(),
            edges: self
                .edges()
                .map(|e| GraphJsonEdge {
                    from: self.variables[e.from].clone(),
                    to: self.variables[e.to].clone(),
                    mark: e.mark,
                    rho: e.rho,
                    max_p: e.max_p,
                })
                .collect(),
        }
    }

    pub fn from_json(json: &GraphJson) -> Result<Self> {
        let mut g = Self::empty(json.variables.clone());
        for e in &json.edges {
            let idx = |name: &str| {
                g.index_of(name).ok_or_else(|| {
                    Error::Malformed(format!("edge references unknown variable `{name}`"))
                })
            };
            let (a, b) = (idx(&e.from)?, idx(&e.to)?);
            if a == b || g.adjacent(a, b) {
                return Err(Error::Malformed(format!(
                    "invalid or duplicate edge {} - {}",
                    e.from, e.to
                )));
            }
            g.add_undirected(a, b);
            if e.mark == EdgeMark::Directed {
                g.orient(a, b);
            } else {
                g.set_mark(a, b, e.mark);
            }
            let edge = g.edge_mut(a, b).expect("just added");
            edge.rho = e.rho;
            edge.max_p = e.max_p;
        }
        Ok(g)
    }

    /// Graphviz rendering; unresolved edges are drawn with circle ends.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph causal {\n  node [shape=box];\n");
        for v in &self.variables {
            let _ = writeln!(s, "  \"{v}\";");
        }
        for e in self.edges() {
            let label = e
                .rho
                .map(|r| format!(" label=\"{r:.2}\""))
                .unwrap_or_default();
            let style = match e.mark {
                EdgeMark::Directed => String::new(),
                EdgeMark::Undirected => " dir=none".into(),
                EdgeMark::Unresolved => " dir=both arrowhead=odot arrowtail=odot".into(),
            };
            let _ = writeln!(
                s,
                "  \"{}\" -> \"{}\" [{}{}];",
                self.variables[e.from],
                self.variables[e.to],
                style.trim_start(),
                label
            );
        }
        s.push_str("}\n");
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphJsonEdge {
    pub from: String,
    pub to: String,
    pub mark: EdgeMark,
    pub rho: Option<f64>,
    pub max_p: Option<f64>,
}

/// Serialized graph: `{variables, edges: [{from, to, mark, rho, max_p}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub variables: Vec<String>,
    pub edges: Vec<GraphJsonEdge>,
}

/// JSON Schema for [`GraphJson`].
pub const GRAPH_SCHEMA: &str = include_str!("../../data/graph.schema.json");

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("v{i}")).collect()
    }

    #[test]
    fn orientation_queries() {
        let mut g = MixedGraph::empty(names(3));
        g.add_undirected(2, 0);
        assert!(g.is_undirected(0, 2));
        g.orient(2, 0);
        assert!(g.is_directed(2, 0) && !g.is_directed(0, 2));
        assert_eq!(g.parents(0), vec![2]);
        g.set_mark(0, 2, EdgeMark::Unresolved);
        assert_eq!(g.edge(0, 2).map(|e| (e.from, e.to)), Some((0, 2)));
    }

    #[test]
    fn cycle_detection_and_topological_order() {
        let mut g = MixedGraph::empty(names(3));
        g.add_directed(0, 1);
        g.add_directed(1, 2);
        assert_eq!(g.topological_order(), Some(vec![0, 1, 2]));
        assert!(g.find_directed_cycle().is_none());
        g.add_directed(2, 0);
        assert!(g.topological_order().is_none());
        assert_eq!(g.find_directed_cycle().map(|c| c.len()), Some(3));
    }

    #[test]
    fn json_round_trip() {
        let mut g = MixedGraph::complete(names(4));
        g.orient(3, 1);
        g.set_mark(0, 2, EdgeMark::Unresolved);
        g.edge_mut(0, 1).unwrap().rho = Some(0.25);
        let back = MixedGraph::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
        assert!(g.to_dot().contains("\"v3\" -> \"v1\""));
    }
}
