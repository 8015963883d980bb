use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::graph::{EdgeMark, MixedGraph};
use crate::error::{Error, Result};

/// Orientation constraints by variable name, as written in configs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnowledgeSpec {
    /// `(cause, effect)` orientations that must never appear.
    pub forbidden: Vec<(String, String)>,
    /// Variables no other variable may cause.
    pub sources: Vec<String>,
    /// Variables that may not cause any other variable.
    pub sinks: Vec<String>,
}

impl KnowledgeSpec {
    /// Distance to centre and income are exogenous; the target causes nothing.
    pub fn urban_form(distance_to_center: &str, income: &str, target: &str) -> Self {
        Self {
            forbidden: Vec::new(),
            sources: vec![distance_to_center.into(), income.into()],
            sinks: vec![target.into()],
        }
    }
}

/// Resolved constraints over variable indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackgroundKnowledge {
    pub forbidden: BTreeSet<(usize, usize)>,
    pub required_sources: BTreeSet<usize>,
    pub required_sinks: BTreeSet<usize>,
}

impl BackgroundKnowledge {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn resolve(spec: &KnowledgeSpec, variables: &[String]) -> Result<Self> {
        let idx = |name: &str| {
            variables
                .iter()
                .position(|v| v == name)
                .ok_or_else(|| Error::InconsistentKnowledge(format!("unknown variable `{name}`")))
        };
        let k = Self {
            forbidden: spec
                .forbidden
                .iter()
                .map(|(a, b)| Ok((idx(a)?, idx(b)?)))
                .collect::<Result<_>>()?,
            required_sources: spec.sources.iter().map(|s| idx(s)).collect::<Result<_>>()?,
            required_sinks: spec.sinks.iter().map(|s| idx(s)).collect::<Result<_>>()?,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self
            .required_sources
            .intersection(&self.required_sinks)
            .next()
        {
            return Err(Error::InconsistentKnowledge(format!(
                "variable {v} is both a source and a sink"
            )));
        }
        if let Some((a, b)) = self.forbidden.iter().find(|(a, b)| a == b) {
            return Err(Error::InconsistentKnowledge(format!(
                "self-loop ({a}, {b}) in forbidden set"
            )));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.forbidden.is_empty()
            && self.required_sources.is_empty()
            && self.required_sinks.is_empty()
    }

    /// Whether `from → to` is ruled out.
    pub fn forbids(&self, from: usize, to: usize) -> bool {
        self.forbidden.contains(&(from, to))
            || self.required_sources.contains(&to)
            || self.required_sinks.contains(&from)
    }
}

/// Orients every edge whose direction the knowledge pins down. Edges with
/// both orientations forbidden become unresolved. A knowledge-dictated
/// orientation replaces an opposite one found from data; each such override
/// is returned as a conflict message.
pub fn apply_background_knowledge(
    graph: &mut MixedGraph,
    knowledge: &BackgroundKnowledge,
) -> Vec<String> {
    let mut conflicts = Vec::new();
    let edges: Vec<(usize, usize, EdgeMark)> =
        graph.edges().map(|e| (e.from, e.to, e.mark)).collect();
    for (a, b, mark) in edges {
        let ab = !knowledge.forbids(a, b);
        let ba = !knowledge.forbids(b, a);
        let name = |i: usize| graph.variables()[i].clone();
        match (ab, ba) {
            (true, true) => {}
            (false, false) => {
                if mark != EdgeMark::Unresolved {
                    conflicts.push(format!(
                        "both orientations of {} - {} are forbidden; edge left unresolved",
                        name(a),
                        name(b)
                    ));
                    graph.set_mark(a, b, EdgeMark::Unresolved);
                }
            }
            (allowed_ab, _) => {
                let (from, to) = if allowed_ab { (a, b) } else { (b, a) };
                if graph.is_directed(to, from) {
                    conflicts.push(format!(
                        "data oriented {} -> {} against background knowledge; reoriented",
                        name(to),
                        name(from)
                    ));
                }
                graph.orient(from, to);
            }
        }
    }
    conflicts
}
