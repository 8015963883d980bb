//! Constraint-based causal discovery: skeleton search, collider and rule
//! orientation, background knowledge and multi-round stability.

pub mod graph;
pub mod knowledge;
pub mod pc;
pub mod stability;

pub use graph::{EdgeMark, GraphEdge, GraphJson, GraphJsonEdge, MixedGraph, GRAPH_SCHEMA};
pub use knowledge::{apply_background_knowledge, BackgroundKnowledge, KnowledgeSpec};
pub use pc::{
    apply_orientation_rules, combinations, link_strength, orient_colliders, pc_skeleton, run_pc,
    LinkStrength, PcConfig, PcResult, SeparationSets, TestRecord,
};
pub use stability::{
    consensus_graph, stability_analysis, ConsensusVote, OrientationVotes, StabilityReport,
};
