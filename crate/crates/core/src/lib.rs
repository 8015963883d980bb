//! Causal analysis of urban form against car travel distance.

pub mod analysis;
pub mod causal;
pub mod ci;
pub mod dataset;
pub mod emissions;
pub mod error;
pub mod gbdt;
pub mod geo;
pub mod matrix;
pub mod pipeline;
pub mod scalar;
pub mod shapley;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type RoadNetworkF64 = geo::RoadNetwork<f64>;
pub type RoadNetworkF32 = geo::RoadNetwork<f32>;
pub type PointF64 = geo::Point<f64>;
pub type PointF32 = geo::Point<f32>;
pub type PolygonF64 = geo::Polygon<f64>;
pub type PolygonF32 = geo::Polygon<f32>;
pub type GbdtModelF64 = gbdt::GbdtModel<f64>;
pub type GbdtModelF32 = gbdt::GbdtModel<f32>;
pub type ShapleyExplanationF64 = shapley::ShapleyExplanation<f64>;
pub type ShapleyExplanationF32 = shapley::ShapleyExplanation<f32>;
pub type EffectCurveF64 = analysis::EffectCurve<f64>;
pub type EffectCurveF32 = analysis::EffectCurve<f32>;
pub type CorridorResultF64 = analysis::CorridorResult<f64>;
pub type RingSharesF64 = analysis::RingShares<f64>;
pub type EmissionFactorTableF64 = emissions::EmissionFactorTable<f64>;
