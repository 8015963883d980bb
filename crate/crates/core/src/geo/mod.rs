//! Spatial features, trip endpoints, network distances and job centrality.

pub mod centrality;
pub mod features;
pub mod geometry;
pub mod network;
pub mod sampling;
pub mod vkt;

pub use centrality::{urban_centrality_index, CentralityResult, JobZone};
pub use features::{
    count_intersections, distance_to_center, distance_to_center_km, distance_to_employment_km,
    distance_to_nearest_center_km, population_density, street_connectivity, EmploymentField,
    EmploymentSelector, EmploymentSite, FeatureVector, FEATURE_NAMES,
};
pub use geometry::{Crs, GeoPoint, Point, Polygon};
pub use network::{grid_network, Edge, NetworkPoint, RoadClass, RoadNetwork};
pub use sampling::{sample_trip_endpoints, OdDemand, SampledTrip};
pub use vkt::{mean_vkt_per_taz, TimeWindow, TripDistance};
