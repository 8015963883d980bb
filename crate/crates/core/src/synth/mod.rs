//! Ground-truth generators: a linear-Gaussian SCM of the urban-form graph
//! and a geometric synthetic city.

pub mod city;
pub mod scm;

pub use city::{
    generate_city, read_trips_csv, similar_cities, CityConfig, CityMeta, SecondaryCluster,
    SyntheticCity, TripRecord,
};
pub use scm::{
    as_tested_rho, calibrate, population_partial_correlation, urban_form_scm, urban_form_structure,
    StructuralCausalModel, Term, BALANCED_POOL_SIZE, URBAN_FORM_TARGETS, URBAN_FORM_VARIABLES,
};
