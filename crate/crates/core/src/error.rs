use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing required column `{column}` in {source_name}")]
    MissingColumn { source_name: String, column: String },

    #[error("row {row}, column `{column}`: {message}")]
    InvalidField {
        row: usize,
        column: String,
        message: String,
    },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("city `{city}`: feature `{feature}` has zero variance")]
    ZeroVariance { city: String, feature: String },

    #[error("city `{city}` has {available} rows, {required} required")]
    InsufficientRows {
        city: String,
        available: usize,
        required: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("coordinate reference mismatch: {left} vs {right}")]
    CrsMismatch { left: u32, right: u32 },

    #[error("TAZ `{0}` has no residential or tertiary road to sample from")]
    NoEligibleEdges(String),

    #[error("point could not be snapped within {radius_m} m of an eligible edge")]
    SnapFailed { radius_m: f64 },

    #[error("conditional independence test failed for ({x}, {y} | {z:?}): {message}")]
    CiTest {
        x: usize,
        y: usize,
        z: Vec<usize>,
        message: String,
    },

    #[error("edge ({0}, {1}) is not in the skeleton")]
    EdgeAbsent(usize, usize),

    #[error("inconsistent background knowledge: {0}")]
    InconsistentKnowledge(String),

    #[error("feature count {got} does not match model arity {expected}")]
    ArityMismatch { expected: usize, got: usize },

    #[error("exact Shapley enumeration supports at most {max} features, got {got}")]
    TooManyFeatures { max: usize, got: usize },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
