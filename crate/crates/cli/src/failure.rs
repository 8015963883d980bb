//! Error classes mapped to process exit codes.

use std::fmt;

#[derive(Debug)]
pub enum Failure {
    /// Invalid or inconsistent configuration; exit code 2.
    Config(String),
    /// Input data that cannot be read or processed; exit code 3.
    Data(String),
    /// Anything else (output directory, lock); exit code 1.
    Other(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Other(_) => 1,
        }
    }

    pub fn data(context: impl fmt::Display, e: impl fmt::Display) -> Self {
        Failure::Data(format!("{context}: {e}"))
    }

    pub fn other(context: impl fmt::Display, e: impl fmt::Display) -> Self {
        Failure::Other(format!("{context}: {e}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Other(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

impl From<urbcause::Error> for Failure {
    fn from(e: urbcause::Error) -> Self {
        Failure::Data(e.to_string())
    }
}
