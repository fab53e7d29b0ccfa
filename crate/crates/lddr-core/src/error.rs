use std::path::PathBuf;

/// Error type shared across the crate.
///
/// Variants are grouped by failure class so callers (notably the CLI) can
/// map them onto disjoint exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inconsistent configuration: mismatched channels, unknown layer,
    /// stage out of range, weight-hash mismatch, bad version tag.
    #[error("configuration error: {0}")]
    Config(String),

    /// A layer stack cannot be applied to the given spatial dimensions.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Invalid input data: empty lists, mixed landmark counts, degenerate
    /// boxes, out-of-range arguments.
    #[error("input error: {0}")]
    Input(String),

    /// Numerical failure, e.g. a singular normal system with lambda = 0.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Malformed file content.
    #[error("parse error: {msg}{}", match line { Some(l) => format!(" (line {l})"), None => String::new() })]
    Parse { msg: String, line: Option<usize> },

    /// Degenerate evaluation input, e.g. a zero normalizer.
    #[error("metric error: {0}")]
    Metric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn geometry(msg: impl Into<String>) -> Self {
        Error::Geometry(msg.into())
    }
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse { msg: msg.into(), line: None }
    }
    pub fn parse_at(msg: impl Into<String>, line: usize) -> Self {
        Error::Parse { msg: msg.into(), line: Some(line) }
    }
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
