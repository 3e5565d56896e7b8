use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("coincident points: a query point lies at distance 0 from a stored point")]
    CoincidentPoints,

    #[error("coincident points in replicate (seed {seed}, stream {stream})")]
    ReplicateAborted { seed: u64, stream: u64 },

    #[error("index holds {have} point(s), query needs {need}")]
    EmptyIndex { have: usize, need: usize },

    #[error("all attachment weights are -inf")]
    DegenerateWeights,

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("mismatched replicates: {0}")]
    Mismatch(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Stable machine-readable class name, used for CLI error reports.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::CoincidentPoints | Error::ReplicateAborted { .. } => "coincident_points",
            Error::EmptyIndex { .. } => "empty_index",
            Error::DegenerateWeights => "degenerate_weights",
            Error::Fit(_) => "fit",
            Error::Mismatch(_) => "mismatch",
            Error::Invariant(_) => "invariant",
            Error::Io { .. } => "io",
            Error::Parse(_) => "parse",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}
