use std::path::PathBuf;

use crate::grid::CellIndex;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the library. The CLI maps each variant to one of
/// its exit codes via [`Error::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("time {t} outside sampling interval [{start}, {end}]")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },

    #[error("interface normal vanishes in cell {cell:?}")]
    DegenerateNormal { cell: CellIndex },

    #[error("point does not lie outside the interface half-space")]
    NotOutsidePatch,

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: bad magic, expected {expected:?}, found {found:?}", path.display())]
    MagicMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{}: dimension mismatch: {detail}", path.display())]
    DimensionMismatch { path: PathBuf, detail: String },

    #[error("{}: truncated payload, expected {expected} bytes but found {found}", path.display())]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{}:{line}: {detail}", path.display())]
    Manifest {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("{}:{line}: {detail}", path.display())]
    Config {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("ghost width {have} is insufficient, {need} cells required ({detail})")]
    GhostWidth {
        have: usize,
        need: usize,
        detail: String,
    },

    #[error("no cell with f > tau remains in the domain")]
    FeatureVanished,

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 configuration, 2 data, 3 internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidConfig(_) | Error::GhostWidth { .. } => 1,
            Error::Scenario(_) => 1,
            Error::InvalidGrid(_)
            | Error::InvalidField(_)
            | Error::InvalidDataset(_)
            | Error::Io { .. }
            | Error::MagicMismatch { .. }
            | Error::DimensionMismatch { .. }
            | Error::Truncated { .. }
            | Error::Manifest { .. } => 2,
            Error::TimeOutOfRange { .. }
            | Error::DegenerateNormal { .. }
            | Error::NotOutsidePatch
            | Error::FeatureVanished
            | Error::Invariant(_) => 3,
        }
    }
}
