use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit can report.
///
/// Variants fall into two groups: input/contract violations (exit code 2)
/// and numerical degeneracies (exit code 3), see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty cloud")]
    EmptyCloud,
    #[error("non-finite coordinate at point {index}")]
    NonFinitePoint { index: usize },
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("index {index} out of bounds for cloud of {len} points")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("model '{id}' has an empty cloud")]
    EmptyModel { id: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("bad feature file magic")]
    FeatureMagic,
    #[error("unsupported feature file version {0}")]
    FeatureVersion(u32),
    #[error("feature/point count mismatch: expected {expected}, found {found}")]
    FeatureCountMismatch { expected: usize, found: usize },
    #[error("non-finite feature at row {row}")]
    NonFiniteFeature { row: usize },
    #[error("truncated feature file: expected {expected} bytes of data, found {found}")]
    FeatureTruncated { expected: usize, found: usize },
    #[error("feature dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("no negatives available")]
    NoNegatives,
    #[error("duplicate model id '{0}'")]
    DuplicateModelId(String),
    #[error("model '{id}': embedding dimension {found} differs from database dimension {expected}")]
    EmbeddingDim {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("model '{id}': {message}")]
    Entry { id: String, message: String },
    #[error("empty database")]
    EmptyDatabase,
    #[error("unknown model id '{0}'")]
    UnknownModel(String),
    #[error("config error in {}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("too few correspondences: need at least 3, got {0}")]
    TooFewCorrespondences(usize),
    #[error("over-occluded: {remaining} points remain, at least 50 required")]
    OverOccluded { remaining: usize },

    #[error("degenerate correspondence set")]
    DegenerateCorrespondences,
    #[error("degenerate symmetry split")]
    DegenerateSplit,
}

impl Error {
    /// Process exit code for the CLI: 2 for input or contract errors,
    /// 3 for numerical degeneracy.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateCorrespondences | Error::DegenerateSplit => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(message: impl Into<String>) -> Self {
        Error::Parameter(message.into())
    }
}
