use std::path::PathBuf;

/// Errors raised by the analysis engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("duplicate instance id {0:?}")]
    DuplicateId(String),
    #[error("instance {id:?} has attribute keys that differ from the first instance")]
    AttributeSchemaMismatch { id: String },
    #[error("embedding file does not start with the DSEM magic")]
    BadMagic,
    #[error("unsupported embedding file version {0}")]
    UnsupportedVersion(u32),
    #[error("expected {expected} rows, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("space {space:?} has {found} rows but the manifest has {expected} instances")]
    RowCountMismatch {
        space: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("the {0} split is empty")]
    SplitEmpty(&'static str),
    #[error("ratio must be strictly positive, got {0}")]
    NonPositiveRatio(f64),
    #[error("loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown latent space {0:?}")]
    UnknownSpace(String),
    #[error("unknown instance {0:?}")]
    UnknownInstance(String),
    #[error("unknown cluster {0}")]
    UnknownCluster(usize),
    #[error("no trained ratio model available")]
    MissingModel,
    #[error("missing artifact: {0}")]
    MissingArtifact(&'static str),
    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("all points are identical; no variance to project")]
    DegenerateVariance,
    #[error("scores do not cover instance {0}")]
    ScoreCoverageGap(usize),
    #[error("coordinates missing for instance {0:?}")]
    CoverageGap(String),
    #[error("value {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("instances carry no attributes")]
    NoAttributes,
    #[error("store at {0} is locked by another process")]
    StoreLocked(PathBuf),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
