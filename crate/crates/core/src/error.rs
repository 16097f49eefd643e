use std::path::PathBuf;

use thiserror::Error;

/// Coarse classification used by the command-line front end to choose an
/// exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("mesh has no vertices")]
    EmptyMesh,

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("point set is empty")]
    EmptyPointSet,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("duplicate pair id: {0}")]
    DuplicateId(String),

    #[error("singular configuration: {0}")]
    SingularConfiguration(String),

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("degenerate line: endpoints closer than 1e-9 mm")]
    DegenerateLine,

    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("unknown region {0:?} (expected face, chin or lower-face)")]
    UnknownRegion(String),

    #[error("mask is not mirror-closed; offending vertices: {0:?}")]
    MirrorOutsideMask(Vec<usize>),

    #[error("rank-deficient system: {0}")]
    RankDeficient(String),

    #[error("non-finite loss term {term} (epoch {epoch}, batch {batch})")]
    NonFiniteLoss {
        term: &'static str,
        epoch: usize,
        batch: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::UnknownRegion(_) | Error::InvalidArgument(_) => {
                ErrorKind::Config
            }
            Error::SingularConfiguration(_)
            | Error::DegenerateConfiguration(_)
            | Error::DegenerateLine
            | Error::RankDeficient(_)
            | Error::NonFiniteLoss { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
