use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: index {index} at position {position} is out of range for size {size}")]
    IndexOutOfRange {
        op: &'static str,
        position: usize,
        index: usize,
        size: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid system {id}: {reason}")]
    InvalidSystem { id: String, reason: String },

    #[error("atomic number {z} at atom {atom} is outside 1..=100")]
    AtomicNumber { atom: usize, z: u32 },

    #[error("cell is degenerate (|det| = {0:e})")]
    DegenerateCell(f64),

    #[error("cell width {width:.3} Å is smaller than the cutoff {cutoff:.3} Å")]
    CellTooSmall { width: f64, cutoff: f64 },

    #[error("system has no {0} atoms")]
    EmptyComponent(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing parameter {0:?}")]
    MissingParam(String),

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
