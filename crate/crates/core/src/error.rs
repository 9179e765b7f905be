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

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid zonal masks: {0}")]
    InvalidZonalMask(String),

    #[error("empty cohort")]
    EmptyCohort,

    #[error("invalid phantom spec: {0}")]
    Spec(String),

    #[error("state error: {0}")]
    State(String),

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Training { iteration: u64, loss: f64 },

    #[error("bootstrap unstable: {degenerate} degenerate draws for {n_reps} replicates")]
    Instability { degenerate: usize, n_reps: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing path: {0}")]
    MissingPath(PathBuf),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric/training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) | Error::Spec(_) | Error::MissingPath(_) => 2,
            Error::Training { .. } | Error::Instability { .. } | Error::NonFinite { .. } => 4,
            _ => 3,
        }
    }
}
