use std::path::PathBuf;

use crate::checkpoint::Checkpoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("output is not attached to a tape")]
    NoTape,
    #[error("non-finite value produced by {op} at element {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("ingestion error in {path}: {message} (offset {offset})")]
    Ingestion {
        path: PathBuf,
        offset: usize,
        message: String,
    },
    #[error("allocation error: {0}")]
    Allocation(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("training diverged at epoch {epoch}, step {step}: {what} is not finite")]
    Divergence {
        epoch: usize,
        step: usize,
        what: &'static str,
        /// Parameters at the time of divergence, for post-mortem inspection.
        checkpoint: Option<Box<Checkpoint>>,
    },
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
