use std::path::PathBuf;

use wdcgan_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("config error: {0}")]
    Config(String),
    #[error("missing upstream artifact {}: run `{stage}` first", path.display())]
    MissingArtifact { path: PathBuf, stage: String },
    #[error("{0}")]
    Precondition(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type CliResult<T> = Result<T, CliError>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(CoreError::Config(_)) => EXIT_CONFIG,
            CliError::MissingArtifact { .. }
            | CliError::Core(
                CoreError::Ingestion { .. } | CoreError::Allocation(_) | CoreError::Geometry(_),
            ) => EXIT_DATA,
            CliError::Core(CoreError::Divergence { .. }) => EXIT_DIVERGENCE,
            _ => EXIT_OTHER,
        }
    }
}
