use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("{path}:{line}: {message}")]
    Config {
        path: String,
        line: usize,
        message: String,
    },

    #[error("IDX file has magic {found:#010x}, expected 0x00000803")]
    BadMagic { found: u32 },

    #[error("IDX file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("{} was produced by config {existing}, current config is {current}; pass --force to overwrite", path.display())]
    ConfigMismatch {
        path: PathBuf,
        existing: String,
        current: String,
    },

    #[error("missing artifact {}: {hint}", path.display())]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: pmrf_core::Error,
    },

    #[error(transparent)]
    Core(#[from] pmrf_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

/// Tag a core error with the pipeline stage that raised it.
pub trait StageContext<T> {
    fn stage(self, stage: impl Into<String>) -> Result<T>;
}

impl<T> StageContext<T> for pmrf_core::Result<T> {
    fn stage(self, stage: impl Into<String>) -> Result<T> {
        self.map_err(|source| LabError::Stage {
            stage: stage.into(),
            source,
        })
    }
}
