use std::path::PathBuf;

use thiserror::Error;

use crate::dsl::DslError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("duplicate key {key:?} in table")]
    DuplicateKey { key: String },

    #[error("no rows matched on key between control and test")]
    NoMatchedKeys,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("expression error: {0}")]
    Dsl(#[from] DslError),

    #[error("noise rule {rule:?}: {message}")]
    NoiseRule { rule: String, message: String },

    #[error("provider error: {0}")]
    Provider(String),

    #[error("feature synthesis failed: {0}")]
    Synthesis(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("stale artifact {path}: built from config {found}, current config is {expected}")]
    StaleArtifact {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

/// Process exit status for a successful run.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_STAGE: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;

impl Error {
    pub fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| match e {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// 1 for configuration problems, 3 for provider failures, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => EXIT_VALIDATION,
            Error::Provider(_) => EXIT_PROVIDER,
            Error::Stage { source, .. } => match source.exit_code() {
                EXIT_PROVIDER => EXIT_PROVIDER,
                _ => EXIT_STAGE,
            },
            _ => EXIT_STAGE,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
