use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by the process exit code the command-line driver maps
/// them to (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate item_id `{0}`")]
    DuplicateItem(String),

    #[error("item `{item_id}`: {message}")]
    InvalidItem { item_id: String, message: String },

    #[error("item `{item_id}`: answer `{raw}` does not resolve to any option")]
    UnresolvableAnswer { item_id: String, raw: String },

    #[error("unknown item_id `{0}`")]
    UnknownItem(String),

    #[error("dataset `{dataset}` has {count} item(s); at least 2 are needed to stratify")]
    TooFewToStratify { dataset: String, count: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("need at least {needed} scored pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },

    #[error("calibration labels are all {0}; both classes are required")]
    DegenerateLabels(bool),

    #[error("routing policy has no parameters for group `{0}`")]
    UnknownGroup(String),

    #[error("group `{0}` has no calibration observations")]
    EmptyGroup(String),

    #[error("item `{item_id}` is missing its {side} judgment")]
    MissingSide { item_id: String, side: &'static str },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// 0 success, 1 config error, 2 data error, 3 invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Invariant(_) => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
