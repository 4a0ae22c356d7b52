//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error at {path}:{line}: {message}")]
    JsonLine {
        path: String,
        line: usize,
        message: String,
    },

    #[error("malformed dictionary row at line {line}: {reason}")]
    DictionaryRow { line: usize, reason: String },

    #[error("empty dictionary")]
    EmptyDictionary,

    #[error("demographics carry no birth date")]
    MissingBirthDate,

    #[error("reference instant precedes birth date")]
    BeforeBirth,

    #[error("empty prediction list")]
    EmptyPredictions,

    #[error("bin count {got} outside valid range ({reason})")]
    InvalidBinCount { got: usize, reason: String },

    #[error("AUROC undefined: {0}")]
    AurocUndefined(String),

    #[error("invalid probability {0}")]
    InvalidProbability(f64),

    #[error("invalid binary label {0}")]
    InvalidLabel(u8),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown task {0}")]
    UnknownTask(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("record {record} is missing a label for task {task}")]
    MissingLabel { record: String, task: String },

    #[error("empty training data")]
    EmptyData,

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("multi-task prompt requires tasks from one category, got {0}")]
    CategoryMismatch(String),

    #[error("prompt requires {expected} task(s), got {got}")]
    TaskCount { expected: String, got: usize },

    #[error("response sets cover different prompts (fingerprint mismatch)")]
    FingerprintMismatch,

    #[error("all {slots} generation slots failed; last error: {last}")]
    AllSlotsFailed { slots: usize, last: String },

    #[error("client transport failure: {0}")]
    Transport(String),

    #[error("mock oracle has no entry for prompt fingerprint {0}")]
    UnknownFingerprint(String),

    #[error("test-set constraint unsatisfiable within {draws} draws")]
    SamplingInfeasible { draws: usize },

    #[error("missing trained artifact: {0}")]
    MissingArtifact(String),

    #[error("report schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("checkpoint version {got} unsupported (expected {expected})")]
    CheckpointVersion { expected: u32, got: u32 },
}

impl Error {
    /// Exit-code class for the batch driver: 2 for configuration errors,
    /// 3 for runtime degradation, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_)
            | Error::InvalidBinCount { .. }
            | Error::InvalidProbability(_)
            | Error::InvalidLabel(_)
            | Error::TaskCount { .. }
            | Error::CategoryMismatch(_) => 2,
            Error::AllSlotsFailed { .. }
            | Error::Transport(_)
            | Error::MissingArtifact(_)
            | Error::SamplingInfeasible { .. } => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
