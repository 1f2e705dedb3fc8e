use thiserror::Error;

use crate::ids::ArtifactId;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("malformed artifact id `{0}`")]
pub struct ParseIdError(pub String);

/// Failures while recording, tracing or replaying the action ledger.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("unknown artifact {0}")]
    UnknownArtifact(ArtifactId),
    #[error("ledger is sealed; no further actions may be appended")]
    LedgerSealed,
    #[error("corrupt ledger at aid {aid}: {reason}")]
    CorruptLedger { aid: u64, reason: String },
    #[error("ledger i/o: {0}")]
    Io(String),
}

impl LedgerError {
    pub(crate) fn corrupt(aid: u64, reason: impl Into<String>) -> Self {
        LedgerError::CorruptLedger { aid, reason: reason.into() }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum IngestError {
    #[error("document `{0}` has no non-whitespace content")]
    EmptyDocument(String),
    #[error("invalid chunking configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least 2 chunks to split, got {0}")]
    TooFewChunks(usize),
    #[error("corpus i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend unavailable after {attempts} attempt(s): {reason}")]
    BackendUnavailable { attempts: u32, reason: String },
    #[error("malformed response for schema `{schema}`: {reason}")]
    MalformedResponse { schema: &'static str, reason: String },
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("invalid edit: {0}")]
pub struct InvalidEdit(pub String);

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricError {
    #[error("codebook is empty")]
    EmptyCodebook,
    #[error("code distribution is empty")]
    EmptyDistribution,
    #[error("metric weights must be non-negative and sum to 1 (sum = {0})")]
    WeightSumInvalid(f64),
    #[error("theme list is empty")]
    EmptyThemeList,
    #[error("paired samples need equal length >= 2 (got {0} and {1})")]
    BadSample(usize, usize),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Top-level error for pipeline operations that cross module boundaries.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Edit(#[from] InvalidEdit),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
