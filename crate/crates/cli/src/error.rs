//! Command failures and their process exit codes.

use std::fmt;

use traceta_core::error::{EmbedError, GatewayError, LedgerError};
use traceta_core::Error;

#[derive(Debug)]
pub enum CliError {
    /// Exit 1: invalid configuration, flags or inputs.
    Config(String),
    /// Exit 2: the model or embedding backend could not be used.
    Backend(String),
    /// Exit 3: the corpus could not be read or parsed.
    Corpus(String),
    /// Exit 4: the ledger is corrupt or does not reproduce the hierarchy.
    Provenance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Backend(_) => 2,
            CliError::Corpus(_) => 3,
            CliError::Provenance(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Backend(m) => write!(f, "backend failure: {m}"),
            CliError::Corpus(m) => write!(f, "corpus error: {m}"),
            CliError::Provenance(m) => write!(f, "provenance error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::Ingest(_) => CliError::Corpus(m),
            Error::Ledger(LedgerError::CorruptLedger { .. }) | Error::Ledger(LedgerError::UnknownArtifact(_)) => CliError::Provenance(m),
            Error::Gateway(GatewayError::BackendUnavailable { .. } | GatewayError::MalformedResponse { .. }) => CliError::Backend(m),
            Error::Embed(EmbedError::BackendUnavailable(_) | EmbedError::DimensionMismatch(..)) => CliError::Backend(m),
            _ => CliError::Config(m),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {e}"))
    }
}

impl From<LedgerError> for CliError {
    fn from(e: LedgerError) -> Self {
        Error::from(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(format!("json: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Config(format!("csv: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;
    use traceta_core::error::IngestError;
    use traceta_core::ArtifactId;

    #[test]
    fn core_errors_map_to_exit_codes() {
        assert_eq!(CliError::from(Error::Ingest(IngestError::TooFewChunks(1))).exit_code(), 3);
        assert_eq!(CliError::from(Error::Config("x".into())).exit_code(), 1);
        let missing: ArtifactId = "thm_000009".parse().unwrap();
        assert_eq!(CliError::from(LedgerError::UnknownArtifact(missing)).exit_code(), 4);
        assert_eq!(CliError::from(LedgerError::CorruptLedger { aid: 3, reason: "gap".into() }).exit_code(), 4);
        let down = GatewayError::BackendUnavailable { attempts: 5, reason: "timeout".into() };
        assert_eq!(CliError::from(Error::Gateway(down)).exit_code(), 2);
    }
}
