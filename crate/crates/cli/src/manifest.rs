//! Run manifest: everything needed to reproduce a run, written before the
//! first model call and never rewritten. Completion time goes to a separate
//! `manifest.end.json`.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use traceta_core::config::Config;
use traceta_core::text::sha256_hex;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: Config,
    /// Template file name to sha256 of its text.
    pub prompt_hashes: BTreeMap<String, String>,
    /// Document id to sha256 of its raw text.
    pub dataset: BTreeMap<String, String>,
    pub backend_ids: BTreeMap<String, String>,
    pub started_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEnd {
    pub run_id: String,
    pub ended_at: DateTime<Utc>,
    pub status: String,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: &Config,
        prompt_hashes: BTreeMap<String, String>,
        dataset: BTreeMap<String, String>,
        backend_ids: BTreeMap<String, String>,
    ) -> Self {
        Self {
            run_id: uuid::Uuid::new_v4().to_string(),
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
            prompt_hashes,
            dataset,
            backend_ids,
            started_at: Utc::now(),
        }
    }

    /// Digest of the inputs that determine analysis content: corpus files
    /// and prompt templates. Seeds and timestamps do not enter it.
    pub fn fingerprint(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.dataset.iter().map(|(k, v)| (format!("doc:{k}"), v)).chain(self.prompt_hashes.iter().map(|(k, v)| (format!("prompt:{k}"), v))) {
            s.push_str(&format!("{k}={v}\n"));
        }
        sha256_hex(s)
    }

    /// Writes the manifest to `path`; refuses to replace an existing one.
    pub fn write_new(&self, path: &Path) -> CliResult<()> {
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        f.write_all((serde_json::to_string_pretty(self)? + "\n").as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&s)?)
    }
}

impl RunEnd {
    pub fn write(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
