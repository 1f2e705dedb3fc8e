//! Layout and persistence of a run directory.
//!
//! ```text
//! manifest.json          written once, before any model call
//! manifest.end.json      completion time and status
//! config.toml            effective configuration
//! chunks.jsonl           chunk manifest (offsets and sha256 per chunk)
//! split.json             train and test chunk ids
//! ledger.jsonl           action ledger, one entry per line
//! hierarchy.json         current hierarchy in canonical form
//! codebook.json          consolidated codebook before synthesis
//! snapshots/             hierarchy and codebook after each iteration
//! refine_state.json      iteration records so far (checkpoint)
//! outcome.json           final refinement outcome
//! trajectory.csv         one row per iteration
//! metrics.csv            one row per evaluation
//! llm_trace.jsonl        every model call with prompt and reply
//! ```

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use traceta_core::ids::ArtifactId;
use traceta_core::ingest::ChunkManifestEntry;
use traceta_core::synthesizer::{IterationRecord, RefineOutcome};
use traceta_core::{Chunk, Journal, Ledger};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFile {
    pub train: Vec<ArtifactId>,
    pub test: Vec<ArtifactId>,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

/// Writes through a temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_atomic(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let s = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&s)?)
}

impl RunDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root.join("snapshots"))?;
        Ok(Self { root: root.to_path_buf() })
    }

    /// An existing run directory; it must hold a ledger.
    pub fn open(root: &Path) -> CliResult<Self> {
        let d = Self { root: root.to_path_buf() };
        if !d.ledger_path().is_file() {
            return Err(CliError::Config(format!("{} is not a run directory (no ledger.jsonl)", root.display())));
        }
        fs::create_dir_all(root.join("snapshots"))?;
        Ok(d)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.path("ledger.jsonl")
    }

    pub fn snapshot_path(&self, what: &str, iteration: usize) -> PathBuf {
        self.root.join("snapshots").join(format!("{what}_iter_{iteration:02}.json"))
    }

    /// Persists the ledger and the canonical hierarchy.
    pub fn save_journal(&self, journal: &Journal) -> CliResult<()> {
        let mut buf = Vec::new();
        journal.ledger.write_jsonl(&mut buf)?;
        write_atomic(&self.ledger_path(), &buf)?;
        write_atomic(&self.path("hierarchy.json"), (journal.hierarchy.canonical_json() + "\n").as_bytes())
    }

    pub fn read_ledger(&self) -> CliResult<Ledger> {
        let f = fs::File::open(self.ledger_path()).map_err(|e| CliError::Provenance(format!("{}: {e}", self.ledger_path().display())))?;
        Ok(Ledger::read_jsonl(BufReader::new(f))?)
    }

    /// Rebuilds the journal by replaying the ledger.
    pub fn load_journal(&self) -> CliResult<Journal> {
        Ok(Journal::from_ledger(self.read_ledger()?)?)
    }

    /// Journal as of entry `aid`: later lines (written after the last
    /// checkpoint) are ignored.
    pub fn load_journal_at(&self, aid: u64) -> CliResult<Journal> {
        let text = fs::read_to_string(self.ledger_path()).map_err(|e| CliError::Provenance(format!("{}: {e}", self.ledger_path().display())))?;
        let kept: String = text.lines().take(aid as usize).map(|l| format!("{l}\n")).collect();
        let ledger = Ledger::read_jsonl(kept.as_bytes())?;
        if ledger.last_aid() != aid {
            return Err(CliError::Provenance(format!("checkpoint refers to aid {aid} but the ledger ends at {}", ledger.last_aid())));
        }
        Ok(Journal::from_ledger(ledger)?)
    }

    pub fn save_split(&self, train: &[Chunk], test: &[Chunk]) -> CliResult<()> {
        let f = SplitFile { train: train.iter().map(|c| c.chunk_id).collect(), test: test.iter().map(|c| c.chunk_id).collect() };
        write_json(&self.path("split.json"), &f)
    }

    /// Train and test chunks recorded in the ledger, in split-file order.
    pub fn load_split(&self, journal: &Journal) -> CliResult<(Vec<Chunk>, Vec<Chunk>)> {
        let f: SplitFile = read_json(&self.path("split.json"))?;
        let get = |ids: &[ArtifactId]| {
            ids.iter()
                .map(|id| journal.hierarchy.chunk(*id).cloned().ok_or_else(|| CliError::Provenance(format!("split names {id}, which the ledger never created"))))
                .collect::<CliResult<Vec<_>>>()
        };
        Ok((get(&f.train)?, get(&f.test)?))
    }

    pub fn save_chunk_manifest(&self, entries: &[ChunkManifestEntry]) -> CliResult<()> {
        let mut w = BufWriter::new(Vec::new());
        for e in entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        write_atomic(&self.path("chunks.jsonl"), &w.into_inner().map_err(|e| CliError::Config(e.to_string()))?)
    }

    pub fn save_records(&self, records: &[IterationRecord]) -> CliResult<()> {
        write_json(&self.path("refine_state.json"), &records)
    }

    /// Checkpointed records, if any.
    pub fn load_records(&self) -> CliResult<Vec<IterationRecord>> {
        let p = self.path("refine_state.json");
        if p.is_file() {
            read_json(&p)
        } else {
            Ok(Vec::new())
        }
    }

    pub fn save_outcome(&self, outcome: &RefineOutcome) -> CliResult<()> {
        write_json(&self.path("outcome.json"), outcome)
    }

    pub fn load_outcome(&self) -> CliResult<Option<RefineOutcome>> {
        let p = self.path("outcome.json");
        if p.is_file() {
            read_json(&p).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        write_json(&self.path(name), value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use traceta_core::testkit::toy_journal;

    #[test]
    fn journal_round_trips_and_truncates_to_a_checkpoint() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = RunDir::create(tmp.path()).unwrap();
        let j = toy_journal();
        dir.save_journal(&j).unwrap();
        assert_eq!(dir.load_journal().unwrap().hierarchy, j.hierarchy);
        let at = j.ledger.last_aid() - 2;
        let earlier = dir.load_journal_at(at).unwrap();
        assert_eq!(earlier.ledger.last_aid(), at);
        assert_eq!(earlier.hierarchy, traceta_core::replay(&earlier.ledger).unwrap());
        assert!(dir.load_journal_at(j.ledger.last_aid() + 5).is_err());
    }

    #[test]
    fn open_requires_a_ledger() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(RunDir::open(tmp.path()), Err(CliError::Config(_))));
    }
}
