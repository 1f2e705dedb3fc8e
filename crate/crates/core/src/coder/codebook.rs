//! The consolidated codebook and its JSON exchange format.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::CodeGraph;
use crate::artifact::Code;
use crate::error::Error;
use crate::hierarchy::Hierarchy;
use crate::text::normalize_label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub codes: Vec<Code>,
    pub graph: CodeGraph,
    /// Inclusive range of ledger aids that produced this codebook.
    pub aid_range: (u64, u64),
}

impl Codebook {
    /// Live codes of `h`, with `graph` restricted to them.
    pub fn from_hierarchy(h: &Hierarchy, graph: CodeGraph, aid_range: (u64, u64)) -> Self {
        let codes: Vec<Code> = h.live_codes().cloned().collect();
        let live: BTreeSet<_> = codes.iter().map(|c| c.code_id).collect();
        let graph = CodeGraph {
            nodes: graph.nodes.intersection(&live).copied().collect(),
            class_of: graph.class_of.into_iter().filter(|(m, _)| live.contains(m)).collect(),
            edges: graph.edges.into_iter().filter(|(c, p)| live.contains(c) && live.contains(p)).collect(),
            in_degree: graph.in_degree.into_iter().filter(|(c, _)| live.contains(c)).collect(),
            repairs: graph.repairs,
        };
        Self { codes, graph, aid_range }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn normalized_labels(&self) -> BTreeSet<String> {
        self.codes.iter().map(|c| normalize_label(&c.label)).collect()
    }

    /// Codebook invariants: distinct normalised labels, at least one quote each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.normalized_labels().len() != self.codes.len() {
            out.push("two codes share a normalised label".to_string());
        }
        for c in &self.codes {
            if c.quote_ids.is_empty() {
                out.push(format!("{} has no quote", c.code_id));
            }
        }
        out
    }

    pub fn to_file(&self) -> CodebookFile {
        CodebookFile {
            codes: self
                .codes
                .iter()
                .map(|c| CodebookEntry {
                    code_id: c.code_id.to_string(),
                    label: c.label.clone(),
                    description: c.description.clone(),
                    frequency: c.frequency,
                    quote_ids: c.quote_ids.iter().map(|q| q.to_string()).collect(),
                    source_chunk_ids: c.source_chunk_ids.iter().map(|q| q.to_string()).collect(),
                    parent_ids: self.graph.direct_parents(c.code_id).iter().map(|p| p.to_string()).collect(),
                })
                .collect(),
        }
    }
}

/// Exchange format. Only `label` is required, so codebooks produced by other
/// methods can be imported for comparison.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodebookFile {
    pub codes: Vec<CodebookEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodebookEntry {
    #[serde(default)]
    pub code_id: String,
    pub label: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub frequency: usize,
    #[serde(default)]
    pub quote_ids: Vec<String>,
    #[serde(default)]
    pub source_chunk_ids: Vec<String>,
    #[serde(default)]
    pub parent_ids: Vec<String>,
}

impl CodebookEntry {
    /// Training-side occurrence count used for the consistency metric.
    pub fn train_count(&self) -> usize {
        self.frequency.max(self.source_chunk_ids.len())
    }
}

impl CodebookFile {
    /// Parses a codebook; entries without an id get `ext_000001`, ... in order.
    pub fn from_json(s: &str) -> Result<Self, Error> {
        let mut f: CodebookFile = serde_json::from_str(s)?;
        for (i, e) in f.codes.iter_mut().enumerate() {
            if e.code_id.trim().is_empty() {
                e.code_id = format!("ext_{:06}", i + 1);
            }
        }
        let ids: BTreeSet<&str> = f.codes.iter().map(|e| e.code_id.as_str()).collect();
        if ids.len() != f.codes.len() {
            return Err(Error::Config("codebook has duplicate code ids".into()));
        }
        Ok(f)
    }

    pub fn read(path: &Path) -> Result<Self, Error> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), Error> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
