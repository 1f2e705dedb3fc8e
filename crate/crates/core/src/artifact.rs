//! Artifact records stored in the hierarchy and carried in ledger payloads.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::ids::{ArtifactId, ArtifactKind};

/// A speaker-attributed unit of a transcript. `start`/`end` are byte offsets
/// of `text` inside the raw document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_id: ArtifactId,
    pub doc_id: String,
    pub speaker: String,
    pub text: String,
    pub index: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkUnit {
    Chars,
    Words,
}

/// A window over one document. `start`/`end` are byte offsets into the raw
/// document; `span` is the inclusive range of turn indices it touches and
/// `overlap_with_prev` is measured in `unit`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: ArtifactId,
    pub doc_id: String,
    pub unit: ChunkUnit,
    pub span: (usize, usize),
    pub start: usize,
    pub end: usize,
    pub overlap_with_prev: usize,
    pub text: String,
}

/// Verbatim evidence. `char_span` indexes characters of the source turn text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quote {
    pub quote_id: ArtifactId,
    pub chunk_id: ArtifactId,
    pub turn_id: ArtifactId,
    pub char_span: (usize, usize),
    pub text: String,
    #[serde(default)]
    pub deleted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Code {
    pub code_id: ArtifactId,
    pub label: String,
    pub description: String,
    pub frequency: usize,
    pub source_chunk_ids: BTreeSet<ArtifactId>,
    pub quote_ids: BTreeSet<ArtifactId>,
    #[serde(default)]
    pub deleted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtheme {
    pub subtheme_id: ArtifactId,
    pub label: String,
    pub description: String,
    pub child_ids: BTreeSet<ArtifactId>,
    #[serde(default)]
    pub deleted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Theme {
    pub theme_id: ArtifactId,
    pub label: String,
    pub description: String,
    pub child_ids: BTreeSet<ArtifactId>,
    #[serde(default)]
    pub deleted: bool,
}

/// Any artifact, tagged by kind. This is the unit of ledger payloads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Artifact {
    Turn(Turn),
    Chunk(Chunk),
    Quote(Quote),
    Code(Code),
    Subtheme(Subtheme),
    Theme(Theme),
}

impl Artifact {
    pub fn id(&self) -> ArtifactId {
        match self {
            Artifact::Turn(a) => a.turn_id,
            Artifact::Chunk(a) => a.chunk_id,
            Artifact::Quote(a) => a.quote_id,
            Artifact::Code(a) => a.code_id,
            Artifact::Subtheme(a) => a.subtheme_id,
            Artifact::Theme(a) => a.theme_id,
        }
    }

    pub fn kind(&self) -> ArtifactKind {
        self.id().kind()
    }

    pub fn is_deleted(&self) -> bool {
        match self {
            Artifact::Turn(_) | Artifact::Chunk(_) => false,
            Artifact::Quote(a) => a.deleted,
            Artifact::Code(a) => a.deleted,
            Artifact::Subtheme(a) => a.deleted,
            Artifact::Theme(a) => a.deleted,
        }
    }

    /// Downward links: theme -> subthemes, subtheme -> codes, code -> quotes.
    pub fn children(&self) -> Vec<ArtifactId> {
        match self {
            Artifact::Code(a) => a.quote_ids.iter().copied().collect(),
            Artifact::Subtheme(a) => a.child_ids.iter().copied().collect(),
            Artifact::Theme(a) => a.child_ids.iter().copied().collect(),
            _ => Vec::new(),
        }
    }

    /// Ids this artifact refers to without owning them.
    pub fn references(&self) -> Vec<ArtifactId> {
        match self {
            Artifact::Quote(q) => vec![q.chunk_id, q.turn_id],
            Artifact::Code(c) => c.source_chunk_ids.iter().copied().collect(),
            _ => Vec::new(),
        }
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            Artifact::Code(a) => Some(&a.label),
            Artifact::Subtheme(a) => Some(&a.label),
            Artifact::Theme(a) => Some(&a.label),
            _ => None,
        }
    }
}

/// The kind a given kind groups as children, if any.
pub fn child_kind(kind: ArtifactKind) -> Option<ArtifactKind> {
    match kind {
        ArtifactKind::Theme => Some(ArtifactKind::Subtheme),
        ArtifactKind::Subtheme => Some(ArtifactKind::Code),
        ArtifactKind::Code => Some(ArtifactKind::Quote),
        _ => None,
    }
}

pub fn parent_kind(kind: ArtifactKind) -> Option<ArtifactKind> {
    match kind {
        ArtifactKind::Subtheme => Some(ArtifactKind::Theme),
        ArtifactKind::Code => Some(ArtifactKind::Subtheme),
        ArtifactKind::Quote => Some(ArtifactKind::Code),
        _ => None,
    }
}
