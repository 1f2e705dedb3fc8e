//! Traceable automated thematic analysis.
//!
//! Raw transcripts go in; a themes → subthemes → codes → quotes hierarchy
//! comes out, with every agent operation recorded in a replayable action
//! ledger and the resulting codebook scored on five quality metrics.

pub mod artifact;
pub mod canonical;
pub mod coder;
pub mod config;
pub mod embed;
pub mod error;
pub mod evaluator;
pub mod hierarchy;
pub mod ingest;
pub mod ids;
pub mod ledger;
pub mod llm;
pub mod par;
pub mod rng;
pub mod synthesizer;
pub mod text;

#[doc(hidden)]
pub mod testkit;

pub use artifact::{Artifact, Chunk, ChunkUnit, Code, Quote, Subtheme, Theme, Turn};
pub use error::{Error, Result};
pub use hierarchy::Hierarchy;
pub use ids::{ArtifactId, ArtifactKind, IdAllocator};
pub use ledger::{replay, trace, ActionDraft, ActionEntry, ActionType, Journal, Ledger};
