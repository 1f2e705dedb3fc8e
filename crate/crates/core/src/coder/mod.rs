//! Grounded open coding: per-chunk code generation with verbatim quotes,
//! label normalisation, pairwise relation classification, the code hierarchy
//! graph and the three-step cleanup that yields the codebook.

mod codebook;
mod consolidate;
mod graph;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use codebook::{Codebook, CodebookEntry, CodebookFile};
pub use consolidate::consolidate;
pub use graph::{build_graph, CodeGraph, CodeRelation, UnionFind};

use crate::artifact::{Artifact, Chunk, Code, Quote, Turn};
use crate::config::CodingConfig;
use crate::embed::{cosine, Embedder};
use crate::error::{EmbedError, GatewayError, LedgerError};
use crate::ids::{ArtifactId, ArtifactKind};
use crate::ledger::{ActionDraft, ActionType, Journal};
use crate::llm::prompts::Template;
use crate::llm::structured::{RawCode, RelationKind};
use crate::llm::{CompletionRequest, Gateway, PromptSet, Role, SchemaTag};
use crate::text::{byte_to_char, char_len, collapse_ws, find_ws_insensitive, normalize_label, segment_long, word_count};

pub const LABEL_WORDS: (usize, usize) = (5, 12);
pub const DESCRIPTION_WORDS: (usize, usize) = (40, 80);

/// A quote located inside one turn of the source document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundedQuote {
    pub turn_id: ArtifactId,
    pub char_span: (usize, usize),
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeDraft {
    pub chunk_id: ArtifactId,
    pub label: String,
    pub description: String,
    pub quotes: Vec<GroundedQuote>,
}

pub fn label_ok(label: &str) -> bool {
    (LABEL_WORDS.0..=LABEL_WORDS.1).contains(&word_count(label))
}

pub fn description_ok(d: &str) -> bool {
    (DESCRIPTION_WORDS.0..=DESCRIPTION_WORDS.1).contains(&word_count(d))
}

/// Locates `quote` in `chunk` (whitespace-insensitive) and maps it onto the
/// turn it overlaps most. The result is clipped to that turn, split into
/// pieces of at most `max_chars` at sentence boundaries, and pieces shorter
/// than `min_chars` are discarded. Every returned text equals the turn text
/// sliced by its `char_span`.
pub fn ground_quote(chunk: &Chunk, turns: &[Turn], quote: &str, min_chars: usize, max_chars: usize) -> Vec<GroundedQuote> {
    let Some((bs, be)) = find_ws_insensitive(&chunk.text, quote) else { return Vec::new() };
    let (a, b) = (chunk.start + bs, chunk.start + be);
    let best = turns
        .iter()
        .filter(|t| t.doc_id == chunk.doc_id)
        .map(|t| (t.end.min(b).saturating_sub(t.start.max(a)), t))
        .filter(|(overlap, _)| *overlap > 0)
        .max_by(|x, y| x.0.cmp(&y.0).then_with(|| y.1.index.cmp(&x.1.index)));
    let Some((_, turn)) = best else { return Vec::new() };
    let rs = a.max(turn.start) - turn.start;
    let re = b.min(turn.end) - turn.start;
    let slice = &turn.text[rs..re];
    let mut out = Vec::new();
    for (ps, pe) in segment_long(slice, max_chars) {
        let piece = &slice[ps..pe];
        let lead = piece.len() - piece.trim_start().len();
        let trimmed = piece.trim();
        if trimmed.is_empty() || char_len(trimmed) < min_chars {
            continue;
        }
        let s = rs + ps + lead;
        let e = s + trimmed.len();
        out.push(GroundedQuote {
            turn_id: turn.turn_id,
            char_span: (byte_to_char(&turn.text, s), byte_to_char(&turn.text, e)),
            text: turn.text[s..e].to_string(),
        });
    }
    out
}

/// Prompting context for the coding agents.
pub struct Coder<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptSet,
    pub config: &'a CodingConfig,
    pub research_question: &'a str,
    pub temperature: f64,
}

impl Coder<'_> {
    fn request(&self, role: Role, prompt: String, seed: Option<u64>) -> CompletionRequest {
        CompletionRequest::new(role, prompt).with_temperature(self.temperature).with_seed(seed)
    }

    /// Codes one chunk. Drafts violating the word limits get one repair
    /// re-prompt and are dropped if still invalid; drafts left with no
    /// grounded quote are dropped with a warning.
    pub fn code_chunk(&self, chunk: &Chunk, turns: &[Turn], seed: Option<u64>) -> Result<Vec<CodeDraft>, GatewayError> {
        if chunk.text.trim().is_empty() {
            return Err(GatewayError::InvalidRequest(format!("{} has no text", chunk.chunk_id)));
        }
        let n = self.config.codes_per_chunk.to_string();
        let min_q = self.config.min_quote_chars.to_string();
        let id = chunk.chunk_id.to_string();
        let prompt = self.prompts.render(
            Template::Coder,
            &[
                ("research_question", self.research_question),
                ("n_codes", &n),
                ("min_quote_chars", &min_q),
                ("chunk_id", &id),
                ("chunk_text", &chunk.text),
            ],
        )?;
        let raw = self.gateway.complete_structured(&self.request(Role::Coder, prompt, seed), SchemaTag::CodeList)?.into_codes()?;
        let (mut valid, invalid): (Vec<RawCode>, Vec<RawCode>) =
            raw.into_iter().partition(|c| label_ok(&c.label) && description_ok(&c.description));
        if !invalid.is_empty() {
            let drafts = serde_json::to_string_pretty(&invalid).expect("drafts serialise");
            let prompt = self.prompts.render(Template::CoderRepair, &[("drafts_json", &drafts)])?;
            match self.gateway.complete_structured(&self.request(Role::Coder, prompt, seed), SchemaTag::CodeList) {
                Ok(s) => {
                    for c in s.into_codes()? {
                        if label_ok(&c.label) && description_ok(&c.description) {
                            valid.push(c);
                        } else {
                            tracing::warn!(chunk = %id, label = %c.label, "draft still violates word limits after repair; dropped");
                        }
                    }
                }
                Err(GatewayError::MalformedResponse { reason, .. }) => {
                    tracing::warn!(chunk = %id, "repair response unusable, {} drafts dropped: {reason}", invalid.len());
                }
                Err(e) => return Err(e),
            }
        }
        let mut drafts = Vec::with_capacity(valid.len());
        for c in valid {
            let quotes: Vec<GroundedQuote> = c
                .quotes
                .iter()
                .flat_map(|q| ground_quote(chunk, turns, q, self.config.min_quote_chars, self.config.max_quote_chars))
                .collect();
            if quotes.is_empty() {
                tracing::warn!(chunk = %id, label = %c.label, "grounding failure: no quote found in chunk; draft dropped");
                continue;
            }
            drafts.push(CodeDraft { chunk_id: chunk.chunk_id, label: collapse_ws(&c.label), description: collapse_ws(&c.description), quotes });
        }
        Ok(drafts)
    }

    /// Classifies a candidate pair. An unusable response counts as orthogonal.
    pub fn classify_relation(&self, a: &Code, b: &Code) -> Result<CodeRelation, GatewayError> {
        let prompt = self.prompts.render(
            Template::Relation,
            &[("label_a", &a.label), ("description_a", &a.description), ("label_b", &b.label), ("description_b", &b.description)],
        )?;
        let kind = match self
            .gateway
            .complete_structured(&self.request(Role::RelationClassifier, prompt, None), SchemaTag::RelationLabel)
        {
            Ok(s) => s.into_relation()?,
            Err(GatewayError::MalformedResponse { reason, .. }) => {
                tracing::warn!(a = %a.code_id, b = %b.code_id, "relation unparseable, treated as orthogonal: {reason}");
                RelationKind::Orthogonal
            }
            Err(e) => return Err(e),
        };
        Ok(CodeRelation::new(a.code_id, b.code_id, kind))
    }

    /// Classifies candidate pairs between current class representatives only,
    /// merging classes as equivalences are found, so each pair of classes is
    /// asked about at most once.
    pub fn classify_candidates(
        &self,
        codes: &BTreeMap<ArtifactId, Code>,
        pairs: &[(ArtifactId, ArtifactId)],
    ) -> Result<Vec<CodeRelation>, GatewayError> {
        let mut uf = UnionFind::new(codes.keys().copied());
        let mut asked = BTreeSet::new();
        let mut relations = Vec::new();
        for &(a, b) in pairs {
            let (ra, rb) = (uf.find(a), uf.find(b));
            if ra == rb || !asked.insert((ra.min(rb), ra.max(rb))) {
                continue;
            }
            let rel = self.classify_relation(&codes[&ra], &codes[&rb])?;
            if rel.kind == RelationKind::Equivalent {
                uf.union(ra, rb);
            }
            relations.push(rel);
        }
        Ok(relations)
    }
}

/// Drafts grouped by normalised label, in first-occurrence order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedCode {
    pub key: String,
    pub label: String,
    pub description: String,
    pub source_chunk_ids: BTreeSet<ArtifactId>,
    pub quotes: Vec<(ArtifactId, GroundedQuote)>,
}

impl NormalizedCode {
    pub fn frequency(&self) -> usize {
        self.source_chunk_ids.len()
    }
}

/// Merges drafts with equal normalised labels. The first occurrence supplies
/// label and description; frequency counts distinct source chunks.
pub fn normalize_codes(drafts: &[CodeDraft]) -> Vec<NormalizedCode> {
    let mut order: Vec<NormalizedCode> = Vec::new();
    let mut at: BTreeMap<String, usize> = BTreeMap::new();
    for d in drafts {
        let key = normalize_label(&d.label);
        let i = *at.entry(key.clone()).or_insert_with(|| {
            order.push(NormalizedCode {
                key,
                label: d.label.clone(),
                description: d.description.clone(),
                source_chunk_ids: BTreeSet::new(),
                quotes: Vec::new(),
            });
            order.len() - 1
        });
        order[i].source_chunk_ids.insert(d.chunk_id);
        for q in &d.quotes {
            if !order[i].quotes.iter().any(|(_, x)| x.turn_id == q.turn_id && x.char_span == q.char_span) {
                order[i].quotes.push((d.chunk_id, q.clone()));
            }
        }
    }
    order
}

/// Normalised label to live code id.
pub fn label_index(journal: &Journal) -> BTreeMap<String, ArtifactId> {
    journal.hierarchy.live_codes().map(|c| (normalize_label(&c.label), c.code_id)).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChunkCommit {
    pub aid: Option<u64>,
    pub new_codes: Vec<ArtifactId>,
    pub reinforced: Vec<ArtifactId>,
    pub quotes: Vec<ArtifactId>,
}

/// Records the drafts of one chunk as a single generate entry: new quotes,
/// new codes, and existing codes (matched by normalised label) whose source
/// chunks and quotes grow. `index` is updated with any new labels.
pub fn commit_chunk_drafts(
    journal: &mut Journal,
    index: &mut BTreeMap<String, ArtifactId>,
    chunk_id: ArtifactId,
    drafts: &[CodeDraft],
    role: &str,
) -> Result<ChunkCommit, LedgerError> {
    let mut out = ChunkCommit::default();
    if drafts.is_empty() {
        return Ok(out);
    }
    let mut payload = Vec::new();
    let mut inputs = vec![chunk_id];
    for nc in normalize_codes(drafts) {
        let existing = index.get(&nc.key).and_then(|id| journal.hierarchy.code(*id)).filter(|c| !c.deleted).cloned();
        let held: BTreeSet<(ArtifactId, (usize, usize))> = existing
            .iter()
            .flat_map(|c| c.quote_ids.iter())
            .filter_map(|q| journal.hierarchy.quote(*q))
            .map(|q| (q.turn_id, q.char_span))
            .collect();
        let mut quote_ids = BTreeSet::new();
        for (chunk, q) in &nc.quotes {
            if held.contains(&(q.turn_id, q.char_span)) {
                continue;
            }
            let qid = journal.next_id(ArtifactKind::Quote);
            quote_ids.insert(qid);
            out.quotes.push(qid);
            payload.push(Artifact::Quote(Quote {
                quote_id: qid,
                chunk_id: *chunk,
                turn_id: q.turn_id,
                char_span: q.char_span,
                text: q.text.clone(),
                deleted: false,
            }));
        }
        let code = match existing {
            Some(mut c) => {
                c.source_chunk_ids.extend(nc.source_chunk_ids.iter().copied());
                c.frequency = c.source_chunk_ids.len();
                c.quote_ids.extend(quote_ids);
                inputs.push(c.code_id);
                out.reinforced.push(c.code_id);
                c
            }
            None => {
                let id = journal.next_id(ArtifactKind::Code);
                index.insert(nc.key.clone(), id);
                out.new_codes.push(id);
                Code {
                    code_id: id,
                    label: nc.label.clone(),
                    description: nc.description.clone(),
                    frequency: nc.source_chunk_ids.len(),
                    source_chunk_ids: nc.source_chunk_ids.clone(),
                    quote_ids,
                    deleted: false,
                }
            }
        };
        payload.push(Artifact::Code(code));
    }
    let justification = format!(
        "open coding of {chunk_id}: {} new code(s), {} reinforced, {} quote(s)",
        out.new_codes.len(),
        out.reinforced.len(),
        out.quotes.len()
    );
    out.aid = Some(journal.commit(ActionDraft::new(role, ActionType::Generate, inputs, payload, justification))?);
    Ok(out)
}

/// Unordered pairs `(a, b)`, `a < b`, whose vectors have cosine above `threshold`.
pub fn candidate_pairs(vectors: &[(ArtifactId, Vec<f64>)], threshold: f64) -> Result<Vec<(ArtifactId, ArtifactId)>, EmbedError> {
    let mut v: Vec<&(ArtifactId, Vec<f64>)> = vectors.iter().collect();
    v.sort_by_key(|(id, _)| *id);
    let mut pairs = Vec::new();
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            if cosine(&v[i].1, &v[j].1)? > threshold {
                pairs.push((v[i].0, v[j].0));
            }
        }
    }
    Ok(pairs)
}

/// Embeds each code's label and description.
pub fn code_vectors<'a>(embedder: &Embedder, codes: impl IntoIterator<Item = &'a Code>) -> Result<Vec<(ArtifactId, Vec<f64>)>, EmbedError> {
    codes.into_iter().map(|c| Ok((c.code_id, embedder.embed_code(c)?.vector.clone()))).collect()
}

#[cfg(test)]
mod tests;
