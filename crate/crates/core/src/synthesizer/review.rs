//! Reviewer pass: deterministic diagnostics for the four failure modes plus
//! candidate concepts from fresh evidence, handed to the reviewer agent,
//! whose proposals are schema-checked before they are returned.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::edit::EditProposal;
use crate::config::ReviewConfig;
use crate::embed::{code_representation, cosine, Embedder};
use crate::error::{EmbedError, Error, GatewayError};
use crate::hierarchy::Hierarchy;
use crate::ids::{ArtifactId, ArtifactKind};
use crate::llm::prompts::Template;
use crate::llm::{CompletionRequest, Gateway, PromptSet, Role, SchemaTag};
use crate::text::collapse_ws;

/// A concept that recurred in newly coded training chunks but is not yet in
/// the codebook.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub chunk_id: ArtifactId,
    pub label: String,
    pub description: String,
    pub quotes: Vec<String>,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Diagnostic {
    Duplicate { a: ArtifactId, b: ArtifactId, similarity: f64 },
    Oversized { subtheme: ArtifactId, children: usize, median: f64 },
    Orphan { child: ArtifactId, parent: ArtifactId },
    WeakGrounding { theme: ArtifactId, quotes: usize, nearest: Option<ArtifactId> },
    Candidate { chunk: ArtifactId, parent: ArtifactId, label: String, description: String, quotes: Vec<String> },
}

impl Diagnostic {
    /// One line of the reviewer prompt's diagnostics section.
    pub fn line(&self) -> String {
        match self {
            Diagnostic::Duplicate { a, b, similarity } => format!("DUPLICATE {a} {b} cosine={similarity:.3}"),
            Diagnostic::Oversized { subtheme, children, median } => format!("OVERSIZED {subtheme} children={children} median={median:.1}"),
            Diagnostic::Orphan { child, parent } => format!("ORPHAN {child} {parent}"),
            Diagnostic::WeakGrounding { theme, quotes, nearest } => match nearest {
                Some(n) => format!("WEAK_GROUNDING {theme} nearest={n} quotes={quotes}"),
                None => format!("WEAK_GROUNDING {theme} quotes={quotes}"),
            },
            Diagnostic::Candidate { chunk, parent, label, description, quotes } => {
                let qs: Vec<String> = quotes.iter().map(|q| collapse_ws(q).replace(" || ", " ")).collect();
                format!("CANDIDATE {chunk} {parent} | {} | {} | {}", collapse_ws(label), collapse_ws(description), qs.join(" || "))
            }
        }
    }
}

/// `id | label | children: ...` lines, themes first.
pub fn hierarchy_outline(h: &Hierarchy) -> String {
    let live = |ids: &BTreeSet<ArtifactId>| ids.iter().filter(|c| h.is_live(**c)).map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
    let mut lines = Vec::new();
    for t in h.live_themes() {
        lines.push(format!("{} | {} | children: {}", t.theme_id, t.label, live(&t.child_ids)));
    }
    for s in h.live_subthemes() {
        lines.push(format!("{} | {} | children: {}", s.subtheme_id, s.label, live(&s.child_ids)));
    }
    for c in h.live_codes() {
        lines.push(format!("{} | {} | quotes: {}", c.code_id, c.label, c.quote_ids.iter().filter(|q| h.is_live(**q)).count()));
    }
    lines.join("\n")
}

fn text_of(h: &Hierarchy, id: ArtifactId) -> String {
    match h.get(id) {
        Some(crate::Artifact::Code(c)) => code_representation(&c.label, &c.description),
        Some(crate::Artifact::Subtheme(s)) => code_representation(&s.label, &s.description),
        Some(crate::Artifact::Theme(t)) => code_representation(&t.label, &t.description),
        _ => String::new(),
    }
}

fn live_of_kind(h: &Hierarchy, kind: ArtifactKind) -> Vec<ArtifactId> {
    match kind {
        ArtifactKind::Code => h.live_codes().map(|c| c.code_id).collect(),
        ArtifactKind::Subtheme => h.live_subthemes().map(|s| s.subtheme_id).collect(),
        ArtifactKind::Theme => h.live_themes().map(|t| t.theme_id).collect(),
        _ => Vec::new(),
    }
}

/// Option with the highest cosine to `text` (first on ties).
fn nearest(embedder: &Embedder, text: &str, h: &Hierarchy, options: &[ArtifactId]) -> Result<Option<ArtifactId>, EmbedError> {
    if options.is_empty() || text.trim().is_empty() {
        return Ok(None);
    }
    let v = embedder.embed(text)?;
    let mut best: Option<(ArtifactId, f64)> = None;
    for o in options {
        let s = cosine(&v.vector, &embedder.embed(&text_of(h, *o))?.vector)?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((*o, s));
        }
    }
    Ok(best.map(|(id, _)| id))
}

/// Automated checks: near-duplicate codes, subthemes and themes (cosine
/// above the threshold, each artifact in at most one pair, most similar
/// first), subthemes far larger than the median, artifacts without a live
/// parent, themes grounded in fewer than `min_quotes` quotes, and candidate
/// concepts placed under their nearest subtheme.
pub fn diagnose(h: &Hierarchy, embedder: &Embedder, cfg: &ReviewConfig, candidates: &[Candidate]) -> Result<Vec<Diagnostic>, EmbedError> {
    let mut out = Vec::new();
    for kind in [ArtifactKind::Code, ArtifactKind::Subtheme, ArtifactKind::Theme] {
        let ids = live_of_kind(h, kind);
        let vecs = ids.iter().map(|id| embedder.embed(&text_of(h, *id))).collect::<Result<Vec<_>, _>>()?;
        let mut pairs = Vec::new();
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                let s = cosine(&vecs[i].vector, &vecs[j].vector)?;
                if s > cfg.duplicate_threshold {
                    pairs.push((s, ids[i], ids[j]));
                }
            }
        }
        pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then_with(|| (x.1, x.2).cmp(&(y.1, y.2))));
        let mut used = BTreeSet::new();
        for (s, a, b) in pairs {
            if used.contains(&a) || used.contains(&b) {
                continue;
            }
            used.insert(a);
            used.insert(b);
            out.push(Diagnostic::Duplicate { a, b, similarity: s });
        }
    }

    let sizes: Vec<(ArtifactId, usize)> = h.live_subthemes().map(|s| (s.subtheme_id, s.child_ids.iter().filter(|c| h.is_live(**c)).count())).collect();
    if sizes.len() >= 2 {
        let mut sorted: Vec<usize> = sizes.iter().map(|(_, n)| *n).collect();
        sorted.sort_unstable();
        let m = sorted.len();
        let median = if m % 2 == 1 { sorted[m / 2] as f64 } else { (sorted[m / 2 - 1] + sorted[m / 2]) as f64 / 2.0 };
        for (id, n) in &sizes {
            if *n >= cfg.min_split_size && *n as f64 > cfg.granularity_factor * median {
                out.push(Diagnostic::Oversized { subtheme: *id, children: *n, median });
            }
        }
    }

    for (child_kind, parent_kind) in [(ArtifactKind::Code, ArtifactKind::Subtheme), (ArtifactKind::Subtheme, ArtifactKind::Theme)] {
        let parents = live_of_kind(h, parent_kind);
        for id in live_of_kind(h, child_kind) {
            if h.live_parents_of(id).is_empty() {
                if let Some(p) = nearest(embedder, &text_of(h, id), h, &parents)? {
                    out.push(Diagnostic::Orphan { child: id, parent: p });
                }
            }
        }
    }

    let themes = live_of_kind(h, ArtifactKind::Theme);
    for t in &themes {
        let quotes = h.quotes_under(*t).len();
        if quotes < cfg.min_quotes {
            let others: Vec<ArtifactId> = themes.iter().copied().filter(|o| o != t).collect();
            let nearest = nearest(embedder, &text_of(h, *t), h, &others)?;
            out.push(Diagnostic::WeakGrounding { theme: *t, quotes, nearest });
        }
    }

    let subthemes = live_of_kind(h, ArtifactKind::Subtheme);
    for c in candidates {
        if let Some(parent) = nearest(embedder, &code_representation(&c.label, &c.description), h, &subthemes)? {
            out.push(Diagnostic::Candidate { chunk: c.chunk_id, parent, label: c.label.clone(), description: c.description.clone(), quotes: c.quotes.clone() });
        }
    }
    Ok(out)
}

pub struct Reviewer<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptSet,
    pub embedder: &'a Embedder,
    pub config: &'a ReviewConfig,
    pub temperature: f64,
}

impl Reviewer<'_> {
    /// Runs the diagnostics and asks the reviewer for edits. Proposals that
    /// fail schema validation are dropped with a warning; an unusable reply
    /// counts as no proposals.
    pub fn review(&self, h: &Hierarchy, candidates: &[Candidate]) -> Result<(Vec<Diagnostic>, Vec<EditProposal>), Error> {
        let diagnostics = diagnose(h, self.embedder, self.config, candidates)?;
        let lines = if diagnostics.is_empty() { "(none)".to_string() } else { diagnostics.iter().map(Diagnostic::line).collect::<Vec<_>>().join("\n") };
        let prompt = self.prompts.render(Template::Reviewer, &[("hierarchy_outline", &hierarchy_outline(h)), ("diagnostics", &lines)])?;
        let req = CompletionRequest::new(Role::Reviewer, prompt).with_temperature(self.temperature);
        let raw = match self.gateway.complete_structured(&req, SchemaTag::EditList) {
            Ok(s) => s.into_edits()?,
            Err(GatewayError::MalformedResponse { reason, .. }) => {
                tracing::warn!("reviewer reply unusable, no edits this round: {reason}");
                Vec::new()
            }
            Err(e) => return Err(e.into()),
        };
        let mut proposals = Vec::new();
        for r in &raw {
            match EditProposal::from_raw(r) {
                Ok(p) => proposals.push(p),
                Err(e) => tracing::warn!(action = %r.action, "reviewer proposal rejected by schema check: {e}"),
            }
        }
        Ok((diagnostics, proposals))
    }
}
