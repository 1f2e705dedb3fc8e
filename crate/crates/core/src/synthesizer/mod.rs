//! Two-pass synthesis (codes into subthemes, subthemes into themes), the
//! reviewer pass, constrained edits and the iterative refinement loop.

mod edit;
mod refine;
mod review;

use std::collections::{BTreeMap, BTreeSet};

pub use edit::{apply_edit, text_ok, tombstone, EditContext, EditProposal, SplitPart};
pub use refine::{best_iteration, live_entries, refine_loop, should_stop, IterationRecord, RefineContext, RefineOutcome, StopReason, REFINE_STREAM};
pub use review::{diagnose, hierarchy_outline, Candidate, Diagnostic, Reviewer};

use crate::artifact::{Artifact, Subtheme, Theme};
use crate::error::{Error, GatewayError};
use crate::ids::{ArtifactId, ArtifactKind};
use crate::ledger::{ActionDraft, ActionType, Journal};
use crate::llm::prompts::Template;
use crate::llm::structured::RawGroup;
use crate::llm::{CompletionRequest, Gateway, PromptSet, Role, SchemaTag};
use crate::text::{collapse_ws, normalize_label, word_count};

pub const THEME_LABEL_WORDS: (usize, usize) = (5, 10);
pub const THEME_DESCRIPTION_WORDS: (usize, usize) = (60, 80);

/// Collects codes the model left out of every subtheme.
pub const FALLBACK_SUBTHEME: &str = "Unassigned (review)";
const FALLBACK_SUBTHEME_DESCRIPTION: &str = "Codes that the synthesis pass did not place in any subtheme, kept together so that a reviewer can re-home them.";

/// Collects subthemes the model left out of every theme.
pub const FALLBACK_THEME: &str = "Subthemes awaiting placement under a theme";
const FALLBACK_THEME_DESCRIPTION: &str = "This grouping holds subthemes that the synthesis pass did not assign to any overarching theme. It exists so that no part of the analysis is silently lost between passes. Its members should be examined during review and then merged into an existing theme, moved under a better fitting theme, or developed into a theme of their own when the evidence beneath them forms a coherent pattern of shared meaning.";

/// Jaccard similarity of two label sets after normalisation; 1 when both are empty.
pub fn codebook_jaccard<'a>(a: impl IntoIterator<Item = &'a str>, b: impl IntoIterator<Item = &'a str>) -> f64 {
    let a: BTreeSet<String> = a.into_iter().map(normalize_label).collect();
    let b: BTreeSet<String> = b.into_iter().map(normalize_label).collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

fn theme_text_ok(label: &str, description: &str) -> bool {
    let within = |s: &str, (lo, hi): (usize, usize)| (lo..=hi).contains(&word_count(s));
    within(label, THEME_LABEL_WORDS) && within(description, THEME_DESCRIPTION_WORDS)
}

/// A validated grouping ready to be committed.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Group {
    label: String,
    description: String,
    members: BTreeSet<ArtifactId>,
}

/// Keeps members that are in `allowed`, drops empty groups and folds groups
/// with equal normalised labels into the first.
fn clean_groups(raw: Vec<RawGroup>, allowed: &BTreeSet<ArtifactId>, what: &str) -> Vec<Group> {
    let mut out: Vec<Group> = Vec::new();
    let mut by_label: BTreeMap<String, usize> = BTreeMap::new();
    for g in raw {
        let label = collapse_ws(&g.label);
        if label.is_empty() {
            tracing::warn!("{what} without a label dropped");
            continue;
        }
        let mut members = BTreeSet::new();
        for m in &g.members {
            match m.trim().parse::<ArtifactId>() {
                Ok(id) if allowed.contains(&id) => {
                    members.insert(id);
                }
                _ => tracing::warn!(member = %m, "{what} `{label}` names an unknown member; ignored"),
            }
        }
        if members.is_empty() {
            tracing::warn!("{what} `{label}` has no valid members; dropped");
            continue;
        }
        match by_label.get(&normalize_label(&label)) {
            Some(&i) => out[i].members.extend(members),
            None => {
                by_label.insert(normalize_label(&label), out.len());
                out.push(Group { label, description: collapse_ws(&g.description), members });
            }
        }
    }
    out
}

pub struct Synthesizer<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptSet,
    pub temperature: f64,
}

impl Synthesizer<'_> {
    fn ask(&self, role: Role, template: Template, vars: &[(&str, &str)], tag: SchemaTag) -> Result<crate::llm::Structured, GatewayError> {
        let prompt = self.prompts.render(template, vars)?;
        self.gateway.complete_structured(&CompletionRequest::new(role, prompt).with_temperature(self.temperature), tag)
    }

    /// Groups every live code into subthemes, one generate entry per
    /// subtheme. Codes the model omits go to the fallback subtheme.
    pub fn synthesize_subthemes(&self, journal: &mut Journal, role: &str) -> Result<Vec<ArtifactId>, Error> {
        let codes: Vec<_> = journal.hierarchy.live_codes().cloned().collect();
        if codes.is_empty() {
            return Err(Error::Config("subtheme synthesis needs a non-empty codebook".into()));
        }
        let menu = codes.iter().map(|c| format!("{} | {} | {}", c.code_id, c.label, c.description)).collect::<Vec<_>>().join("\n");
        let raw = self.ask(Role::SubthemeSynthesizer, Template::Subthemes, &[("code_menu", &menu)], SchemaTag::SubthemeList)?.into_subthemes()?;
        let allowed: BTreeSet<ArtifactId> = codes.iter().map(|c| c.code_id).collect();
        let mut groups = clean_groups(raw, &allowed, "subtheme");
        let covered: BTreeSet<ArtifactId> = groups.iter().flat_map(|g| g.members.iter().copied()).collect();
        let missing: BTreeSet<ArtifactId> = allowed.difference(&covered).copied().collect();
        let mut justifications = vec![String::new(); groups.len()];
        if !missing.is_empty() {
            tracing::warn!(n = missing.len(), "synthesis omitted codes; collected under `{FALLBACK_SUBTHEME}`");
            let note = format!("fallback for {} code(s) omitted by the synthesizer", missing.len());
            match groups.iter().position(|g| normalize_label(&g.label) == normalize_label(FALLBACK_SUBTHEME)) {
                Some(i) => {
                    groups[i].members.extend(missing);
                    justifications[i] = note;
                }
                None => {
                    groups.push(Group { label: FALLBACK_SUBTHEME.into(), description: FALLBACK_SUBTHEME_DESCRIPTION.into(), members: missing });
                    justifications.push(note);
                }
            }
        }
        let mut out = Vec::new();
        for (g, note) in groups.into_iter().zip(justifications) {
            let id = journal.next_id(ArtifactKind::Subtheme);
            let justification = if note.is_empty() { format!("subtheme `{}` groups {} code(s)", g.label, g.members.len()) } else { note };
            let s = Subtheme { subtheme_id: id, label: g.label, description: g.description, child_ids: g.members.clone(), deleted: false };
            journal.commit(ActionDraft::new(role, ActionType::Generate, g.members.into_iter().collect(), vec![Artifact::Subtheme(s)], justification))?;
            out.push(id);
        }
        Ok(out)
    }

    /// Aggregates every live subtheme into themes, one generate entry per
    /// theme. Themes outside the word limits get one repair round and are
    /// discarded if still invalid; uncovered subthemes go to the fallback theme.
    pub fn synthesize_themes(&self, journal: &mut Journal, role: &str) -> Result<Vec<ArtifactId>, Error> {
        let subs: Vec<Subtheme> = journal.hierarchy.live_subthemes().cloned().collect();
        if subs.is_empty() {
            return Err(Error::Config("theme synthesis needs at least one subtheme".into()));
        }
        let h = &journal.hierarchy;
        let menu = subs
            .iter()
            .map(|s| {
                let labels: Vec<&str> = s.child_ids.iter().filter_map(|c| h.code(*c)).filter(|c| !c.deleted).map(|c| c.label.as_str()).collect();
                format!("{} | {} | codes: {}", s.subtheme_id, s.label, labels.join("; "))
            })
            .collect::<Vec<_>>()
            .join("\n");
        let raw = self.ask(Role::ThemeSynthesizer, Template::Themes, &[("subtheme_menu", &menu)], SchemaTag::ThemeList)?.into_themes()?;
        let (mut valid, invalid): (Vec<RawGroup>, Vec<RawGroup>) = raw.into_iter().partition(|g| theme_text_ok(&collapse_ws(&g.label), &collapse_ws(&g.description)));
        if !invalid.is_empty() {
            let drafts = serde_json::to_string_pretty(&invalid).expect("drafts serialise");
            match self.ask(Role::ThemeSynthesizer, Template::ThemeRepair, &[("drafts_json", &drafts)], SchemaTag::ThemeList) {
                Ok(s) => {
                    for g in s.into_themes()? {
                        if theme_text_ok(&collapse_ws(&g.label), &collapse_ws(&g.description)) {
                            valid.push(g);
                        } else {
                            tracing::warn!(label = %g.label, "theme still violates word limits after repair; dropped");
                        }
                    }
                }
                Err(GatewayError::MalformedResponse { reason, .. }) => tracing::warn!("theme repair unusable, {} theme(s) dropped: {reason}", invalid.len()),
                Err(e) => return Err(e.into()),
            }
        }
        let allowed: BTreeSet<ArtifactId> = subs.iter().map(|s| s.subtheme_id).collect();
        let mut groups = clean_groups(valid, &allowed, "theme");
        let covered: BTreeSet<ArtifactId> = groups.iter().flat_map(|g| g.members.iter().copied()).collect();
        let missing: BTreeSet<ArtifactId> = allowed.difference(&covered).copied().collect();
        let mut notes = vec![String::new(); groups.len()];
        if !missing.is_empty() {
            tracing::warn!(n = missing.len(), "synthesis left subthemes without a theme; collected under the fallback theme");
            let note = format!("fallback for {} subtheme(s) left without a theme", missing.len());
            match groups.iter().position(|g| normalize_label(&g.label) == normalize_label(FALLBACK_THEME)) {
                Some(i) => {
                    groups[i].members.extend(missing);
                    notes[i] = note;
                }
                None => {
                    groups.push(Group { label: FALLBACK_THEME.into(), description: FALLBACK_THEME_DESCRIPTION.into(), members: missing });
                    notes.push(note);
                }
            }
        }
        let mut out = Vec::new();
        for (g, note) in groups.into_iter().zip(notes) {
            let id = journal.next_id(ArtifactKind::Theme);
            let justification = if note.is_empty() { format!("theme `{}` aggregates {} subtheme(s)", g.label, g.members.len()) } else { note };
            let t = Theme { theme_id: id, label: g.label, description: g.description, child_ids: g.members.clone(), deleted: false };
            journal.commit(ActionDraft::new(role, ActionType::Generate, g.members.into_iter().collect(), vec![Artifact::Theme(t)], justification))?;
            out.push(id);
        }
        Ok(out)
    }

    /// Tombstones the current subtheme and theme layers in one delete entry
    /// so they can be synthesised afresh. Returns the aid, if anything was live.
    pub fn retire_layers(&self, journal: &mut Journal, role: &str) -> Result<Option<u64>, Error> {
        let h = &journal.hierarchy;
        let payload: Vec<Artifact> = h
            .live_themes()
            .map(|t| tombstone(Artifact::Theme(t.clone())))
            .chain(h.live_subthemes().map(|s| tombstone(Artifact::Subtheme(s.clone()))))
            .collect();
        if payload.is_empty() {
            return Ok(None);
        }
        let inputs = payload.iter().map(Artifact::id).collect();
        let n = payload.len();
        Ok(Some(journal.commit(ActionDraft::new(role, ActionType::Delete, inputs, payload, format!("retired {n} subtheme/theme artifact(s) before re-synthesis")))?))
    }

    /// Both passes in order.
    pub fn synthesize(&self, journal: &mut Journal, role: &str) -> Result<(), Error> {
        self.synthesize_subthemes(journal, role)?;
        self.synthesize_themes(journal, role)?;
        Ok(())
    }
}
