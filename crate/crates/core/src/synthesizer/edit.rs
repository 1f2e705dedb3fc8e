//! Reviewer edit proposals and their constrained application.
//!
//! An edit is applied by building the post-state of every touched artifact,
//! checking it against the hierarchy invariants on a tentative copy, and only
//! then committing it as exactly one ledger entry. A rejected edit leaves the
//! journal untouched, including its id allocator.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{FALLBACK_SUBTHEME, FALLBACK_THEME, THEME_DESCRIPTION_WORDS, THEME_LABEL_WORDS};
use crate::artifact::{child_kind, parent_kind, Artifact, Code, Quote, Subtheme, Theme};
use crate::coder::{description_ok, ground_quote, label_ok};
use crate::error::{Error, InvalidEdit};
use crate::hierarchy::Hierarchy;
use crate::ids::{ArtifactId, ArtifactKind, IdAllocator};
use crate::ledger::{ActionDraft, ActionType, Journal};
use crate::llm::structured::RawEdit;
use crate::text::{collapse_ws, normalize_label, word_count};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPart {
    pub label: String,
    #[serde(default)]
    pub description: String,
    pub children: Vec<ArtifactId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditProposal {
    pub action: ActionType,
    pub targets: Vec<ArtifactId>,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub children: Vec<ArtifactId>,
    #[serde(default)]
    pub parts: Vec<SplitPart>,
    #[serde(default)]
    pub new_parent: Option<ArtifactId>,
    #[serde(default)]
    pub quotes: Vec<String>,
    #[serde(default)]
    pub justification: String,
}

fn invalid(msg: impl Into<String>) -> InvalidEdit {
    InvalidEdit(msg.into())
}

fn parse_ids(raw: &[String]) -> Result<Vec<ArtifactId>, InvalidEdit> {
    raw.iter().map(|s| s.trim().parse::<ArtifactId>().map_err(|e| invalid(e.to_string()))).collect()
}

impl EditProposal {
    pub fn new(action: ActionType, targets: Vec<ArtifactId>, justification: impl Into<String>) -> Self {
        Self {
            action,
            targets,
            label: None,
            description: None,
            children: Vec::new(),
            parts: Vec::new(),
            new_parent: None,
            quotes: Vec::new(),
            justification: justification.into(),
        }
    }

    /// Schema validation of a model proposal: known action, well-formed ids
    /// and the fields each action requires.
    pub fn from_raw(raw: &RawEdit) -> Result<Self, InvalidEdit> {
        let action = match raw.action.trim().to_lowercase().as_str() {
            "generate" => ActionType::Generate,
            "merge" => ActionType::Merge,
            "split" => ActionType::Split,
            "revise" => ActionType::Revise,
            "move" => ActionType::Move,
            "delete" => ActionType::Delete,
            other => return Err(invalid(format!("unknown action `{other}`"))),
        };
        let parts = raw
            .parts
            .iter()
            .map(|p| Ok(SplitPart { label: collapse_ws(&p.label), description: collapse_ws(&p.description), children: parse_ids(&p.children)? }))
            .collect::<Result<Vec<_>, InvalidEdit>>()?;
        let p = Self {
            action,
            targets: parse_ids(&raw.targets)?,
            label: raw.label.as_deref().map(collapse_ws).filter(|s| !s.is_empty()),
            description: raw.description.as_deref().map(collapse_ws).filter(|s| !s.is_empty()),
            children: parse_ids(&raw.children)?,
            parts,
            new_parent: raw.new_parent.as_deref().map(|s| s.trim().parse().map_err(|e: crate::error::ParseIdError| invalid(e.to_string()))).transpose()?,
            quotes: raw.quotes.iter().map(|q| q.trim().to_string()).filter(|q| !q.is_empty()).collect(),
            justification: raw.justification.trim().to_string(),
        };
        p.check_shape()?;
        Ok(p)
    }

    fn check_shape(&self) -> Result<(), InvalidEdit> {
        let n = self.targets.len();
        let ok = match self.action {
            ActionType::Generate => self.label.is_some() && ((!self.quotes.is_empty() && n >= 1) || !self.children.is_empty()),
            ActionType::Merge => n >= 2,
            ActionType::Split => n == 1 && self.parts.len() >= 2,
            ActionType::Revise => n == 1 && (self.label.is_some() || self.description.is_some()),
            ActionType::Move => (n == 1 || n == 2) && self.new_parent.is_some(),
            ActionType::Delete => n == 1,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("{} proposal is missing required fields", self.action)))
        }
    }

    /// Every action except revise changes structure.
    pub fn is_substantive(&self) -> bool {
        self.action != ActionType::Revise
    }
}

/// Settings an edit needs beyond the proposal itself.
#[derive(Debug, Clone)]
pub struct EditContext<'a> {
    pub role: &'a str,
    pub min_quote_chars: usize,
    pub max_quote_chars: usize,
}

/// Label and description limits per kind. Subthemes only need a label.
pub fn text_ok(a: &Artifact) -> Result<(), InvalidEdit> {
    let within = |s: &str, (lo, hi): (usize, usize)| (lo..=hi).contains(&word_count(s));
    let ok = match a {
        Artifact::Code(c) => label_ok(&c.label) && description_ok(&c.description),
        Artifact::Subtheme(s) => !s.label.trim().is_empty(),
        Artifact::Theme(t) => within(&t.label, THEME_LABEL_WORDS) && within(&t.description, THEME_DESCRIPTION_WORDS),
        _ => true,
    };
    if ok {
        Ok(())
    } else {
        Err(invalid(format!("{} violates the {} label/description limits", a.id(), a.kind())))
    }
}

fn set_children(a: &mut Artifact, children: BTreeSet<ArtifactId>) {
    match a {
        Artifact::Code(c) => c.quote_ids = children,
        Artifact::Subtheme(s) => s.child_ids = children,
        Artifact::Theme(t) => t.child_ids = children,
        _ => {}
    }
}

fn set_text(a: &mut Artifact, label: Option<&str>, description: Option<&str>) {
    let (l, d) = match a {
        Artifact::Code(c) => (&mut c.label, &mut c.description),
        Artifact::Subtheme(s) => (&mut s.label, &mut s.description),
        Artifact::Theme(t) => (&mut t.label, &mut t.description),
        _ => return,
    };
    if let Some(x) = label {
        *l = x.to_string();
    }
    if let Some(x) = description {
        *d = x.to_string();
    }
}

fn description_of(a: &Artifact) -> String {
    match a {
        Artifact::Code(c) => c.description.clone(),
        Artifact::Subtheme(s) => s.description.clone(),
        Artifact::Theme(t) => t.description.clone(),
        _ => String::new(),
    }
}

/// Deleted flag set and child links cleared.
pub fn tombstone(mut a: Artifact) -> Artifact {
    set_children(&mut a, BTreeSet::new());
    match &mut a {
        Artifact::Quote(q) => q.deleted = true,
        Artifact::Code(c) => c.deleted = true,
        Artifact::Subtheme(s) => s.deleted = true,
        Artifact::Theme(t) => t.deleted = true,
        _ => {}
    }
    a
}

/// Post-states being assembled for one edit.
struct Pending<'h> {
    h: &'h Hierarchy,
    ids: IdAllocator,
    changed: BTreeMap<ArtifactId, Artifact>,
    order: Vec<ArtifactId>,
    text_checked: Vec<ArtifactId>,
}

impl<'h> Pending<'h> {
    fn new(j: &'h Journal) -> Self {
        Self { h: &j.hierarchy, ids: j.ids.clone(), changed: BTreeMap::new(), order: Vec::new(), text_checked: Vec::new() }
    }

    fn get(&self, id: ArtifactId) -> Option<Artifact> {
        self.changed.get(&id).cloned().or_else(|| self.h.get(id))
    }

    fn live(&self, id: ArtifactId) -> Result<Artifact, InvalidEdit> {
        match self.get(id) {
            Some(a) if !a.is_deleted() => Ok(a),
            Some(_) => Err(invalid(format!("{id} is tombstoned"))),
            None => Err(invalid(format!("{id} does not exist"))),
        }
    }

    fn live_grouping(&self, id: ArtifactId) -> Result<Artifact, InvalidEdit> {
        let a = self.live(id)?;
        if !matches!(id.kind(), ArtifactKind::Code | ArtifactKind::Subtheme | ArtifactKind::Theme) {
            return Err(invalid(format!("{id} cannot be edited")));
        }
        Ok(a)
    }

    fn put(&mut self, a: Artifact) {
        let id = a.id();
        if self.changed.insert(id, a).is_none() {
            self.order.push(id);
        }
    }

    fn create(&mut self, a: Artifact) {
        self.text_checked.push(a.id());
        self.put(a);
    }

    fn live_children(&self, id: ArtifactId) -> BTreeSet<ArtifactId> {
        self.get(id)
            .map(|a| a.children())
            .unwrap_or_default()
            .into_iter()
            .filter(|c| self.get(*c).is_some_and(|a| !a.is_deleted()))
            .collect()
    }

    fn live_parents(&self, id: ArtifactId) -> BTreeSet<ArtifactId> {
        let mut out: BTreeSet<ArtifactId> = self.h.parents_of(id).into_iter().collect();
        out.extend(self.changed.values().filter(|a| a.children().contains(&id)).map(|a| a.id()));
        out.into_iter()
            .filter(|p| self.get(*p).is_some_and(|a| !a.is_deleted() && a.children().contains(&id)))
            .collect()
    }

    /// In every live parent of any of `old`, replaces those ids by `new`.
    fn relink(&mut self, old: &[ArtifactId], new: &[ArtifactId]) {
        let parents: BTreeSet<ArtifactId> = old.iter().flat_map(|o| self.live_parents(*o)).collect();
        for p in parents {
            let mut a = self.get(p).expect("parent resolves");
            let mut kids: BTreeSet<ArtifactId> = a.children().into_iter().filter(|c| !old.contains(c)).collect();
            kids.extend(new.iter().copied());
            set_children(&mut a, kids);
            self.put(a);
        }
    }

    fn source_chunks(&self, quotes: &BTreeSet<ArtifactId>) -> BTreeSet<ArtifactId> {
        quotes
            .iter()
            .filter_map(|q| match self.get(*q) {
                Some(Artifact::Quote(q)) => Some(q.chunk_id),
                _ => None,
            })
            .collect()
    }

    /// A fresh artifact of `kind` with the given text and children.
    fn fresh(&mut self, kind: ArtifactKind, label: &str, description: &str, children: BTreeSet<ArtifactId>) -> Artifact {
        let id = self.ids.next(kind);
        match kind {
            ArtifactKind::Code => {
                let source_chunk_ids = self.source_chunks(&children);
                Artifact::Code(Code {
                    code_id: id,
                    label: label.into(),
                    description: description.into(),
                    frequency: source_chunk_ids.len(),
                    source_chunk_ids,
                    quote_ids: children,
                    deleted: false,
                })
            }
            ArtifactKind::Subtheme => Artifact::Subtheme(Subtheme { subtheme_id: id, label: label.into(), description: description.into(), child_ids: children, deleted: false }),
            ArtifactKind::Theme => Artifact::Theme(Theme { theme_id: id, label: label.into(), description: description.into(), child_ids: children, deleted: false }),
            _ => unreachable!("only groupings are created by edits"),
        }
    }

    fn fallback(&self, kind: ArtifactKind, except: ArtifactId) -> Option<ArtifactId> {
        let label = match kind {
            ArtifactKind::Subtheme => FALLBACK_SUBTHEME,
            ArtifactKind::Theme => FALLBACK_THEME,
            _ => return None,
        };
        let key = normalize_label(label);
        let current: BTreeSet<ArtifactId> = match kind {
            ArtifactKind::Subtheme => self.h.live_subthemes().map(|s| s.subtheme_id).collect(),
            _ => self.h.live_themes().map(|t| t.theme_id).collect(),
        };
        current
            .into_iter()
            .chain(self.changed.keys().copied().filter(|id| id.kind() == kind))
            .filter(|id| *id != except)
            .find(|id| self.get(*id).is_some_and(|a| !a.is_deleted() && a.label().is_some_and(|l| normalize_label(l) == key)))
    }
}

fn merge(p: &mut Pending, e: &EditProposal) -> Result<(), InvalidEdit> {
    let distinct: BTreeSet<ArtifactId> = e.targets.iter().copied().collect();
    if distinct.len() != e.targets.len() {
        return Err(invalid("merge targets repeat"));
    }
    let arts = e.targets.iter().map(|t| p.live_grouping(*t)).collect::<Result<Vec<_>, _>>()?;
    let kind = arts[0].kind();
    if arts.iter().any(|a| a.kind() != kind) {
        return Err(invalid("merge targets differ in kind"));
    }
    let children: BTreeSet<ArtifactId> = e.targets.iter().flat_map(|t| p.live_children(*t)).collect();
    let label = e.label.clone().unwrap_or_else(|| arts[0].label().unwrap_or_default().to_string());
    let description = e.description.clone().unwrap_or_else(|| description_of(&arts[0]));
    let mut merged = p.fresh(kind, &label, &description, children);
    if let Artifact::Code(m) = &mut merged {
        for a in &arts {
            if let Artifact::Code(c) = a {
                m.source_chunk_ids.extend(c.source_chunk_ids.iter().copied());
            }
        }
        m.frequency = m.source_chunk_ids.len();
    }
    let new_id = merged.id();
    p.create(merged);
    p.relink(&e.targets, &[new_id]);
    for a in arts {
        p.put(tombstone(a));
    }
    Ok(())
}

fn split(p: &mut Pending, e: &EditProposal) -> Result<(), InvalidEdit> {
    let target = p.live_grouping(e.targets[0])?;
    let kids = p.live_children(target.id());
    let mut seen = BTreeSet::new();
    for part in &e.parts {
        if part.children.is_empty() {
            return Err(invalid("split part without children"));
        }
        for c in &part.children {
            if !kids.contains(c) {
                return Err(invalid(format!("{c} is not a live child of {}", target.id())));
            }
            if !seen.insert(*c) {
                return Err(invalid(format!("{c} appears in two split parts")));
            }
        }
    }
    if seen != kids {
        return Err(invalid("split parts do not cover every child"));
    }
    let mut new_ids = Vec::new();
    for part in &e.parts {
        let description = if part.description.is_empty() { description_of(&target) } else { part.description.clone() };
        let a = p.fresh(target.kind(), &part.label, &description, part.children.iter().copied().collect());
        new_ids.push(a.id());
        p.create(a);
    }
    p.relink(&[target.id()], &new_ids);
    p.put(tombstone(target));
    Ok(())
}

fn revise(p: &mut Pending, e: &EditProposal) -> Result<(), InvalidEdit> {
    let mut a = p.live_grouping(e.targets[0])?;
    set_text(&mut a, e.label.as_deref(), e.description.as_deref());
    p.text_checked.push(a.id());
    p.put(a);
    Ok(())
}

fn move_child(p: &mut Pending, e: &EditProposal) -> Result<(), InvalidEdit> {
    let child = p.live_grouping(e.targets[0])?;
    if child.kind() == ArtifactKind::Theme {
        return Err(invalid("themes have no parent to move between"));
    }
    let dest_id = e.new_parent.expect("shape checked");
    let dest = p.live(dest_id)?;
    if Some(dest.kind()) != parent_kind(child.kind()) {
        return Err(invalid(format!("{dest_id} cannot hold {}", child.id())));
    }
    let from: BTreeSet<ArtifactId> = match e.targets.get(1) {
        Some(f) => {
            if !p.live_parents(child.id()).contains(f) {
                return Err(invalid(format!("{f} is not a parent of {}", child.id())));
            }
            [*f].into()
        }
        None => p.live_parents(child.id()),
    };
    let from: Vec<ArtifactId> = from.into_iter().filter(|f| *f != dest_id).collect();
    if from.is_empty() && dest.children().contains(&child.id()) {
        return Err(invalid("move changes nothing"));
    }
    for f in from {
        let mut a = p.get(f).expect("parent resolves");
        let kids = a.children().into_iter().filter(|c| *c != child.id()).collect();
        set_children(&mut a, kids);
        p.put(a);
    }
    let mut d = p.get(dest_id).expect("destination resolves");
    let mut kids: BTreeSet<ArtifactId> = d.children().into_iter().collect();
    kids.insert(child.id());
    set_children(&mut d, kids);
    p.put(d);
    Ok(())
}

fn delete(p: &mut Pending, e: &EditProposal) -> Result<(), InvalidEdit> {
    let target = p.live_grouping(e.targets[0])?;
    let kids = p.live_children(target.id());
    let orphaned: Vec<ArtifactId> = kids.iter().copied().filter(|c| p.live_parents(*c).len() == 1).collect();
    if !orphaned.is_empty() {
        let dest = match e.new_parent {
            Some(d) => Some(d),
            None => p.fallback(target.kind(), target.id()),
        };
        match (dest, target.kind()) {
            (Some(d), _) => {
                let mut da = p.live(d)?;
                if da.kind() != target.kind() || d == target.id() {
                    return Err(invalid(format!("{d} cannot take the children of {}", target.id())));
                }
                let mut set: BTreeSet<ArtifactId> = da.children().into_iter().collect();
                set.extend(orphaned.iter().copied());
                if let Artifact::Code(c) = &mut da {
                    let extra = p.source_chunks(&orphaned.iter().copied().collect());
                    c.source_chunk_ids.extend(extra);
                    c.frequency = c.source_chunk_ids.len();
                }
                set_children(&mut da, set);
                p.put(da);
            }
            (None, ArtifactKind::Code) => {
                for q in orphaned {
                    let qa = p.live(q)?;
                    p.put(tombstone(qa));
                }
            }
            (None, _) => return Err(invalid(format!("children of {} need a new parent and no fallback exists", target.id()))),
        }
    }
    p.relink(&[target.id()], &[]);
    p.put(tombstone(target));
    Ok(())
}

fn generate(p: &mut Pending, e: &EditProposal, ctx: &EditContext) -> Result<(), InvalidEdit> {
    let label = e.label.clone().expect("shape checked");
    let description = e.description.clone().unwrap_or_default();
    let created = if !e.quotes.is_empty() {
        let mut quote_ids = BTreeSet::new();
        for t in &e.targets {
            let Some(chunk) = p.h.chunk(*t) else { return Err(invalid(format!("{t} is not a chunk"))) };
            let turns: Vec<_> = p.h.turns().filter(|x| x.doc_id == chunk.doc_id).cloned().collect();
            for q in &e.quotes {
                for g in ground_quote(chunk, &turns, q, ctx.min_quote_chars, ctx.max_quote_chars) {
                    let dup = quote_ids.iter().any(|id| match p.get(*id) {
                        Some(Artifact::Quote(x)) => x.turn_id == g.turn_id && x.char_span == g.char_span,
                        _ => false,
                    });
                    if dup {
                        continue;
                    }
                    let qid = p.ids.next(ArtifactKind::Quote);
                    quote_ids.insert(qid);
                    p.put(Artifact::Quote(Quote { quote_id: qid, chunk_id: chunk.chunk_id, turn_id: g.turn_id, char_span: g.char_span, text: g.text, deleted: false }));
                }
            }
        }
        if quote_ids.is_empty() {
            return Err(invalid("no proposed quote is grounded in the target chunks"));
        }
        p.fresh(ArtifactKind::Code, &label, &description, quote_ids)
    } else {
        let kind = e.children[0].kind();
        if e.children.iter().any(|c| c.kind() != kind) {
            return Err(invalid("generated grouping mixes child kinds"));
        }
        for c in &e.children {
            p.live(*c)?;
        }
        let Some(kind) = parent_kind(kind).filter(|k| *k != ArtifactKind::Code) else {
            return Err(invalid("generate with children must build a subtheme or theme"));
        };
        p.fresh(kind, &label, &description, e.children.iter().copied().collect())
    };
    let new_id = created.id();
    let kind = created.kind();
    p.create(created);
    if let Some(parent) = e.new_parent {
        let mut pa = p.live(parent)?;
        if child_kind(pa.kind()) != Some(kind) {
            return Err(invalid(format!("{parent} cannot hold {new_id}")));
        }
        let mut set: BTreeSet<ArtifactId> = pa.children().into_iter().collect();
        set.insert(new_id);
        set_children(&mut pa, set);
        p.put(pa);
    }
    Ok(())
}

fn code_label_clashes(h: &Hierarchy) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    let mut out = BTreeSet::new();
    for c in h.live_codes() {
        let k = normalize_label(&c.label);
        if !seen.insert(k.clone()) {
            out.insert(format!("duplicate code label `{k}`"));
        }
    }
    out
}

fn violation_set(h: &Hierarchy) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = h.validate_links().iter().chain(h.validate_coverage().iter()).map(|v| format!("{v:?}")).collect();
    out.extend(code_label_clashes(h));
    out
}

/// Validates `edit` against the current state and records it as one ledger
/// entry. Rejections return [`InvalidEdit`] and change nothing.
pub fn apply_edit(journal: &mut Journal, edit: &EditProposal, ctx: &EditContext) -> Result<u64, Error> {
    edit.check_shape()?;
    let mut p = Pending::new(journal);
    match edit.action {
        ActionType::Merge => merge(&mut p, edit)?,
        ActionType::Split => split(&mut p, edit)?,
        ActionType::Revise => revise(&mut p, edit)?,
        ActionType::Move => move_child(&mut p, edit)?,
        ActionType::Delete => delete(&mut p, edit)?,
        ActionType::Generate => generate(&mut p, edit, ctx)?,
    }
    for id in &p.text_checked {
        text_ok(&p.changed[id])?;
    }
    let payload: Vec<Artifact> = p.order.iter().map(|id| p.changed[id].clone()).collect();
    let inputs: Vec<ArtifactId> = edit
        .targets
        .iter()
        .copied()
        .chain(payload.iter().map(Artifact::id).filter(|id| journal.hierarchy.contains(*id)))
        .fold(Vec::new(), |mut acc, id| {
            if !acc.contains(&id) {
                acc.push(id);
            }
            acc
        });
    let before = violation_set(&journal.hierarchy);
    let log = journal.hierarchy.apply(&payload);
    let introduced: Vec<String> = violation_set(&journal.hierarchy).difference(&before).cloned().collect();
    journal.hierarchy.undo(log);
    if !introduced.is_empty() {
        return Err(invalid(format!("{} edit would break invariants: {}", edit.action, introduced.join("; "))).into());
    }
    let justification = if edit.justification.is_empty() { format!("{} proposed by reviewer", edit.action) } else { edit.justification.clone() };
    Ok(journal.commit(ActionDraft::new(ctx.role, edit.action, inputs, payload, justification))?)
}
