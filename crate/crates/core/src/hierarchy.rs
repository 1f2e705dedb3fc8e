//! The four-level thematic hierarchy plus the turns and chunks its quotes
//! point at.
//!
//! Child links live on the parent artifacts; the reverse (parent) table is an
//! index kept in sync by [`Hierarchy::upsert`] and rebuilt on load.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::artifact::{Artifact, Chunk, Code, Quote, Subtheme, Theme, Turn};
use crate::canonical;
use crate::ids::{ArtifactId, ArtifactKind};

#[derive(Debug, Clone, Default)]
pub struct Hierarchy {
    turns: BTreeMap<ArtifactId, Turn>,
    chunks: BTreeMap<ArtifactId, Chunk>,
    quotes: BTreeMap<ArtifactId, Quote>,
    codes: BTreeMap<ArtifactId, Code>,
    subthemes: BTreeMap<ArtifactId, Subtheme>,
    themes: BTreeMap<ArtifactId, Theme>,
    parents: BTreeMap<ArtifactId, BTreeSet<ArtifactId>>,
}

impl PartialEq for Hierarchy {
    fn eq(&self, other: &Self) -> bool {
        self.turns == other.turns
            && self.chunks == other.chunks
            && self.quotes == other.quotes
            && self.codes == other.codes
            && self.subthemes == other.subthemes
            && self.themes == other.themes
    }
}

/// Problems found by [`Hierarchy::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Dangling { from: ArtifactId, to: ArtifactId },
    AsymmetricLink { parent: ArtifactId, child: ArtifactId },
    LiveChildOfDeleted { parent: ArtifactId, child: ArtifactId },
    WrongChildKind { parent: ArtifactId, child: ArtifactId },
    EmptyChildren(ArtifactId),
    Uncovered(ArtifactId),
    DuplicateLabel { kind: ArtifactKind, label: String },
    QuoteMismatch(ArtifactId),
    FrequencyMismatch(ArtifactId),
}

impl Hierarchy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
            && self.chunks.is_empty()
            && self.quotes.is_empty()
            && self.codes.is_empty()
            && self.subthemes.is_empty()
            && self.themes.is_empty()
    }

    pub fn contains(&self, id: ArtifactId) -> bool {
        match id.kind() {
            ArtifactKind::Turn => self.turns.contains_key(&id),
            ArtifactKind::Chunk => self.chunks.contains_key(&id),
            ArtifactKind::Quote => self.quotes.contains_key(&id),
            ArtifactKind::Code => self.codes.contains_key(&id),
            ArtifactKind::Subtheme => self.subthemes.contains_key(&id),
            ArtifactKind::Theme => self.themes.contains_key(&id),
        }
    }

    /// Present and not tombstoned.
    pub fn is_live(&self, id: ArtifactId) -> bool {
        self.get(id).is_some_and(|a| !a.is_deleted())
    }

    pub fn get(&self, id: ArtifactId) -> Option<Artifact> {
        Some(match id.kind() {
            ArtifactKind::Turn => Artifact::Turn(self.turns.get(&id)?.clone()),
            ArtifactKind::Chunk => Artifact::Chunk(self.chunks.get(&id)?.clone()),
            ArtifactKind::Quote => Artifact::Quote(self.quotes.get(&id)?.clone()),
            ArtifactKind::Code => Artifact::Code(self.codes.get(&id)?.clone()),
            ArtifactKind::Subtheme => Artifact::Subtheme(self.subthemes.get(&id)?.clone()),
            ArtifactKind::Theme => Artifact::Theme(self.themes.get(&id)?.clone()),
        })
    }

    pub fn turn(&self, id: ArtifactId) -> Option<&Turn> {
        self.turns.get(&id)
    }
    pub fn chunk(&self, id: ArtifactId) -> Option<&Chunk> {
        self.chunks.get(&id)
    }
    pub fn quote(&self, id: ArtifactId) -> Option<&Quote> {
        self.quotes.get(&id)
    }
    pub fn code(&self, id: ArtifactId) -> Option<&Code> {
        self.codes.get(&id)
    }
    pub fn subtheme(&self, id: ArtifactId) -> Option<&Subtheme> {
        self.subthemes.get(&id)
    }
    pub fn theme(&self, id: ArtifactId) -> Option<&Theme> {
        self.themes.get(&id)
    }

    pub fn turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.values()
    }
    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.chunks.values()
    }
    pub fn quotes(&self) -> impl Iterator<Item = &Quote> {
        self.quotes.values()
    }
    pub fn codes(&self) -> impl Iterator<Item = &Code> {
        self.codes.values()
    }
    pub fn subthemes(&self) -> impl Iterator<Item = &Subtheme> {
        self.subthemes.values()
    }
    pub fn themes(&self) -> impl Iterator<Item = &Theme> {
        self.themes.values()
    }

    pub fn live_codes(&self) -> impl Iterator<Item = &Code> {
        self.codes.values().filter(|c| !c.deleted)
    }
    pub fn live_subthemes(&self) -> impl Iterator<Item = &Subtheme> {
        self.subthemes.values().filter(|s| !s.deleted)
    }
    pub fn live_themes(&self) -> impl Iterator<Item = &Theme> {
        self.themes.values().filter(|t| !t.deleted)
    }

    /// Every stored id, in canonical order.
    pub fn ids(&self) -> Vec<ArtifactId> {
        let mut out: Vec<ArtifactId> = Vec::new();
        out.extend(self.turns.keys());
        out.extend(self.chunks.keys());
        out.extend(self.quotes.keys());
        out.extend(self.codes.keys());
        out.extend(self.subthemes.keys());
        out.extend(self.themes.keys());
        out
    }

    pub fn children_of(&self, id: ArtifactId) -> Vec<ArtifactId> {
        self.get(id).map(|a| a.children()).unwrap_or_default()
    }

    /// All parents recorded for `id` (live or tombstoned).
    pub fn parents_of(&self, id: ArtifactId) -> BTreeSet<ArtifactId> {
        self.parents.get(&id).cloned().unwrap_or_default()
    }

    pub fn live_parents_of(&self, id: ArtifactId) -> BTreeSet<ArtifactId> {
        self.parents_of(id).into_iter().filter(|p| self.is_live(*p)).collect()
    }

    /// Inserts or replaces an artifact, keeping the parent index in sync.
    /// Returns the previous state.
    pub fn upsert(&mut self, artifact: Artifact) -> Option<Artifact> {
        let id = artifact.id();
        let previous = self.take(id);
        if let Some(prev) = &previous {
            for child in prev.children() {
                if let Some(set) = self.parents.get_mut(&child) {
                    set.remove(&id);
                    if set.is_empty() {
                        self.parents.remove(&child);
                    }
                }
            }
        }
        for child in artifact.children() {
            self.parents.entry(child).or_default().insert(id);
        }
        match artifact {
            Artifact::Turn(a) => {
                self.turns.insert(id, a);
            }
            Artifact::Chunk(a) => {
                self.chunks.insert(id, a);
            }
            Artifact::Quote(a) => {
                self.quotes.insert(id, a);
            }
            Artifact::Code(a) => {
                self.codes.insert(id, a);
            }
            Artifact::Subtheme(a) => {
                self.subthemes.insert(id, a);
            }
            Artifact::Theme(a) => {
                self.themes.insert(id, a);
            }
        }
        previous
    }

    /// Removes an artifact outright. Only used to undo a failed edit; normal
    /// deletion is a tombstone.
    pub(crate) fn remove(&mut self, id: ArtifactId) -> Option<Artifact> {
        let prev = self.take(id)?;
        for child in prev.children() {
            if let Some(set) = self.parents.get_mut(&child) {
                set.remove(&id);
                if set.is_empty() {
                    self.parents.remove(&child);
                }
            }
        }
        Some(prev)
    }

    fn take(&mut self, id: ArtifactId) -> Option<Artifact> {
        match id.kind() {
            ArtifactKind::Turn => self.turns.remove(&id).map(Artifact::Turn),
            ArtifactKind::Chunk => self.chunks.remove(&id).map(Artifact::Chunk),
            ArtifactKind::Quote => self.quotes.remove(&id).map(Artifact::Quote),
            ArtifactKind::Code => self.codes.remove(&id).map(Artifact::Code),
            ArtifactKind::Subtheme => self.subthemes.remove(&id).map(Artifact::Subtheme),
            ArtifactKind::Theme => self.themes.remove(&id).map(Artifact::Theme),
        }
    }

    /// Applies a batch of post-states, returning an undo log.
    pub fn apply(&mut self, changes: &[Artifact]) -> Vec<(ArtifactId, Option<Artifact>)> {
        changes
            .iter()
            .map(|a| (a.id(), self.upsert(a.clone())))
            .collect()
    }

    pub fn undo(&mut self, log: Vec<(ArtifactId, Option<Artifact>)>) {
        for (id, prev) in log.into_iter().rev() {
            match prev {
                Some(a) => {
                    self.upsert(a);
                }
                None => {
                    self.remove(id);
                }
            }
        }
    }

    /// Distinct live quotes reachable below `id`.
    pub fn quotes_under(&self, id: ArtifactId) -> BTreeSet<ArtifactId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            if cur.kind() == ArtifactKind::Quote {
                if self.is_live(cur) {
                    out.insert(cur);
                }
                continue;
            }
            if !self.is_live(cur) {
                continue;
            }
            stack.extend(self.children_of(cur));
        }
        out
    }

    /// Checks structural invariants: no dangling ids, symmetric links, live
    /// artifacts never hang under tombstones, quotes match their turn text,
    /// code frequencies match their chunk sets.
    pub fn validate_links(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut rebuilt: BTreeMap<ArtifactId, BTreeSet<ArtifactId>> = BTreeMap::new();
        for id in self.ids() {
            let art = self.get(id).expect("listed id resolves");
            for child in art.children() {
                rebuilt.entry(child).or_default().insert(id);
                if !self.contains(child) {
                    out.push(Violation::Dangling { from: id, to: child });
                    continue;
                }
                if crate::artifact::child_kind(id.kind()) != Some(child.kind()) {
                    out.push(Violation::WrongChildKind { parent: id, child });
                }
                if art.is_deleted() && self.is_live(child) {
                    out.push(Violation::LiveChildOfDeleted { parent: id, child });
                }
            }
            for r in art.references() {
                if !self.contains(r) {
                    out.push(Violation::Dangling { from: id, to: r });
                }
            }
        }
        for (child, ps) in &rebuilt {
            for p in ps {
                if !self.parents.get(child).is_some_and(|s| s.contains(p)) {
                    out.push(Violation::AsymmetricLink { parent: *p, child: *child });
                }
            }
        }
        for (child, ps) in &self.parents {
            for p in ps {
                if !rebuilt.get(child).is_some_and(|s| s.contains(p)) {
                    out.push(Violation::AsymmetricLink { parent: *p, child: *child });
                }
            }
        }
        for q in self.quotes.values() {
            match self.turns.get(&q.turn_id) {
                Some(t) => {
                    let (s, e) = q.char_span;
                    if crate::text::slice_chars(&t.text, s, e) != q.text {
                        out.push(Violation::QuoteMismatch(q.quote_id));
                    }
                }
                None => out.push(Violation::Dangling { from: q.quote_id, to: q.turn_id }),
            }
        }
        for c in self.codes.values() {
            if c.frequency != c.source_chunk_ids.len() {
                out.push(Violation::FrequencyMismatch(c.code_id));
            }
        }
        out
    }

    /// Thematic coverage: every live code under a live subtheme, every live
    /// subtheme under a live theme, no live parent without live children, and
    /// distinct labels per level.
    pub fn validate_coverage(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for c in self.live_codes() {
            if self.live_parents_of(c.code_id).is_empty() {
                out.push(Violation::Uncovered(c.code_id));
            }
        }
        for s in self.live_subthemes() {
            if self.live_parents_of(s.subtheme_id).is_empty() {
                out.push(Violation::Uncovered(s.subtheme_id));
            }
            if !s.child_ids.iter().any(|c| self.is_live(*c)) {
                out.push(Violation::EmptyChildren(s.subtheme_id));
            }
        }
        for t in self.live_themes() {
            if !t.child_ids.iter().any(|c| self.is_live(*c)) {
                out.push(Violation::EmptyChildren(t.theme_id));
            }
        }
        let mut seen: BTreeSet<(ArtifactKind, String)> = BTreeSet::new();
        let labels = self
            .live_subthemes()
            .map(|s| (ArtifactKind::Subtheme, s.label.as_str()))
            .chain(self.live_themes().map(|t| (ArtifactKind::Theme, t.label.as_str())));
        for (kind, label) in labels {
            let norm = crate::text::normalize_label(label);
            if !seen.insert((kind, norm.clone())) {
                out.push(Violation::DuplicateLabel { kind, label: norm });
            }
        }
        out
    }

    fn to_doc(&self) -> HierarchyDoc {
        HierarchyDoc {
            themes: self.themes.values().cloned().collect(),
            subthemes: self.subthemes.values().cloned().collect(),
            codes: self.codes.values().cloned().collect(),
            quotes: self.quotes.values().cloned().collect(),
            chunks: self.chunks.values().cloned().collect(),
            turns: self.turns.values().cloned().collect(),
        }
    }

    fn from_doc(doc: HierarchyDoc) -> Self {
        let mut h = Hierarchy::new();
        let all = doc
            .turns
            .into_iter()
            .map(Artifact::Turn)
            .chain(doc.chunks.into_iter().map(Artifact::Chunk))
            .chain(doc.quotes.into_iter().map(Artifact::Quote))
            .chain(doc.codes.into_iter().map(Artifact::Code))
            .chain(doc.subthemes.into_iter().map(Artifact::Subtheme))
            .chain(doc.themes.into_iter().map(Artifact::Theme));
        for a in all {
            h.upsert(a);
        }
        h
    }

    /// Canonical serialization: collections sorted by id, floats at nine
    /// significant digits, compact separators.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("hierarchy serializes");
        canonical::to_canonical_string(&value)
    }
}

#[derive(Serialize, Deserialize)]
struct HierarchyDoc {
    themes: Vec<Theme>,
    subthemes: Vec<Subtheme>,
    codes: Vec<Code>,
    quotes: Vec<Quote>,
    #[serde(default)]
    chunks: Vec<Chunk>,
    #[serde(default)]
    turns: Vec<Turn>,
}

impl Serialize for Hierarchy {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_doc().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Hierarchy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        HierarchyDoc::deserialize(deserializer).map(Hierarchy::from_doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::*;

    #[test]
    fn upsert_keeps_parent_index_symmetric() {
        let mut h = toy_hierarchy();
        assert!(h.validate_links().is_empty(), "{:?}", h.validate_links());
        assert!(h.validate_coverage().is_empty(), "{:?}", h.validate_coverage());
        let s1 = sid(1);
        let mut sub = h.subtheme(s1).unwrap().clone();
        let moved = *sub.child_ids.iter().next().unwrap();
        sub.child_ids.remove(&moved);
        h.upsert(Artifact::Subtheme(sub));
        assert!(!h.parents_of(moved).contains(&s1));
        assert!(h.validate_links().is_empty());
    }

    #[test]
    fn undo_restores_previous_state() {
        let mut h = toy_hierarchy();
        let before = h.clone();
        let mut theme = h.theme(thm(1)).unwrap().clone();
        theme.label = "changed label for this theme here".into();
        let fresh = Artifact::Theme(Theme {
            theme_id: thm(9),
            label: "x".into(),
            description: "y".into(),
            child_ids: [sid(1)].into(),
            deleted: false,
        });
        let log = h.apply(&[Artifact::Theme(theme), fresh]);
        assert_ne!(h, before);
        h.undo(log);
        assert_eq!(h, before);
        assert_eq!(h.parents_of(sid(1)), before.parents_of(sid(1)));
    }

    #[test]
    fn json_round_trip_rebuilds_index() {
        let h = toy_hierarchy();
        let json = serde_json::to_string(&h).unwrap();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["themes", "subthemes", "codes", "quotes"] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
        let back: Hierarchy = serde_json::from_str(&json).unwrap();
        assert_eq!(back, h);
        assert_eq!(back.canonical_json(), h.canonical_json());
        assert_eq!(back.parents_of(cid(1)), h.parents_of(cid(1)));
    }

    #[test]
    fn detects_dangling_and_uncovered() {
        let mut h = toy_hierarchy();
        let mut sub = h.subtheme(sid(1)).unwrap().clone();
        sub.child_ids.insert(cid(99));
        h.upsert(Artifact::Subtheme(sub));
        assert!(h
            .validate_links()
            .contains(&Violation::Dangling { from: sid(1), to: cid(99) }));

        let mut h = toy_hierarchy();
        let mut t = h.theme(thm(1)).unwrap().clone();
        t.child_ids.clear();
        h.upsert(Artifact::Theme(t));
        let v = h.validate_coverage();
        assert!(v.contains(&Violation::EmptyChildren(thm(1))));
        assert!(v.iter().any(|x| matches!(x, Violation::Uncovered(_))));
    }

    #[test]
    fn quotes_under_counts_distinct_live_quotes() {
        let h = toy_hierarchy();
        let all: BTreeSet<_> = h.quotes().map(|q| q.quote_id).collect();
        let under: BTreeSet<_> = h
            .live_themes()
            .flat_map(|t| h.quotes_under(t.theme_id))
            .collect();
        assert_eq!(under, all);
    }
}
