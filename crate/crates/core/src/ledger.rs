//! Append-only action ledger, provenance tracing and deterministic replay.
//!
//! Entries are state-carrying: `payload` holds the post-state of every id in
//! `outputs`, so replaying the ledger needs no model calls. An output that did
//! not exist before its entry is *created* by that entry; only `generate`,
//! `merge` and `split` entries may create artifacts. An output that already
//! existed must also be listed as an input.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::artifact::Artifact;
use crate::error::LedgerError;
use crate::hierarchy::Hierarchy;
use crate::ids::{ArtifactId, ArtifactKind, IdAllocator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionType {
    Generate,
    Merge,
    Split,
    Revise,
    Move,
    Delete,
}

impl ActionType {
    pub fn creates(self) -> bool {
        matches!(self, ActionType::Generate | ActionType::Merge | ActionType::Split)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionType::Generate => "generate",
            ActionType::Merge => "merge",
            ActionType::Split => "split",
            ActionType::Revise => "revise",
            ActionType::Move => "move",
            ActionType::Delete => "delete",
        }
    }
}

impl std::fmt::Display for ActionType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionEntry {
    pub aid: u64,
    pub agent_role: String,
    pub action_type: ActionType,
    pub inputs: Vec<ArtifactId>,
    pub outputs: Vec<ArtifactId>,
    pub justification: String,
    pub timestamp: DateTime<Utc>,
    pub payload: Vec<Artifact>,
}

/// An entry before the ledger stamps it with an aid and a timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDraft {
    pub agent_role: String,
    pub action_type: ActionType,
    pub inputs: Vec<ArtifactId>,
    pub outputs: Vec<ArtifactId>,
    pub justification: String,
    pub payload: Vec<Artifact>,
}

impl ActionDraft {
    /// Builds a draft whose outputs are exactly the payload ids.
    pub fn new(
        agent_role: impl Into<String>,
        action_type: ActionType,
        inputs: Vec<ArtifactId>,
        payload: Vec<Artifact>,
        justification: impl Into<String>,
    ) -> Self {
        let outputs = payload.iter().map(Artifact::id).collect();
        Self {
            agent_role: agent_role.into(),
            action_type,
            inputs,
            outputs,
            justification: justification.into(),
            payload,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    entries: Vec<ActionEntry>,
    #[serde(default)]
    sealed: bool,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[ActionEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_aid(&self) -> u64 {
        self.entries.last().map(|e| e.aid).unwrap_or(0)
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    /// Marks the run finalized; later appends fail with `LedgerSealed`.
    pub fn seal(&mut self) {
        self.sealed = true;
    }

    /// Appends a draft, validating its inputs against `hierarchy` (the state
    /// *before* the action is applied). Returns the new aid.
    pub fn append(&mut self, hierarchy: &Hierarchy, draft: ActionDraft) -> Result<u64, LedgerError> {
        if self.sealed {
            return Err(LedgerError::LedgerSealed);
        }
        if let Some(missing) = draft.inputs.iter().find(|id| !hierarchy.contains(**id)) {
            return Err(LedgerError::UnknownArtifact(*missing));
        }
        let aid = self.last_aid() + 1;
        check_outputs(hierarchy, aid, &draft.action_type, &draft.inputs, &draft.outputs, &draft.payload)?;
        self.entries.push(ActionEntry {
            aid,
            agent_role: draft.agent_role,
            action_type: draft.action_type,
            inputs: draft.inputs,
            outputs: draft.outputs,
            justification: draft.justification,
            timestamp: Utc::now(),
            payload: draft.payload,
        });
        Ok(aid)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Parses a JSONL ledger. Unparseable lines (including unknown action
    /// types) are reported as `CorruptLedger` at the line's position.
    pub fn read_jsonl(r: impl BufRead) -> Result<Self, LedgerError> {
        let mut entries = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| LedgerError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ActionEntry = serde_json::from_str(&line).map_err(|e| {
                LedgerError::corrupt(lineno as u64 + 1, format!("line {}: {e}", lineno + 1))
            })?;
            entries.push(entry);
        }
        Ok(Self { entries, sealed: false })
    }

    /// Entries rendered canonically with timestamps removed; two runs with
    /// the same inputs produce equal vectors.
    pub fn fingerprint_lines(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| {
                let mut v = serde_json::to_value(e).expect("entry serializes");
                if let Some(obj) = v.as_object_mut() {
                    obj.remove("timestamp");
                }
                crate::canonical::to_canonical_string(&v)
            })
            .collect()
    }
}

fn check_outputs(
    before: &Hierarchy,
    aid: u64,
    action: &ActionType,
    inputs: &[ArtifactId],
    outputs: &[ArtifactId],
    payload: &[Artifact],
) -> Result<(), LedgerError> {
    let out_set: BTreeSet<ArtifactId> = outputs.iter().copied().collect();
    let payload_set: BTreeSet<ArtifactId> = payload.iter().map(Artifact::id).collect();
    if out_set.len() != outputs.len() || payload_set.len() != payload.len() {
        return Err(LedgerError::corrupt(aid, "duplicate ids in outputs or payload"));
    }
    if out_set != payload_set {
        return Err(LedgerError::corrupt(aid, "payload does not match outputs"));
    }
    let input_set: BTreeSet<ArtifactId> = inputs.iter().copied().collect();
    for id in outputs {
        if before.contains(*id) {
            if !input_set.contains(id) {
                return Err(LedgerError::corrupt(
                    aid,
                    format!("{id} is modified but not listed as an input"),
                ));
            }
        } else if !action.creates() {
            return Err(LedgerError::corrupt(aid, format!("{action} entry cannot create {id}")));
        }
    }
    Ok(())
}

/// Hierarchy, ledger and id allocator mutated together. This is the single
/// writer for a run: every state change goes through [`Journal::commit`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Journal {
    pub hierarchy: Hierarchy,
    pub ledger: Ledger,
    pub ids: IdAllocator,
}

impl Journal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_id(&mut self, kind: ArtifactKind) -> ArtifactId {
        self.ids.next(kind)
    }

    /// Rebuilds the hierarchy and id allocator from a persisted ledger.
    pub fn from_ledger(ledger: Ledger) -> Result<Self, LedgerError> {
        let hierarchy = replay(&ledger)?;
        let mut ids = IdAllocator::new();
        for id in hierarchy.ids() {
            ids.observe(id);
        }
        Ok(Self { hierarchy, ledger, ids })
    }

    /// Validates and appends `draft`, then applies its payload.
    pub fn commit(&mut self, draft: ActionDraft) -> Result<u64, LedgerError> {
        let payload = draft.payload.clone();
        let aid = self.ledger.append(&self.hierarchy, draft)?;
        for a in &payload {
            self.ids.observe(a.id());
        }
        self.hierarchy.apply(&payload);
        Ok(aid)
    }
}

/// Rebuilds the hierarchy by applying entries in aid order.
pub fn replay(ledger: &Ledger) -> Result<Hierarchy, LedgerError> {
    let mut h = Hierarchy::new();
    for (i, e) in ledger.entries().iter().enumerate() {
        let expected = i as u64 + 1;
        if e.aid != expected {
            return Err(LedgerError::corrupt(
                e.aid,
                format!("expected aid {expected}, found {} (gap or reordering)", e.aid),
            ));
        }
        if let Some(missing) = e.inputs.iter().find(|id| !h.contains(**id)) {
            return Err(LedgerError::corrupt(e.aid, format!("input {missing} not yet generated")));
        }
        check_outputs(&h, e.aid, &e.action_type, &e.inputs, &e.outputs, &e.payload)?;
        h.apply(&e.payload);
    }
    Ok(h)
}

/// Checks that every stored artifact is created by exactly one entry and that
/// the creating entry has a creating action type.
pub fn verify_completeness(hierarchy: &Hierarchy, ledger: &Ledger) -> Result<(), String> {
    let mut seen = BTreeSet::new();
    let mut created: std::collections::BTreeMap<ArtifactId, u64> = Default::default();
    for e in ledger.entries() {
        for id in &e.outputs {
            if seen.insert(*id) {
                if !e.action_type.creates() {
                    return Err(format!("{id} first appears in a {} entry (aid {})", e.action_type, e.aid));
                }
                created.insert(*id, e.aid);
            }
        }
    }
    for id in hierarchy.ids() {
        if !created.contains_key(&id) {
            return Err(format!("{id} has no creating ledger entry"));
        }
    }
    Ok(())
}

/// A node of the downward evidence tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProvenanceNode {
    pub id: ArtifactId,
    pub label: String,
    pub deleted: bool,
    /// For quotes: the turn and chunk that ground them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub turn_id: Option<ArtifactId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chunk_id: Option<ArtifactId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    pub children: Vec<ProvenanceNode>,
}

impl ProvenanceNode {
    pub fn ids(&self) -> BTreeSet<ArtifactId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            out.insert(n.id);
            stack.extend(n.children.iter());
        }
        out
    }

    /// Every quote leaf under this node.
    pub fn quote_leaves(&self) -> Vec<&ProvenanceNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            if n.id.kind() == ArtifactKind::Quote {
                out.push(n);
            }
            stack.extend(n.children.iter());
        }
        out
    }

    /// Indented text rendering, one artifact per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(0, &mut out);
        out
    }

    fn render_into(&self, depth: usize, out: &mut String) {
        let pad = "  ".repeat(depth);
        let flag = if self.deleted { " [deleted]" } else { "" };
        match (self.turn_id, self.chunk_id) {
            (Some(t), Some(c)) => out.push_str(&format!(
                "{pad}{} \"{}\" <- {} ({}) in {}{flag}\n",
                self.id,
                self.label,
                t,
                self.speaker.as_deref().unwrap_or("UNKNOWN"),
                c
            )),
            _ => out.push_str(&format!("{pad}{} {}{flag}\n", self.id, self.label)),
        }
        for c in &self.children {
            c.render_into(depth + 1, out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProvenanceChain {
    pub root: ProvenanceNode,
    pub entries: Vec<ActionEntry>,
}

/// Evidence tree below `id` plus every ledger entry touching that tree.
pub fn trace(hierarchy: &Hierarchy, ledger: &Ledger, id: ArtifactId) -> Result<ProvenanceChain, LedgerError> {
    if !hierarchy.contains(id) {
        return Err(LedgerError::UnknownArtifact(id));
    }
    let mut last_live: BTreeMap<ArtifactId, &Artifact> = BTreeMap::new();
    for a in ledger.entries().iter().flat_map(|e| e.payload.iter()) {
        if !a.is_deleted() {
            last_live.insert(a.id(), a);
        }
    }
    let root = build_node(hierarchy, &last_live, id);
    let ids = root.ids();
    let entries = ledger
        .entries()
        .iter()
        .filter(|e| e.inputs.iter().chain(e.outputs.iter()).any(|x| ids.contains(x)))
        .cloned()
        .collect();
    Ok(ProvenanceChain { root, entries })
}

/// Tombstoned artifacts are expanded through their last live version so a
/// retired theme still shows the evidence it once held.
fn build_node(h: &Hierarchy, last_live: &BTreeMap<ArtifactId, &Artifact>, id: ArtifactId) -> ProvenanceNode {
    let stored = h.get(id).expect("traced id resolves");
    let art = match last_live.get(&id) {
        Some(live) if stored.is_deleted() => (*live).clone(),
        _ => stored.clone(),
    };
    let mut node = ProvenanceNode {
        id,
        label: String::new(),
        deleted: stored.is_deleted(),
        turn_id: None,
        chunk_id: None,
        speaker: None,
        children: Vec::new(),
    };
    match &art {
        Artifact::Quote(q) => {
            node.label = q.text.clone();
            node.turn_id = Some(q.turn_id);
            node.chunk_id = Some(q.chunk_id);
            node.speaker = h.turn(q.turn_id).map(|t| t.speaker.clone());
        }
        Artifact::Turn(t) => node.label = format!("{}: {}", t.speaker, t.text),
        Artifact::Chunk(c) => node.label = format!("{} [{}..{}]", c.doc_id, c.start, c.end),
        other => node.label = other.label().unwrap_or_default().to_string(),
    }
    node.children = art
        .children()
        .into_iter()
        .filter(|c| h.contains(*c))
        .map(|c| build_node(h, last_live, c))
        .collect();
    node
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifact::{Code, Subtheme, Theme};
    use crate::testkit::*;

    /// Four entries: source, two quotes, one code citing the first quote.
    /// Returns the uncited quote.
    fn journal_with_quote() -> (Journal, ArtifactId) {
        let mut j = Journal::new();
        seed_source(&mut j);
        let cited = add_quote(&mut j, "we were scared of the surgery at first");
        let q = add_quote(&mut j, "the nurses explained every step to us");
        add_code(&mut j, "fear before the operation day", &[cited]);
        (j, q)
    }

    #[test]
    fn first_append_is_aid_one_then_monotone() {
        let mut l = Ledger::new();
        let h = Hierarchy::new();
        let d = ActionDraft::new("test", ActionType::Generate, vec![], vec![], "noop");
        assert_eq!(l.append(&h, d.clone()).unwrap(), 1);
        for _ in 0..40 {
            l.append(&h, d.clone()).unwrap();
        }
        assert_eq!(l.last_aid(), 41);
        assert_eq!(l.append(&h, d).unwrap(), 42);
    }

    #[test]
    fn append_rejects_unknown_inputs_and_sealed_ledger() {
        let mut l = Ledger::new();
        let h = Hierarchy::new();
        let bad: ArtifactId = "cid_999999".parse().unwrap();
        let d = ActionDraft::new("test", ActionType::Revise, vec![bad], vec![], "x");
        assert_eq!(l.append(&h, d), Err(LedgerError::UnknownArtifact(bad)));
        l.seal();
        let d = ActionDraft::new("test", ActionType::Generate, vec![], vec![], "x");
        assert_eq!(l.append(&h, d), Err(LedgerError::LedgerSealed));
    }

    #[test]
    fn non_creating_actions_cannot_introduce_ids() {
        let mut j = Journal::new();
        let code = Artifact::Code(Code {
            code_id: cid(1),
            label: "l".into(),
            description: "d".into(),
            frequency: 0,
            source_chunk_ids: Default::default(),
            quote_ids: Default::default(),
            deleted: false,
        });
        let d = ActionDraft::new("t", ActionType::Revise, vec![], vec![code], "x");
        assert!(matches!(j.commit(d), Err(LedgerError::CorruptLedger { .. })));
    }

    #[test]
    fn replay_of_empty_ledger_is_empty() {
        assert!(replay(&Ledger::new()).unwrap().is_empty());
    }

    #[test]
    fn replay_detects_gaps() {
        let (j, _) = journal_with_quote();
        let mut entries = j.ledger.entries().to_vec();
        assert_eq!(entries.len(), 4);
        entries.remove(2);
        let l = Ledger { entries, sealed: false };
        match replay(&l) {
            Err(LedgerError::CorruptLedger { aid, .. }) => assert_eq!(aid, 4),
            other => panic!("expected corrupt ledger, got {other:?}"),
        }
    }

    #[test]
    fn replay_detects_inputs_not_yet_generated() {
        let (j, _) = journal_with_quote();
        let mut entries = j.ledger.entries().to_vec();
        entries.swap(0, 3);
        for (i, e) in entries.iter_mut().enumerate() {
            e.aid = i as u64 + 1;
        }
        let l = Ledger { entries, sealed: false };
        assert!(matches!(replay(&l), Err(LedgerError::CorruptLedger { .. })));
    }

    #[test]
    fn unknown_action_type_is_corrupt() {
        let (j, _) = journal_with_quote();
        let mut buf = Vec::new();
        j.ledger.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replacen("\"generate\"", "\"teleport\"", 1);
        assert!(matches!(
            Ledger::read_jsonl(text.as_bytes()),
            Err(LedgerError::CorruptLedger { aid: 1, .. })
        ));
    }

    #[test]
    fn jsonl_field_names_and_round_trip() {
        let (j, _) = journal_with_quote();
        let mut buf = Vec::new();
        j.ledger.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let mut keys: Vec<&str> = first.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        keys.sort();
        assert_eq!(
            keys,
            ["action_type", "agent_role", "aid", "inputs", "justification", "outputs", "payload", "timestamp"]
        );
        let ts = first["timestamp"].as_str().unwrap();
        assert!(DateTime::parse_from_rfc3339(ts).is_ok());
        let back = Ledger::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back.entries(), j.ledger.entries());
        assert_eq!(replay(&back).unwrap().canonical_json(), j.hierarchy.canonical_json());
    }

    #[test]
    fn trace_of_quote_is_single_node_and_its_generate_entry() {
        let (j, q) = journal_with_quote();
        let chain = trace(&j.hierarchy, &j.ledger, q).unwrap();
        assert!(chain.root.children.is_empty());
        assert_eq!(chain.entries.len(), 1);
        assert_eq!(chain.entries[0].action_type, ActionType::Generate);
        assert!(chain.entries[0].outputs.contains(&q));
        assert!(chain.root.turn_id.is_some());
    }

    #[test]
    fn trace_unknown_is_error() {
        let (j, _) = journal_with_quote();
        assert_eq!(
            trace(&j.hierarchy, &j.ledger, cid(77)).unwrap_err(),
            LedgerError::UnknownArtifact(cid(77))
        );
    }

    #[test]
    fn trace_of_retired_subtheme_keeps_its_former_evidence() {
        let mut j = Journal::new();
        seed_source(&mut j);
        let q = add_quote(&mut j, "we were scared of the surgery at first");
        let c = add_code(&mut j, "fear before the operation day", &[q]);
        let s = j.next_id(ArtifactKind::Subtheme);
        let sub = Subtheme { subtheme_id: s, label: "fear".into(), description: "d".into(), child_ids: [c].into(), deleted: false };
        j.commit(ActionDraft::new("synth", ActionType::Generate, vec![c], vec![Artifact::Subtheme(sub.clone())], "g")).unwrap();
        let gone = Subtheme { child_ids: BTreeSet::new(), deleted: true, ..sub };
        j.commit(ActionDraft::new("synth", ActionType::Delete, vec![s], vec![Artifact::Subtheme(gone)], "retired")).unwrap();

        let chain = trace(&j.hierarchy, &j.ledger, s).unwrap();
        assert!(chain.root.deleted);
        let leaves: Vec<ArtifactId> = chain.root.quote_leaves().iter().map(|n| n.id).collect();
        assert_eq!(leaves, vec![q]);
        assert!(chain.root.render().contains("[deleted]"));
    }

    /// Five codes, three scripted merges, then grouping. The chain for the
    /// theme must list the three merges in aid order, matching a hand count.
    #[test]
    fn trace_lists_merges_in_aid_order() {
        let mut j = Journal::new();
        seed_source(&mut j);
        let mut codes = Vec::new();
        for i in 0..5 {
            let q = add_quote(&mut j, &format!("evidence sentence number {i} from the family"));
            codes.push(add_code(&mut j, &format!("code label number {i} for tests"), &[q]));
        }
        let mut merge_aids = Vec::new();
        let mut survivor = codes[0];
        for other in &codes[1..4] {
            let mut a = j.hierarchy.code(survivor).unwrap().clone();
            let mut b = j.hierarchy.code(*other).unwrap().clone();
            a.quote_ids.extend(b.quote_ids.iter().copied());
            b.quote_ids.clear();
            b.deleted = true;
            let aid = j
                .commit(ActionDraft::new(
                    "coder",
                    ActionType::Merge,
                    vec![survivor, *other],
                    vec![Artifact::Code(a), Artifact::Code(b)],
                    "equivalent",
                ))
                .unwrap();
            merge_aids.push(aid);
            survivor = codes[0];
        }
        let s = j.next_id(ArtifactKind::Subtheme);
        let sub = Subtheme {
            subtheme_id: s,
            label: "grouped".into(),
            description: "d".into(),
            child_ids: [codes[0], codes[4]].into(),
            deleted: false,
        };
        let group_aid = j
            .commit(ActionDraft::new("synth", ActionType::Generate, vec![codes[0], codes[4]], vec![Artifact::Subtheme(sub)], "g"))
            .unwrap();
        let t = j.next_id(ArtifactKind::Theme);
        let theme = Theme {
            theme_id: t,
            label: "theme".into(),
            description: "d".into(),
            child_ids: [s].into(),
            deleted: false,
        };
        let theme_aid = j
            .commit(ActionDraft::new("synth", ActionType::Generate, vec![s], vec![Artifact::Theme(theme)], "g"))
            .unwrap();

        let chain = trace(&j.hierarchy, &j.ledger, t).unwrap();
        let merges: Vec<u64> = chain
            .entries
            .iter()
            .filter(|e| e.action_type == ActionType::Merge)
            .map(|e| e.aid)
            .collect();
        assert_eq!(merges, merge_aids);
        let aids: Vec<u64> = chain.entries.iter().map(|e| e.aid).collect();
        let mut sorted = aids.clone();
        sorted.sort_unstable();
        assert_eq!(aids, sorted);
        assert!(aids.contains(&group_aid) && aids.contains(&theme_aid));
        // theme -> subtheme -> 2 codes -> 4 + 1 quotes
        assert_eq!(chain.root.quote_leaves().len(), 5);
        assert_eq!(replay(&j.ledger).unwrap(), j.hierarchy);
        verify_completeness(&j.hierarchy, &j.ledger).unwrap();
    }
}
