//! Fixture builders shared by unit tests, integration tests and benches.

use crate::artifact::{Artifact, Chunk, ChunkUnit, Code, Quote, Subtheme, Theme, Turn};
use crate::hierarchy::Hierarchy;
use crate::ids::{ArtifactId, ArtifactKind};
use crate::ledger::{ActionDraft, ActionType, Journal};

pub fn tid(n: u32) -> ArtifactId {
    ArtifactId::new(ArtifactKind::Turn, n)
}
pub fn chk(n: u32) -> ArtifactId {
    ArtifactId::new(ArtifactKind::Chunk, n)
}
pub fn qid(n: u32) -> ArtifactId {
    ArtifactId::new(ArtifactKind::Quote, n)
}
pub fn cid(n: u32) -> ArtifactId {
    ArtifactId::new(ArtifactKind::Code, n)
}
pub fn sid(n: u32) -> ArtifactId {
    ArtifactId::new(ArtifactKind::Subtheme, n)
}
pub fn thm(n: u32) -> ArtifactId {
    ArtifactId::new(ArtifactKind::Theme, n)
}

/// `n` words of filler, for labels and descriptions with exact word counts.
pub fn words(prefix: &str, n: usize) -> String {
    (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(" ")
}

/// Commits one background turn and chunk.
pub fn seed_source(j: &mut Journal) -> (ArtifactId, ArtifactId) {
    let text = "INT: Thank you for joining us today.";
    add_turn_and_chunk(j, text)
}

fn add_turn_and_chunk(j: &mut Journal, text: &str) -> (ArtifactId, ArtifactId) {
    let t = j.next_id(ArtifactKind::Turn);
    let c = j.next_id(ArtifactKind::Chunk);
    let index = j.hierarchy.turns().count();
    let turn = Turn {
        turn_id: t,
        doc_id: "doc".into(),
        speaker: "P1".into(),
        text: text.into(),
        index,
        start: 0,
        end: text.len(),
    };
    let chunk = Chunk {
        chunk_id: c,
        doc_id: "doc".into(),
        unit: ChunkUnit::Words,
        span: (index, index),
        start: 0,
        end: text.len(),
        overlap_with_prev: 0,
        text: text.into(),
    };
    j.commit(ActionDraft::new(
        "ingest",
        ActionType::Generate,
        vec![],
        vec![Artifact::Turn(turn), Artifact::Chunk(chunk)],
        "fixture source",
    ))
    .expect("fixture commit");
    (t, c)
}

/// Commits a turn, its chunk and a quote spanning the whole turn, in one entry.
pub fn add_quote(j: &mut Journal, text: &str) -> ArtifactId {
    let t = j.next_id(ArtifactKind::Turn);
    let c = j.next_id(ArtifactKind::Chunk);
    let q = j.next_id(ArtifactKind::Quote);
    let index = j.hierarchy.turns().count();
    let n = text.chars().count();
    let payload = vec![
        Artifact::Turn(Turn {
            turn_id: t,
            doc_id: "doc".into(),
            speaker: "P4006".into(),
            text: text.into(),
            index,
            start: 0,
            end: text.len(),
        }),
        Artifact::Chunk(Chunk {
            chunk_id: c,
            doc_id: "doc".into(),
            unit: ChunkUnit::Words,
            span: (index, index),
            start: 0,
            end: text.len(),
            overlap_with_prev: 0,
            text: text.into(),
        }),
        Artifact::Quote(Quote {
            quote_id: q,
            chunk_id: c,
            turn_id: t,
            char_span: (0, n),
            text: text.into(),
            deleted: false,
        }),
    ];
    j.commit(ActionDraft::new("coder", ActionType::Generate, vec![], payload, "fixture quote"))
        .expect("fixture commit");
    q
}

/// Commits a code grounded in `quotes`.
pub fn add_code(j: &mut Journal, label: &str, quotes: &[ArtifactId]) -> ArtifactId {
    let id = j.next_id(ArtifactKind::Code);
    let chunks: std::collections::BTreeSet<_> = quotes
        .iter()
        .map(|q| j.hierarchy.quote(*q).expect("quote exists").chunk_id)
        .collect();
    let code = Code {
        code_id: id,
        label: label.into(),
        description: words("desc", 45),
        frequency: chunks.len(),
        source_chunk_ids: chunks,
        quote_ids: quotes.iter().copied().collect(),
        deleted: false,
    };
    j.commit(ActionDraft::new("coder", ActionType::Generate, quotes.to_vec(), vec![Artifact::Code(code)], "fixture code"))
        .expect("fixture commit");
    id
}

pub fn add_subtheme(j: &mut Journal, label: &str, codes: &[ArtifactId]) -> ArtifactId {
    let id = j.next_id(ArtifactKind::Subtheme);
    let s = Subtheme {
        subtheme_id: id,
        label: label.into(),
        description: words("sdesc", 20),
        child_ids: codes.iter().copied().collect(),
        deleted: false,
    };
    j.commit(ActionDraft::new("synthesizer", ActionType::Generate, codes.to_vec(), vec![Artifact::Subtheme(s)], "fixture"))
        .expect("fixture commit");
    id
}

pub fn add_theme(j: &mut Journal, label: &str, subthemes: &[ArtifactId]) -> ArtifactId {
    let id = j.next_id(ArtifactKind::Theme);
    let t = Theme {
        theme_id: id,
        label: label.into(),
        description: words("tdesc", 65),
        child_ids: subthemes.iter().copied().collect(),
        deleted: false,
    };
    j.commit(ActionDraft::new("synthesizer", ActionType::Generate, subthemes.to_vec(), vec![Artifact::Theme(t)], "fixture"))
        .expect("fixture commit");
    id
}

/// Quotes q1..q8 (two per code), codes c1..c4, subthemes s1 = {c1, c2} and
/// s2 = {c3, c4}, one theme t1 = {s1, s2}.
pub fn toy_journal() -> Journal {
    let mut j = Journal::new();
    let mut codes = Vec::new();
    for i in 0..4 {
        let a = add_quote(&mut j, &format!("first piece of evidence for code {i} here"));
        let b = add_quote(&mut j, &format!("second piece of evidence for code {i} here"));
        codes.push(add_code(&mut j, &format!("fixture code label number {i} words"), &[a, b]));
    }
    let s1 = add_subtheme(&mut j, "first fixture subtheme", &codes[..2]);
    let s2 = add_subtheme(&mut j, "second fixture subtheme", &codes[2..]);
    add_theme(&mut j, "fixture theme about family care", &[s1, s2]);
    j
}

pub fn toy_hierarchy() -> Hierarchy {
    toy_journal().hierarchy
}

/// Backend replaying canned replies in order; the last one repeats.
pub struct ScriptedBackend(std::sync::Mutex<Vec<String>>);

impl crate::llm::ChatBackend for ScriptedBackend {
    fn id(&self) -> String {
        "scripted".into()
    }
    fn send(&self, _: &crate::llm::CompletionRequest) -> Result<crate::llm::BackendReply, crate::llm::BackendError> {
        let mut v = self.0.lock().expect("script");
        let text = if v.len() > 1 { v.remove(0) } else { v[0].clone() };
        Ok(crate::llm::BackendReply { text, usage: crate::llm::Usage::default() })
    }
}

pub fn scripted_gateway(replies: &[String]) -> crate::llm::Gateway {
    assert!(!replies.is_empty());
    crate::llm::Gateway::new(Box::new(ScriptedBackend(std::sync::Mutex::new(replies.to_vec()))))
}

/// A short interview with one interviewer and two participants.
pub const FIXTURE: &str = "INT: Can you tell me about the day of the diagnosis?
P1: The cardiologist called us in the evening and explained that the artery was in the wrong place. We were terrified about the surgery and did not sleep that night.
P1: My husband kept reading about the operation online, which made the fear worse.
INT: How did school respond?
P1: The school nurse had no idea what the diagnosis meant for sport. We had to bring letters from the hospital before they let him play football again.
P2: Our parents helped with the waiting and with school pickups every single week while we travelled to the hospital.
P1: We kept asking the team about the risks of surgery and nobody gave clear answers about whether waiting was safer.";

/// Journal holding the ingested [`FIXTURE`], its single chunk and its turns.
pub fn fixture_journal() -> (Journal, Chunk, Vec<Turn>) {
    let mut j = Journal::new();
    let doc = crate::ingest::Document::parse("fixture", FIXTURE, &mut j.ids).unwrap();
    let chunks = crate::ingest::chunk_words(&doc, 2048, 200, &mut j.ids).unwrap();
    crate::ingest::record_document(&mut j, &doc, &chunks).unwrap();
    (j, chunks[0].clone(), doc.turns)
}

