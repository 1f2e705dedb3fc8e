//! Transcript ingestion: turn parsing, chunking and the train/test split.
//!
//! A line of the form `SPEAKER: text`, where the speaker is a run of at most
//! five words before the first colon, opens a new turn. Any other line
//! continues the current turn; speakerless leading text becomes one turn
//! attributed to `UNKNOWN`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::{Artifact, Chunk, ChunkUnit, Turn};
use crate::error::{IngestError, LedgerError};
use crate::ledger::{ActionDraft, ActionType, Journal};
use crate::ids::{ArtifactKind, IdAllocator};
use crate::rng;
use crate::text::sha256_hex;

pub const UNKNOWN_SPEAKER: &str = "UNKNOWN";
const MAX_SPEAKER_WORDS: usize = 5;

/// A parsed transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub raw: String,
    pub turns: Vec<Turn>,
}

impl Document {
    pub fn parse(doc_id: &str, raw: &str, ids: &mut IdAllocator) -> Result<Self, IngestError> {
        let turns = parse_turns(raw, doc_id, ids)?;
        Ok(Self { doc_id: doc_id.to_string(), raw: raw.to_string(), turns })
    }

    pub fn fingerprint(&self) -> String {
        sha256_hex(self.raw.as_bytes())
    }
}

pub(crate) fn speaker_of(line: &str) -> Option<(&str, usize)> {
    let colon = line.find(':')?;
    let after = &line[colon + 1..];
    if !(after.is_empty() || after.starts_with(char::is_whitespace)) {
        return None;
    }
    let candidate = line[..colon].trim();
    let n_words = candidate.split_whitespace().count();
    if n_words == 0 || n_words > MAX_SPEAKER_WORDS {
        return None;
    }
    if !candidate.chars().any(char::is_alphanumeric)
        || candidate.contains(['.', '!', '?', '"', ',', ';'])
    {
        return None;
    }
    Some((candidate, colon + 1))
}

struct OpenTurn {
    speaker: String,
    start: usize,
    end: usize,
}

pub fn parse_turns(raw: &str, doc_id: &str, ids: &mut IdAllocator) -> Result<Vec<Turn>, IngestError> {
    if raw.trim().is_empty() {
        return Err(IngestError::EmptyDocument(doc_id.to_string()));
    }
    let mut open: Vec<OpenTurn> = Vec::new();
    let mut offset = 0usize;
    for piece in raw.split_inclusive('\n') {
        let line_start = offset;
        offset += piece.len();
        let line = piece.trim_end_matches(['\n', '\r']);
        let content_end = line_start + line.trim_end().len();
        if let Some((speaker, after_colon)) = speaker_of(line) {
            let rest = &line[after_colon..];
            let lead = rest.len() - rest.trim_start().len();
            let start = line_start + after_colon + lead;
            open.push(OpenTurn { speaker: speaker.to_string(), start, end: start.max(content_end) });
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        match open.last_mut() {
            Some(t) => t.end = content_end,
            None => {
                let lead = line.len() - line.trim_start().len();
                open.push(OpenTurn {
                    speaker: UNKNOWN_SPEAKER.to_string(),
                    start: line_start + lead,
                    end: content_end,
                });
            }
        }
    }
    let turns: Vec<Turn> = open
        .into_iter()
        .filter(|t| t.end > t.start && !raw[t.start..t.end].trim().is_empty())
        .enumerate()
        .map(|(index, t)| Turn {
            turn_id: ids.next(ArtifactKind::Turn),
            doc_id: doc_id.to_string(),
            speaker: t.speaker,
            text: raw[t.start..t.end].to_string(),
            index,
            start: t.start,
            end: t.end,
        })
        .collect();
    if turns.is_empty() {
        return Err(IngestError::EmptyDocument(doc_id.to_string()));
    }
    Ok(turns)
}

/// Byte offsets where each turn's line begins (the natural chunk boundaries).
fn turn_line_starts(doc: &Document) -> Vec<usize> {
    doc.turns
        .iter()
        .map(|t| doc.raw[..t.start].rfind('\n').map(|i| i + 1).unwrap_or(0))
        .collect()
}

fn turn_span(doc: &Document, line_starts: &[usize], start: usize, end: usize) -> (usize, usize) {
    let touching: Vec<usize> = doc
        .turns
        .iter()
        .zip(line_starts)
        .filter(|(t, ls)| **ls < end && t.end > start)
        .map(|(t, _)| t.index)
        .collect();
    match (touching.first(), touching.last()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => {
            let i = line_starts.iter().rposition(|ls| *ls <= start).unwrap_or(0);
            (i, i)
        }
    }
}

/// Character-window chunking. Each chunk holds at most `max_chars`
/// characters; every chunk after the first starts with the last
/// `overlap_chars` characters of its predecessor. Breaks prefer the latest
/// turn boundary, then the latest sentence end, then a hard cut.
pub fn chunk_chars(
    doc: &Document,
    max_chars: usize,
    overlap_chars: usize,
    ids: &mut IdAllocator,
) -> Result<Vec<Chunk>, IngestError> {
    if max_chars == 0 || overlap_chars >= max_chars {
        return Err(IngestError::InvalidConfig(format!(
            "max_chars ({max_chars}) must exceed overlap_chars ({overlap_chars})"
        )));
    }
    let raw = &doc.raw;
    let mut byte_at: Vec<usize> = raw.char_indices().map(|(i, _)| i).collect();
    let n = byte_at.len();
    byte_at.push(raw.len());
    let char_at = |byte: usize| byte_at.partition_point(|b| *b < byte);

    let line_starts = turn_line_starts(doc);
    let boundaries: Vec<usize> = line_starts.iter().map(|b| char_at(*b)).filter(|c| *c > 0).collect();
    let sentence_breaks = sentence_break_chars(raw);

    let mut chunks = Vec::new();
    let mut prev_end = 0usize;
    while prev_end < n {
        let overlap = if chunks.is_empty() { 0 } else { overlap_chars.min(prev_end) };
        let start = prev_end - overlap;
        let limit = start + max_chars;
        let end = if limit >= n {
            n
        } else {
            latest_in(&boundaries, prev_end, limit)
                .or_else(|| latest_in(&sentence_breaks, prev_end, limit))
                .unwrap_or(limit)
        };
        let (b0, b1) = (byte_at[start], byte_at[end]);
        chunks.push(Chunk {
            chunk_id: ids.next(ArtifactKind::Chunk),
            doc_id: doc.doc_id.clone(),
            unit: ChunkUnit::Chars,
            span: turn_span(doc, &line_starts, b0, b1),
            start: b0,
            end: b1,
            overlap_with_prev: overlap,
            text: raw[b0..b1].to_string(),
        });
        prev_end = end;
    }
    Ok(chunks)
}

/// Largest candidate in `(after, upto]`.
fn latest_in(sorted: &[usize], after: usize, upto: usize) -> Option<usize> {
    let idx = sorted.partition_point(|c| *c <= upto);
    sorted[..idx].last().copied().filter(|c| *c > after)
}

/// Character positions just past a sentence terminator and its trailing
/// whitespace.
fn sentence_break_chars(raw: &str) -> Vec<usize> {
    let chars: Vec<char> = raw.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i], '.' | '!' | '?') && i + 1 < chars.len() && chars[i + 1].is_whitespace() {
            let mut j = i + 1;
            while j < chars.len() && chars[j].is_whitespace() {
                j += 1;
            }
            if j < chars.len() {
                out.push(j);
            }
            i = j;
            continue;
        }
        i += 1;
    }
    out
}

/// Word-window chunking: windows of exactly `words` whitespace tokens (the
/// last may be shorter), advancing by `words - overlap`.
pub fn chunk_words(
    doc: &Document,
    words: usize,
    overlap: usize,
    ids: &mut IdAllocator,
) -> Result<Vec<Chunk>, IngestError> {
    if words == 0 || overlap >= words {
        return Err(IngestError::InvalidConfig(format!(
            "words ({words}) must exceed overlap ({overlap})"
        )));
    }
    let raw = &doc.raw;
    let mut tokens = Vec::new();
    let mut cur: Option<usize> = None;
    for (i, c) in raw.char_indices() {
        match (c.is_whitespace(), cur) {
            (false, None) => cur = Some(i),
            (true, Some(s)) => {
                tokens.push((s, i));
                cur = None;
            }
            _ => {}
        }
    }
    if let Some(s) = cur {
        tokens.push((s, raw.len()));
    }
    if tokens.is_empty() {
        return Err(IngestError::EmptyDocument(doc.doc_id.clone()));
    }
    let line_starts = turn_line_starts(doc);
    let step = words - overlap;
    let mut chunks = Vec::new();
    let mut s = 0usize;
    loop {
        let e = (s + words).min(tokens.len());
        let (b0, b1) = (tokens[s].0, tokens[e - 1].1);
        chunks.push(Chunk {
            chunk_id: ids.next(ArtifactKind::Chunk),
            doc_id: doc.doc_id.clone(),
            unit: ChunkUnit::Words,
            span: turn_span(doc, &line_starts, b0, b1),
            start: b0,
            end: b1,
            overlap_with_prev: if s == 0 { 0 } else { overlap },
            text: raw[b0..b1].to_string(),
        });
        if e == tokens.len() {
            break;
        }
        s += step;
    }
    Ok(chunks)
}

/// Deterministic split: shuffle with the `split` sub-stream of `seed`, take
/// the first `ceil(ratio * n)` as train. Both halves are returned in input
/// order.
pub fn split_train_test<T: Clone>(items: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), IngestError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(IngestError::InvalidConfig(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let n = items.len();
    if n < 2 {
        return Err(IngestError::TooFewChunks(n));
    }
    let n_train = ((ratio * n as f64) - 1e-9).ceil().clamp(1.0, (n - 1) as f64) as usize;
    let perm = rng::permutation(&mut rng::substream(seed, "split"), n);
    let mut is_train = vec![false; n];
    for &i in &perm[..n_train] {
        is_train[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, item) in items.iter().enumerate() {
        if is_train[i] {
            train.push(item.clone());
        } else {
            test.push(item.clone());
        }
    }
    Ok((train, test))
}

/// One line of the chunk manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkManifestEntry {
    pub chunk_id: crate::ids::ArtifactId,
    pub doc_id: String,
    pub unit: ChunkUnit,
    pub start: usize,
    pub end: usize,
    pub overlap_with_prev: usize,
    pub sha256: String,
}

pub fn chunk_manifest(chunks: &[Chunk]) -> Vec<ChunkManifestEntry> {
    chunks
        .iter()
        .map(|c| ChunkManifestEntry {
            chunk_id: c.chunk_id,
            doc_id: c.doc_id.clone(),
            unit: c.unit,
            start: c.start,
            end: c.end,
            overlap_with_prev: c.overlap_with_prev,
            sha256: sha256_hex(c.text.as_bytes()),
        })
        .collect()
}

/// Raw documents read from disk, in file-name order.
#[derive(Debug, Clone)]
pub struct RawDocument {
    pub doc_id: String,
    pub text: String,
    pub sha256: String,
}

/// Reads a `.txt` file or every `.txt` file in a directory.
pub fn load_corpus(path: &Path) -> Result<Vec<RawDocument>, IngestError> {
    let io = |e: std::io::Error| IngestError::Io(format!("{}: {e}", path.display()));
    let mut files = Vec::new();
    if path.is_dir() {
        for entry in std::fs::read_dir(path).map_err(io)? {
            let p = entry.map_err(io)?.path();
            if p.extension().is_some_and(|e| e == "txt") {
                files.push(p);
            }
        }
        files.sort();
    } else if path.is_file() {
        files.push(path.to_path_buf());
    } else {
        return Err(IngestError::Io(format!("{}: no such file or directory", path.display())));
    }
    if files.is_empty() {
        return Err(IngestError::Io(format!("{}: no .txt transcripts found", path.display())));
    }
    files
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).map_err(io)?;
            let doc_id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(RawDocument { sha256: sha256_hex(text.as_bytes()), doc_id, text })
        })
        .collect()
}

/// Records a parsed document's turns and its chunks as one generate entry.
pub fn record_document(journal: &mut Journal, doc: &Document, chunks: &[Chunk]) -> Result<u64, LedgerError> {
    let mut payload: Vec<Artifact> = doc.turns.iter().cloned().map(Artifact::Turn).collect();
    payload.extend(chunks.iter().cloned().map(Artifact::Chunk));
    let justification = format!(
        "ingested {} (sha256 {}): {} turns, {} chunks",
        doc.doc_id,
        &doc.fingerprint()[..12],
        doc.turns.len(),
        chunks.len()
    );
    journal.commit(ActionDraft::new("ingest", ActionType::Generate, vec![], payload, justification))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(raw: &str) -> Document {
        Document::parse("d", raw, &mut IdAllocator::new()).unwrap()
    }

    #[test]
    fn two_labeled_lines() {
        let d = doc("DOC: Hello\nP1: Hi there");
        let speakers: Vec<_> = d.turns.iter().map(|t| t.speaker.as_str()).collect();
        assert_eq!(speakers, ["DOC", "P1"]);
        assert_eq!(d.turns[0].text, "Hello");
        assert_eq!(d.turns[1].text, "Hi there");
    }

    #[test]
    fn unlabeled_prose_is_one_unknown_turn() {
        let d = doc("just prose\nmore prose");
        assert_eq!(d.turns.len(), 1);
        assert_eq!(d.turns[0].speaker, UNKNOWN_SPEAKER);
        assert_eq!(d.turns[0].text, "just prose\nmore prose");
    }

    #[test]
    fn continuation_lines_join_the_open_turn() {
        let d = doc("P1: a\ncontinued line\nP2: b");
        assert_eq!(d.turns.len(), 2);
        assert_eq!(d.turns[0].text, "a\ncontinued line");
        assert_eq!(d.turns[1].text, "b");
        for t in &d.turns {
            assert_eq!(&d.raw[t.start..t.end], t.text);
        }
    }

    #[test]
    fn speaker_grammar_edges() {
        let d = doc("intro line\nDr Jane Smith: hello\nThis has way too many words before: colon\nAt 10:30 we met\nP2:\n\nP3: x");
        let speakers: Vec<_> = d.turns.iter().map(|t| t.speaker.as_str()).collect();
        assert_eq!(speakers, ["UNKNOWN", "Dr Jane Smith", "P3"]);
        assert!(d.turns[1].text.contains("At 10:30 we met"));
        let idx: Vec<_> = d.turns.iter().map(|t| t.index).collect();
        assert_eq!(idx, [0, 1, 2]);
    }

    #[test]
    fn empty_document_is_rejected() {
        assert!(matches!(
            parse_turns(" \n\t\n", "e", &mut IdAllocator::new()),
            Err(IngestError::EmptyDocument(_))
        ));
    }

    #[test]
    fn short_doc_is_one_char_chunk() {
        let raw = format!("P1: {}", "word ".repeat(599)).trim_end().to_string();
        assert!(raw.chars().count() < 8000);
        let d = doc(&raw);
        let chunks = chunk_chars(&d, 8000, 400, &mut IdAllocator::new()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, raw);
    }

    #[test]
    fn non_progressing_window_rejected() {
        let d = doc("P1: x");
        assert!(matches!(
            chunk_chars(&d, 8000, 8000, &mut IdAllocator::new()),
            Err(IngestError::InvalidConfig(_))
        ));
        assert!(matches!(
            chunk_words(&d, 200, 200, &mut IdAllocator::new()),
            Err(IngestError::InvalidConfig(_))
        ));
    }

    #[test]
    fn single_long_turn_breaks_at_sentences() {
        let body = "This is one sentence of moderate length. ".repeat(30);
        let d = doc(&format!("P1: {}", body.trim_end()));
        let chunks = chunk_chars(&d, 300, 20, &mut IdAllocator::new()).unwrap();
        assert!(chunks.len() > 1);
        for c in &chunks[..chunks.len() - 1] {
            assert!(c.text.trim_end().ends_with('.'), "{:?}", c.text);
        }
    }

    #[test]
    fn word_chunk_counts() {
        let mk = |n: usize| doc(&(0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" "));
        let one = chunk_words(&mk(2048), 2048, 200, &mut IdAllocator::new()).unwrap();
        assert_eq!(one.len(), 1);
        let short = chunk_words(&mk(100), 2048, 200, &mut IdAllocator::new()).unwrap();
        assert_eq!(short.len(), 1);
        assert_eq!(short[0].text.split_whitespace().count(), 100);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<u32> = (0..10).collect();
        let (tr, te) = split_train_test(&items, 0.8, 42).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert_eq!(split_train_test(&items, 0.8, 42).unwrap(), (tr, te));
        assert!(matches!(split_train_test(&items[..1], 0.8, 42), Err(IngestError::TooFewChunks(1))));
        assert!(split_train_test(&items, 1.0, 42).is_err());
    }

    #[test]
    fn manifest_hashes_chunk_text() {
        let d = doc("P1: hello there\nP2: general kenobi");
        let chunks = chunk_chars(&d, 8000, 400, &mut IdAllocator::new()).unwrap();
        let m = chunk_manifest(&chunks);
        assert_eq!(m[0].sha256, sha256_hex(chunks[0].text.as_bytes()));
        assert_eq!((m[0].start, m[0].end), (0, d.raw.len()));
    }
}
