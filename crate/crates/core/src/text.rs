//! Small text utilities shared across the pipeline.

use sha2::{Digest, Sha256};

pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

pub fn sha256_hex(data: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(data.as_ref()))
}

/// Collapses every whitespace run to one space and trims the ends.
pub fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Label normal form used for deduplication: lowercase, single spaces, no
/// trailing punctuation.
pub fn normalize_label(s: &str) -> String {
    let collapsed = collapse_ws(&s.to_lowercase());
    collapsed
        .trim_end_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '!' | '?') || c.is_whitespace())
        .to_string()
}

/// Lowercase alphanumeric tokens (apostrophes kept inside words).
pub fn tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|t| t.trim_matches('\'').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "again", "all", "also", "am", "an", "and", "any", "are", "as", "at",
    "be", "because", "been", "before", "being", "but", "by", "can", "could", "did", "do", "does",
    "doing", "don't", "down", "during", "each", "even", "every", "few", "for", "from", "get",
    "got", "had", "has", "have", "having", "he", "her", "here", "him", "his", "how", "i", "i'm",
    "if", "in", "into", "is", "it", "it's", "its", "just", "know", "like", "me", "more", "most",
    "much", "my", "no", "not", "now", "of", "off", "on", "once", "one", "only", "or", "other",
    "our", "out", "over", "own", "really", "said", "same", "she", "so", "some", "still", "such",
    "than", "that", "that's", "the", "their", "them", "then", "there", "these", "they", "thing",
    "things", "think", "this", "those", "through", "to", "too", "under", "until", "up", "us",
    "very", "was", "we", "were", "what", "when", "where", "which", "while", "who", "why", "will",
    "with", "would", "yeah", "you", "your", "kind", "lot", "maybe", "going", "want", "well",
    "make", "made", "way", "you're", "we're", "they're", "there's", "didn't", "wasn't", "can't",
    "we've", "i've", "it'll", "let", "okay", "right", "sure", "mean", "something", "someone",
    "around", "back", "first", "time", "times", "lots", "came", "come", "went", "say", "says",
    "told", "tell", "felt", "feel", "feels", "look", "looked", "take", "took", "need", "needed",
];

pub fn is_stopword(t: &str) -> bool {
    STOPWORDS.contains(&t)
}

/// Tokens of at least four characters that are not stopwords.
pub fn content_tokens(s: &str) -> Vec<String> {
    tokens(s)
        .into_iter()
        .filter(|t| t.chars().count() >= 4 && !is_stopword(t) && !t.chars().all(|c| c.is_ascii_digit()))
        .collect()
}

/// Finds `needle` in `haystack` treating every whitespace run as equivalent.
/// Returns the byte span of the match in `haystack`; the slice starts and ends
/// on non-whitespace characters.
pub fn find_ws_insensitive(haystack: &str, needle: &str) -> Option<(usize, usize)> {
    let needle = collapse_ws(needle);
    if needle.is_empty() {
        return None;
    }
    let mut norm = String::with_capacity(haystack.len());
    let mut start_of = Vec::with_capacity(haystack.len());
    let mut end_of = Vec::with_capacity(haystack.len());
    let mut in_ws = false;
    for (i, c) in haystack.char_indices() {
        if c.is_whitespace() {
            if !in_ws {
                in_ws = true;
                norm.push(' ');
                start_of.push(i);
                end_of.push(i + c.len_utf8());
            }
            continue;
        }
        in_ws = false;
        norm.push(c);
        for _ in 0..c.len_utf8() {
            start_of.push(i);
            end_of.push(i + c.len_utf8());
        }
    }
    let at = norm.find(&needle)?;
    let last = at + needle.len() - 1;
    Some((start_of[at], end_of[last]))
}

/// Byte spans of sentences: a sentence ends after `.`, `!` or `?` (plus any
/// closing quote or bracket) when followed by whitespace, or at a newline.
/// Spans are trimmed and never empty.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0usize;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        let mut cut = None;
        if c == '\n' {
            cut = Some(pos);
        } else if matches!(c, '.' | '!' | '?') {
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j].1, '"' | '\'' | ')' | ']' | '\u{201d}') {
                j += 1;
            }
            if j >= chars.len() || chars[j].1.is_whitespace() {
                cut = Some(if j < chars.len() { chars[j].0 } else { text.len() });
                i = j.saturating_sub(1);
            }
        }
        if let Some(end) = cut {
            push_trimmed(text, start, end, &mut spans);
            start = end;
        }
        i += 1;
    }
    push_trimmed(text, start, text.len(), &mut spans);
    spans
}

fn push_trimmed(text: &str, start: usize, end: usize, out: &mut Vec<(usize, usize)>) {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trimmed = slice.trim();
    if !trimmed.is_empty() {
        out.push((start + lead, start + lead + trimmed.len()));
    }
}

/// Splits `text` into pieces of at most `max_chars` characters, preferring
/// sentence boundaries, then whitespace, then a hard cut. Returned spans are
/// byte ranges into `text`, trimmed of surrounding whitespace.
pub fn segment_long(text: &str, max_chars: usize) -> Vec<(usize, usize)> {
    assert!(max_chars > 0);
    let mut out = Vec::new();
    let mut cur: Option<(usize, usize)> = None;
    for (s, e) in sentence_spans(text) {
        let piece_fits = |a: usize, b: usize| char_len(&text[a..b]) <= max_chars;
        match cur {
            Some((cs, _)) if piece_fits(cs, e) => cur = Some((cs, e)),
            _ => {
                if let Some(c) = cur.take() {
                    out.push(c);
                }
                if piece_fits(s, e) {
                    cur = Some((s, e));
                } else {
                    out.extend(hard_split(text, s, e, max_chars));
                }
            }
        }
    }
    out.extend(cur);
    out
}

fn hard_split(text: &str, mut s: usize, e: usize, max_chars: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    while s < e {
        let rest = &text[s..e];
        if char_len(rest) <= max_chars {
            out.push((s, e));
            break;
        }
        let limit = rest.char_indices().nth(max_chars).map(|(i, _)| i).unwrap_or(rest.len());
        let window = &rest[..limit];
        let cut = window
            .char_indices()
            .rev()
            .find(|(i, c)| c.is_whitespace() && *i > 0)
            .map(|(i, _)| i)
            .unwrap_or(limit);
        let piece = &rest[..cut];
        let trimmed_end = piece.trim_end().len();
        out.push((s, s + trimmed_end));
        let next = &rest[cut..];
        s = s + cut + (next.len() - next.trim_start().len());
    }
    out
}

/// Converts a byte offset into a character offset.
pub fn byte_to_char(s: &str, byte: usize) -> usize {
    s[..byte].chars().count()
}

/// Slices by character offsets.
pub fn slice_chars(s: &str, start: usize, end: usize) -> &str {
    let b0 = s.char_indices().nth(start).map(|(i, _)| i).unwrap_or(s.len());
    let b1 = s.char_indices().nth(end).map(|(i, _)| i).unwrap_or(s.len());
    &s[b0..b1]
}
