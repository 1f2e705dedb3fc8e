//! Deterministic offline backend.
//!
//! Every response is a pure function of `(role, prompt, seed_hint)`. The mock
//! reads the delimited sections of the rendered templates and synthesises a
//! payload that parses under the role's schema: code labels are built from a
//! fixed set of label templates filled with the chunk's most frequent content
//! words, and quotes are sentences copied verbatim from the chunk.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::prompts::section;
use super::structured::{RawCode, RawGroup};
use super::{BackendError, BackendReply, ChatBackend, CompletionRequest, Role, Usage};
use crate::ingest::speaker_of;
use crate::rng::below;
use crate::text::{char_len, content_tokens, sentence_spans, sha256_hex, tokens, word_count};

pub const MOCK_BACKEND_ID: &str = "mock-v1";

/// Label templates, grouped by frame. `{a}` and `{b}` take chunk words.
/// Several templates are token supersets of another in the same frame, and
/// the two-slot coping template yields same-token-set reorderings.
pub const LABEL_TEMPLATES: &[(usize, &str)] = &[
    (0, "Parents describe fear and worry about {a}"),
    (0, "Parents describe fear and worry about {a} after the diagnosis"),
    (0, "Emotional strain for families connected to {a}"),
    (1, "Communication with clinicians about {a}"),
    (1, "Communication with clinicians about {a} and its risks"),
    (1, "Seeking clear information regarding {a} from the team"),
    (2, "Adjusting family routines around {a}"),
    (2, "Adjusting family routines around {a} at home and in the classroom"),
    (2, "Balancing {a} with everyday family responsibilities"),
    (3, "Support from others while managing {a}"),
    (3, "Support from others while managing {a} and {b}"),
    (3, "Peer and community support around {a}"),
    (4, "Making treatment decisions about {a}"),
    (4, "Making treatment decisions about {a} with limited evidence"),
    (4, "Weighing the risks of {a} against benefits"),
    (5, "Family coping shaped by {a} and {b}"),
    (5, "Hope and resilience while facing {a}"),
    (5, "Finding meaning in {a} over time"),
];

const FRAME_DESCRIPTIONS: [&str; 6] = [
    "Captures how caregivers voice fear and worry when talking about {a}. Relevant passages mention {w} and show how these feelings shape the way the family understands the condition. Includes anxiety, sleeplessness, guilt or relief tied to {a}. Excludes neutral factual statements that carry no emotional weight for the speaker.",
    "Covers exchanges between families and clinicians concerning {a}, including how explanations were given, understood or missed. Passages often refer to {w}. Includes requests for clarification, conflicting messages and the quality of information received about {a}. Excludes conversations that do not involve the care team.",
    "Describes practical changes the household makes because of {a}. Passages refer to {w} and to rearranged schedules, activities and responsibilities. Includes restrictions on sport or school life and new daily routines linked to {a}. Excludes emotional reactions that are not tied to concrete adjustments.",
    "Refers to help received from relatives, friends, other parents or community groups while dealing with {a}. Passages mention {w}. Includes emotional, informational and practical assistance as well as its absence. Excludes support that comes only from the clinical team, which belongs to communication codes.",
    "Captures how families and clinicians reach choices about {a}. Passages mention {w} and describe weighing uncertain risks, second opinions and timing. Includes disagreement, deferral and shared decision making around {a}. Excludes descriptions of care that involve no choice between alternatives.",
    "Describes how families make sense of {a} and sustain hope over time. Passages refer to {w}. Includes acceptance, reframing, spiritual meaning and growth that participants link to {a}. Excludes short-term reactions that do not speak to longer-term adaptation.",
];

/// Theme label and description per frame; the last entry is the catch-all.
pub const FRAME_THEMES: [(&str, &str); 7] = [
    (
        "Emotional and psychological impacts on families",
        "This theme brings together the emotional consequences that participants associate with the condition and its treatment. It spans acute fear at diagnosis, persistent worry during waiting periods and the strain these feelings place on relationships within the household. Participants describe how uncertainty about the future colours everyday moments and how emotional burden is carried unevenly between family members over the course of care.",
    ),
    (
        "Communication and information exchange with the care team",
        "This theme describes how information moves between families and clinicians. Participants reflect on explanations that helped them understand the condition, on messages that conflicted or arrived too late and on the effort needed to obtain clear answers. The theme also covers how trust in the care team grows or erodes depending on the tone, timing and consistency of communication across appointments and hospital stays.",
    ),
    (
        "Adapting daily life and family routines",
        "This theme captures the practical reorganisation of everyday life that follows a diagnosis. Participants describe restrictions on sport and play, negotiations with schools, changes to work schedules and new routines around medication and appointments. The theme highlights how families balance caution with a wish for normality and how these adjustments evolve as children grow older and gain more independence over time.",
    ),
    (
        "Sources of support beyond the clinical team",
        "This theme gathers accounts of help that families receive outside formal care. Participants describe relatives who step in, friends who listen, other parents who share experience and online or local groups that offer advice. The theme also records the absence of support, including isolation and the sense that others do not understand what the family is going through during long periods of uncertainty.",
    ),
    (
        "Navigating uncertain treatment decisions and risks",
        "This theme describes how families and clinicians arrive at treatment choices when evidence is limited. Participants talk about weighing surgical and non-surgical options, seeking second opinions and living with the possibility that no choice is free of risk. The theme includes shared decision making, disagreement between experts and the emotional weight of being asked to decide on behalf of a child.",
    ),
    (
        "Coping, hope and meaning over time",
        "This theme captures longer-term adaptation to living with the condition. Participants describe strategies for coping, sources of hope and the meaning they come to attach to the experience. The theme covers acceptance, reframing of risk, personal growth and faith, and it shows how families move from crisis towards a new sense of normal life while still remaining alert to future changes.",
    ),
    (
        "Other experiences described by participants and families",
        "This theme collects subthemes whose codes do not fit the main patterns of meaning identified elsewhere in the analysis. It keeps these experiences visible so that they can be examined during review rather than lost. Participants describe varied concerns and observations that may later be merged into other themes, split into more specific groupings or retained as a distinct strand of the overall account.",
    ),
];

const LABEL_PAD: &str = "as described by participants";
const DESCRIPTION_PAD: &str = "The code applies to passages where participants describe this experience in their own words with enough detail to show its personal significance.";
const THEME_PAD: &str = "Participants return to this pattern repeatedly and describe it in their own words across several interviews.";
const TOP_WORDS: usize = 8;

fn template_vocab() -> BTreeSet<String> {
    LABEL_TEMPLATES.iter().flat_map(|(_, t)| tokens(t)).filter(|t| t != "a" && t != "b").collect()
}

/// Content tokens of a label that do not come from a label template.
pub fn slot_words(label: &str) -> Vec<String> {
    let vocab = template_vocab();
    content_tokens(label).into_iter().filter(|t| !vocab.contains(t)).collect()
}

/// Frame index of a label by template-word votes, or `None`.
pub fn frame_of_label(label: &str) -> Option<usize> {
    let toks: BTreeSet<String> = tokens(label).into_iter().collect();
    let mut best: Option<(usize, usize)> = None;
    for frame in 0..6 {
        let mut frame_words: BTreeSet<String> = BTreeSet::new();
        for (f, t) in LABEL_TEMPLATES {
            if *f == frame {
                frame_words.extend(content_tokens(t));
            }
        }
        for (f, t) in LABEL_TEMPLATES {
            if *f != frame {
                for w in content_tokens(t) {
                    frame_words.remove(&w);
                }
            }
        }
        let votes = toks.iter().filter(|t| frame_words.contains(*t)).count();
        if votes > 0 && best.is_none_or(|(_, v)| votes > v) {
            best = Some((frame, votes));
        }
    }
    best.map(|(f, _)| f)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

impl MockBackend {
    pub fn new() -> Self {
        Self
    }
}

impl ChatBackend for MockBackend {
    fn id(&self) -> String {
        MOCK_BACKEND_ID.to_string()
    }

    fn send(&self, request: &CompletionRequest) -> Result<BackendReply, BackendError> {
        let text = respond(request);
        let usage = Usage { prompt_tokens: word_count(&request.prompt) as u64, completion_tokens: word_count(&text) as u64 };
        Ok(BackendReply { text, usage })
    }
}

pub fn respond(request: &CompletionRequest) -> String {
    let p = &request.prompt;
    let mut rng = ChaCha8Rng::seed_from_u64(request_seed(request));
    let value = match request.role {
        Role::Coder if p.contains("<<<DRAFTS") => repair_codes(p),
        Role::Coder => open_code(p, &mut rng),
        Role::RelationClassifier => relation(p),
        Role::SubthemeSynthesizer => subthemes(p),
        Role::ThemeSynthesizer if p.contains("<<<DRAFTS") => repair_themes(p),
        Role::ThemeSynthesizer => themes(p),
        Role::Reviewer => review(p),
        Role::DeductiveCoder => deductive(p),
        Role::JudgeFitness => json!({ "score": judge_fitness(p) }),
        Role::JudgeCoverage => json!({ "score": judge_coverage(p) }),
    };
    value.to_string()
}

fn request_seed(r: &CompletionRequest) -> u64 {
    let h = sha256_hex(format!("{}|{:?}|{}", r.role.as_str(), r.seed_hint, r.prompt));
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

fn number_after(p: &str, marker: &str) -> Option<usize> {
    let i = p.find(marker)? + marker.len();
    let digits: String = p[i..].chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

fn ranked_words(text: &str) -> Vec<String> {
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for t in content_tokens(text) {
        *freq.entry(t).or_default() += 1;
    }
    let mut v: Vec<(String, usize)> = freq.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.into_iter().map(|(w, _)| w).collect()
}

/// Sentences of the chunk with any leading speaker label removed.
fn quotable_sentences(text: &str, min_chars: usize) -> Vec<String> {
    sentence_spans(text)
        .into_iter()
        .map(|(s, e)| {
            let sent = &text[s..e];
            match speaker_of(sent) {
                Some((_, after)) => sent[after..].trim(),
                None => sent.trim(),
            }
        })
        .filter(|s| char_len(s) >= min_chars.max(1) && char_len(s) <= 600)
        .map(str::to_string)
        .collect()
}

fn open_code(p: &str, rng: &mut ChaCha8Rng) -> Value {
    let Some((_, text)) = section(p, "EXCERPT") else { return json!({ "codes": [] }) };
    let n = number_after(p, "generate exactly ").unwrap_or(20);
    let min_q = number_after(p, "at least ").unwrap_or(20);
    let top: Vec<String> = ranked_words(text).into_iter().take(TOP_WORDS).collect();
    let sentences = quotable_sentences(text, min_q);
    let mut codes = Vec::new();
    let mut seen = BTreeSet::new();
    let pick_word = |rng: &mut ChaCha8Rng| -> String {
        let k = top.len() as u64;
        let r = below(rng, k).min(below(rng, k));
        top[r as usize].clone()
    };
    let mut attempts = 0;
    while codes.len() < n && attempts < 2000 && !top.is_empty() {
        attempts += 1;
        let (frame, tpl) = LABEL_TEMPLATES[below(rng, LABEL_TEMPLATES.len() as u64) as usize];
        let a = pick_word(rng);
        let b = pick_word(rng);
        if tpl.contains("{b}") && a == b {
            continue;
        }
        let label = tpl.replace("{a}", &a).replace("{b}", &b);
        if !seen.insert(label.to_lowercase()) {
            continue;
        }
        let others: Vec<&str> = top.iter().filter(|w| **w != a).take(3).map(String::as_str).collect();
        let description = FRAME_DESCRIPTIONS[frame].replace("{a}", &a).replace("{w}", &others.join(" and "));
        let mut quotes: Vec<String> = sentences.iter().filter(|s| tokens(s).contains(&a)).cloned().collect();
        if quotes.is_empty() && !sentences.is_empty() {
            quotes.push(sentences[below(rng, sentences.len() as u64) as usize].clone());
        }
        if quotes.len() > 2 {
            let i = below(rng, quotes.len() as u64) as usize;
            let j = (i + 1 + below(rng, quotes.len() as u64 - 1) as usize) % quotes.len();
            quotes = vec![quotes[i].clone(), quotes[j].clone()];
        }
        // Roughly one chunk in ten carries a too-short label so the repair path runs.
        let label = if codes.is_empty() && below(rng, 10) == 0 { format!("{a} related family concerns") } else { label };
        codes.push(json!({ "label": label, "description": description, "quotes": quotes }));
    }
    let mut i = 0;
    while codes.len() < n {
        i += 1;
        let label = format!("Further participant perspectives recorded in excerpt part {i}");
        if !seen.insert(label.to_lowercase()) {
            continue;
        }
        let description = FRAME_DESCRIPTIONS[5].replace("{a}", "the excerpt").replace("{w}", "the wider conversation");
        let quotes: Vec<String> = sentences.first().cloned().into_iter().collect();
        codes.push(json!({ "label": label, "description": description, "quotes": quotes }));
    }
    json!({ "codes": codes })
}

fn fit_words(text: &str, min: usize, max: usize, pad: &str) -> String {
    let mut words: Vec<&str> = text.split_whitespace().collect();
    while words.len() < min {
        words.extend(pad.split_whitespace());
    }
    words.truncate(max);
    words.join(" ")
}

fn repair_codes(p: &str) -> Value {
    let body = section(p, "DRAFTS").map(|(_, b)| b).unwrap_or("[]");
    let drafts: Vec<RawCode> = serde_json::from_str(body).unwrap_or_default();
    let fixed: Vec<RawCode> = drafts
        .into_iter()
        .map(|d| RawCode {
            label: fit_words(&d.label, 5, 12, LABEL_PAD),
            description: fit_words(&d.description, 40, 80, DESCRIPTION_PAD),
            quotes: d.quotes,
        })
        .collect();
    json!({ "codes": fixed })
}

fn repair_themes(p: &str) -> Value {
    let body = section(p, "DRAFTS").map(|(_, b)| b).unwrap_or("[]");
    let drafts: Vec<RawGroup> = serde_json::from_str(body).unwrap_or_default();
    let fixed: Vec<Value> = drafts
        .into_iter()
        .map(|d| {
            json!({
                "label": fit_words(&d.label, 5, 10, LABEL_PAD),
                "description": fit_words(&d.description, 60, 80, THEME_PAD),
                "subtheme_ids": d.members,
            })
        })
        .collect();
    json!({ "themes": fixed })
}

fn line_value<'a>(body: &'a str, key: &str) -> &'a str {
    body.lines().find_map(|l| l.strip_prefix(key)).map(str::trim).unwrap_or("")
}

fn relation(p: &str) -> Value {
    let body = section(p, "PAIR").map(|(_, b)| b).unwrap_or("");
    let a: BTreeSet<String> = tokens(line_value(body, "CODE A:")).into_iter().collect();
    let b: BTreeSet<String> = tokens(line_value(body, "CODE B:")).into_iter().collect();
    let kind = if a == b {
        "equivalent"
    } else if a.is_superset(&b) {
        "subordinate"
    } else if b.is_superset(&a) {
        "reverse"
    } else {
        "orthogonal"
    };
    json!({ "relation": kind })
}

/// `id | label | ...` menu lines.
fn menu(body: &str) -> Vec<(String, String, String)> {
    body.lines()
        .filter_map(|l| {
            let mut parts = l.splitn(3, " | ");
            let id = parts.next()?.trim();
            let label = parts.next()?.trim();
            let rest = parts.next().unwrap_or("").trim();
            (!id.is_empty()).then(|| (id.to_string(), label.to_string(), rest.to_string()))
        })
        .collect()
}

fn subthemes(p: &str) -> Value {
    let body = section(p, "CODES").map(|(_, b)| b).unwrap_or("");
    let items = menu(body);
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for (_, label, _) in &items {
        for t in content_tokens(label).into_iter().collect::<BTreeSet<_>>() {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut groups: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    for (id, label, _) in &items {
        let key = slot_words(label).into_iter().next().or_else(|| {
            content_tokens(label).into_iter().min_by(|x, y| df[x].cmp(&df[y]).then_with(|| x.cmp(y)))
        });
        let key = key.unwrap_or_else(|| "general".to_string());
        groups.entry(key).or_default().push((id.clone(), label.clone()));
    }
    let out: Vec<Value> = groups
        .into_iter()
        .map(|(key, members)| {
            let examples: Vec<String> = members.iter().take(2).map(|(_, l)| l.to_lowercase()).collect();
            json!({
                "label": format!("Participant experiences centred on {key}"),
                "description": format!("Codes that share a focus on {key}, for example {}.", examples.join("; ")),
                "code_ids": members.into_iter().map(|(id, _)| id).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({ "subthemes": out })
}

fn themes(p: &str) -> Value {
    let body = section(p, "SUBTHEMES").map(|(_, b)| b).unwrap_or("");
    let mut by_frame: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (id, _, rest) in menu(body) {
        let member_labels = rest.strip_prefix("codes:").unwrap_or(&rest);
        let mut votes = [0usize; 6];
        for l in member_labels.split(';') {
            if let Some(f) = frame_of_label(l) {
                votes[f] += 1;
            }
        }
        let max = *votes.iter().max().unwrap_or(&0);
        let frame = if max == 0 { 6 } else { votes.iter().position(|v| *v == max).unwrap_or(6) };
        by_frame.entry(frame).or_default().push(id);
    }
    let out: Vec<Value> = by_frame
        .into_iter()
        .map(|(f, ids)| json!({ "label": FRAME_THEMES[f].0, "description": FRAME_THEMES[f].1, "subtheme_ids": ids }))
        .collect();
    json!({ "themes": out })
}

fn outline_children(body: &str) -> BTreeMap<String, (String, Vec<String>)> {
    menu(body)
        .into_iter()
        .map(|(id, label, rest)| {
            let kids = rest.strip_prefix("children:").unwrap_or("").split_whitespace().map(str::to_string).collect();
            (id, (label, kids))
        })
        .collect()
}

fn review(p: &str) -> Value {
    let outline = outline_children(section(p, "HIERARCHY").map(|(_, b)| b).unwrap_or(""));
    let diagnostics = section(p, "DIAGNOSTICS").map(|(_, b)| b).unwrap_or("");
    let mut edits = Vec::new();
    for line in diagnostics.lines() {
        let mut words = line.split_whitespace();
        match words.next() {
            Some("DUPLICATE") => {
                let targets: Vec<&str> = words.take(2).collect();
                if targets.len() == 2 {
                    edits.push(json!({ "action": "merge", "targets": targets, "justification": "near-duplicate concepts" }));
                }
            }
            Some("OVERSIZED") => {
                let Some(target) = words.next() else { continue };
                let Some((label, kids)) = outline.get(target) else { continue };
                if kids.len() < 2 {
                    continue;
                }
                let (first, second) = kids.split_at(kids.len() / 2);
                let parts: Vec<Value> = [first, second]
                    .iter()
                    .enumerate()
                    .map(|(i, c)| json!({ "label": format!("{label} (part {})", i + 1), "children": c }))
                    .collect();
                edits.push(json!({ "action": "split", "targets": [target], "parts": parts, "justification": "granularity out of line with siblings" }));
            }
            Some("ORPHAN") => {
                let (Some(child), Some(parent)) = (words.next(), words.next()) else { continue };
                edits.push(json!({ "action": "move", "targets": [child], "new_parent": parent, "justification": "orphan re-homed to nearest parent" }));
            }
            Some("WEAK_GROUNDING") => {
                let Some(target) = words.next() else { continue };
                match words.next().and_then(|w| w.strip_prefix("nearest=")) {
                    Some(n) => edits.push(json!({ "action": "merge", "targets": [target, n], "justification": "weak grounding: merged with nearest theme" })),
                    None => edits.push(json!({ "action": "delete", "targets": [target], "justification": "weak grounding" })),
                }
            }
            Some("CANDIDATE") => {
                let rest = line["CANDIDATE".len()..].trim();
                let parts: Vec<&str> = rest.splitn(4, " | ").collect();
                if parts.len() < 4 {
                    continue;
                }
                let mut head = parts[0].split_whitespace();
                let (Some(chunk), Some(parent)) = (head.next(), head.next()) else { continue };
                let quotes: Vec<&str> = parts[3].split(" || ").collect();
                edits.push(json!({
                    "action": "generate",
                    "targets": [chunk],
                    "label": parts[1],
                    "description": parts[2],
                    "new_parent": parent,
                    "quotes": quotes,
                    "justification": "recurring concept in newly sampled evidence",
                }));
            }
            _ => {}
        }
    }
    json!({ "edits": edits })
}

fn overlap_ratio(label: &str, chunk_tokens: &BTreeSet<String>) -> (f64, bool) {
    let lt: BTreeSet<String> = content_tokens(label).into_iter().collect();
    if lt.is_empty() {
        return (0.0, false);
    }
    let hit = lt.iter().filter(|t| chunk_tokens.contains(*t)).count();
    let slots = slot_words(label);
    let all_slots = !slots.is_empty() && slots.iter().all(|s| chunk_tokens.contains(s));
    (hit as f64 / lt.len() as f64, all_slots)
}

fn deductive(p: &str) -> Value {
    let max = number_after(p, "Select up to ").unwrap_or(20);
    let excerpt = section(p, "EXCERPT").map(|(_, b)| b).unwrap_or("");
    let chunk: BTreeSet<String> = content_tokens(excerpt).into_iter().collect();
    let mut scored: Vec<(f64, String)> = menu(section(p, "CODEBOOK").map(|(_, b)| b).unwrap_or(""))
        .into_iter()
        .filter_map(|(id, label, _)| {
            let (r, slots) = overlap_ratio(&label, &chunk);
            (slots || r >= 0.6).then_some((r, id))
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let ids: Vec<String> = scored.into_iter().take(max).map(|(_, id)| id).collect();
    json!({ "codes": ids })
}

fn assigned_labels(p: &str) -> Vec<String> {
    section(p, "ASSIGNED")
        .map(|(_, b)| menu(b).into_iter().map(|(_, l, _)| l).collect())
        .unwrap_or_default()
}

fn to_score(x: f64) -> u8 {
    (1.0 + (9.0 * x.clamp(0.0, 1.0)).round()) as u8
}

fn judge_fitness(p: &str) -> u8 {
    let excerpt = section(p, "EXCERPT").map(|(_, b)| b).unwrap_or("");
    let chunk: BTreeSet<String> = content_tokens(excerpt).into_iter().collect();
    let labels = assigned_labels(p);
    if labels.is_empty() {
        return 1;
    }
    let mean = labels.iter().map(|l| overlap_ratio(l, &chunk).0).sum::<f64>() / labels.len() as f64;
    to_score(mean)
}

fn judge_coverage(p: &str) -> u8 {
    let excerpt = section(p, "EXCERPT").map(|(_, b)| b).unwrap_or("");
    let top: Vec<String> = ranked_words(excerpt).into_iter().take(10).collect();
    let covered: BTreeSet<String> = assigned_labels(p).iter().flat_map(|l| content_tokens(l)).collect();
    if top.is_empty() {
        return 1;
    }
    to_score(top.iter().filter(|w| covered.contains(*w)).count() as f64 / top.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::prompts::{PromptSet, Template};
    use crate::llm::structured::{parse_structured, SchemaTag, Structured};

    const CHUNK: &str = "P1: When the cardiologist explained the surgery we were terrified about the surgery.\nP1: The school nurse had no idea what the diagnosis meant for sport.\nDOC: How did the family cope with the surgery and the waiting?\nP1: My sister helped with the waiting and with school pickups every single week.\nP1: We kept asking the team about the risks of surgery and nobody gave clear answers.";

    fn coder_prompt() -> String {
        PromptSet::builtin()
            .render(
                Template::Coder,
                &[
                    ("research_question", "rq"),
                    ("n_codes", "20"),
                    ("min_quote_chars", "20"),
                    ("chunk_id", "chk_000001"),
                    ("chunk_text", CHUNK),
                ],
            )
            .unwrap()
    }

    #[test]
    fn label_templates_respect_word_limits() {
        for (_, t) in LABEL_TEMPLATES {
            let n = word_count(t);
            assert!((5..=12).contains(&n), "{t}");
        }
        for d in FRAME_DESCRIPTIONS {
            let n = word_count(&d.replace("{w}", "one and two and three"));
            assert!((40..=80).contains(&n), "{n}: {d}");
        }
        for (l, d) in FRAME_THEMES {
            assert!((5..=10).contains(&word_count(l)), "{l}");
            assert!((60..=80).contains(&word_count(d)), "{}: {l}", word_count(d));
        }
    }

    #[test]
    fn coder_emits_twenty_verbatim_drafts() {
        let req = CompletionRequest::new(Role::Coder, coder_prompt()).with_seed(Some(42));
        let text = respond(&req);
        assert_eq!(text, respond(&req));
        let codes = parse_structured(&text, SchemaTag::CodeList).unwrap().into_codes().unwrap();
        assert_eq!(codes.len(), 20);
        for c in &codes {
            assert!(!c.quotes.is_empty());
            for q in &c.quotes {
                assert!(CHUNK.contains(q.as_str()), "{q}");
            }
        }
        let other = respond(&req.clone().with_seed(Some(43)));
        assert_ne!(text, other);
    }

    #[test]
    fn relation_rule() {
        let ask = |a: &str, b: &str| {
            let p = PromptSet::builtin()
                .render(Template::Relation, &[("label_a", a), ("description_a", ""), ("label_b", b), ("description_b", "")])
                .unwrap();
            parse_structured(&respond(&CompletionRequest::new(Role::RelationClassifier, p)), SchemaTag::RelationLabel)
                .unwrap()
        };
        use crate::llm::structured::RelationKind::*;
        assert_eq!(ask("Communication with clinicians about surgery and its risks", "Communication with clinicians about surgery"), Structured::Relation(Subordinate));
        assert_eq!(ask("Communication with clinicians about surgery", "Communication with clinicians about surgery and its risks"), Structured::Relation(Reverse));
        assert_eq!(ask("Family coping shaped by school and surgery", "Family coping shaped by surgery and school"), Structured::Relation(Equivalent));
        assert_eq!(ask("Hope and resilience while facing surgery", "Balancing school with everyday family responsibilities"), Structured::Relation(Orthogonal));
    }

    #[test]
    fn repair_brings_drafts_into_limits() {
        let drafts = json!([{ "label": "too short label", "description": "short", "quotes": ["q"] }]).to_string();
        let p = PromptSet::builtin().render(Template::CoderRepair, &[("drafts_json", &drafts)]).unwrap();
        let codes = parse_structured(&respond(&CompletionRequest::new(Role::Coder, p)), SchemaTag::CodeList).unwrap().into_codes().unwrap();
        assert!((5..=12).contains(&word_count(&codes[0].label)));
        assert!((40..=80).contains(&word_count(&codes[0].description)));
        assert_eq!(codes[0].quotes, vec!["q"]);
    }

    #[test]
    fn frames_are_recognised() {
        assert_eq!(frame_of_label("Parents describe fear and worry about surgery"), Some(0));
        assert_eq!(frame_of_label("Making treatment decisions about surgery"), Some(4));
        assert_eq!(frame_of_label("unrelated words entirely"), None);
        assert_eq!(slot_words("Support from others while managing surgery and school"), vec!["surgery", "school"]);
    }
}
