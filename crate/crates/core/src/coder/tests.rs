use proptest::prelude::*;

use super::*;
use crate::ingest::{chunk_words, Document};
use crate::testkit::{add_code, add_quote, cid, fixture_journal, words};

fn coding() -> CodingConfig {
    CodingConfig::default()
}

fn coder<'a>(g: &'a Gateway, p: &'a PromptSet, c: &'a CodingConfig) -> Coder<'a> {
    Coder { gateway: g, prompts: p, config: c, research_question: "rq", temperature: 0.7 }
}

fn scripted(replies: &[String]) -> Gateway {
    crate::testkit::scripted_gateway(replies)
}

#[test]
fn grounding_is_whitespace_insensitive_and_maps_to_turn() {
    let (j, chunk, turns) = fixture_journal();
    let q = ground_quote(&chunk, &turns, "We were   terrified about\nthe surgery", 20, 1000);
    assert_eq!(q.len(), 1);
    let t = j.hierarchy.turn(q[0].turn_id).unwrap();
    assert_eq!(t.speaker, "P1");
    assert_eq!(crate::text::slice_chars(&t.text, q[0].char_span.0, q[0].char_span.1), q[0].text);
    assert_eq!(q[0].text, "We were terrified about the surgery");
    assert!(ground_quote(&chunk, &turns, "not in the chunk at all, anywhere", 20, 1000).is_empty());
}

#[test]
fn quotes_crossing_a_speaker_label_are_clipped_to_one_turn() {
    let (_, chunk, turns) = fixture_journal();
    let q = ground_quote(&chunk, &turns, "online, which made the fear worse. INT: How did", 5, 1000);
    assert_eq!(q.len(), 1);
    assert_eq!(q[0].text, "online, which made the fear worse.");
}

#[test]
fn short_quotes_are_dropped() {
    let (_, chunk, turns) = fixture_journal();
    assert!(ground_quote(&chunk, &turns, "the surgery", 20, 1000).is_empty());
}

#[test]
fn long_quotes_are_segmented() {
    let sentence = "Every appointment brought another long conversation about the surgery and the risks involved. ";
    let body: String = sentence.repeat(16);
    assert!(body.trim().chars().count() > 1400);
    let raw = format!("P1: {}\n", body.trim());
    let mut j = Journal::new();
    let doc = Document::parse("long", &raw, &mut j.ids).unwrap();
    let chunks = chunk_words(&doc, 2048, 200, &mut j.ids).unwrap();
    let q = ground_quote(&chunks[0], &doc.turns, body.trim(), 20, 1000);
    assert!(q.len() >= 2);
    for piece in &q {
        assert!(piece.text.chars().count() <= 1000);
        assert!(doc.turns[0].text.contains(&piece.text));
    }
}

#[test]
fn mock_coder_yields_twenty_grounded_drafts() {
    let (_, chunk, turns) = fixture_journal();
    let (g, p, c) = (Gateway::mock(), PromptSet::builtin(), coding());
    let drafts = coder(&g, &p, &c).code_chunk(&chunk, &turns, Some(42)).unwrap();
    assert_eq!(drafts.len(), 20);
    for d in &drafts {
        assert!(label_ok(&d.label) && description_ok(&d.description), "{d:?}");
        for q in &d.quotes {
            assert!(find_ws_insensitive(&chunk.text, &q.text).is_some());
            assert!(chunk.text.contains(&q.text));
        }
    }
}

fn draft_json(label: &str, description: &str, quote: &str) -> String {
    serde_json::json!({ "codes": [{ "label": label, "description": description, "quotes": [quote] }] }).to_string()
}

#[test]
fn short_label_is_repaired_or_dropped() {
    let (_, chunk, turns) = fixture_journal();
    let (p, c) = (PromptSet::builtin(), coding());
    let quote = "We were terrified about the surgery";
    let bad = draft_json("fear of surgery", &words("d", 50), quote);
    let good = draft_json("Parents describe fear about the coming surgery", &words("d", 50), quote);
    let g = scripted(&[bad.clone(), good]);
    let drafts = coder(&g, &p, &c).code_chunk(&chunk, &turns, None).unwrap();
    assert_eq!(drafts.len(), 1);
    assert_eq!(drafts[0].label, "Parents describe fear about the coming surgery");
    let g = scripted(&[bad.clone(), bad]);
    assert!(coder(&g, &p, &c).code_chunk(&chunk, &turns, None).unwrap().is_empty());
}

#[test]
fn ungrounded_drafts_are_dropped() {
    let (_, chunk, turns) = fixture_journal();
    let (p, c) = (PromptSet::builtin(), coding());
    let g = scripted(&[draft_json("Parents describe fear about the coming surgery", &words("d", 50), "an invented passage nobody said")]);
    assert!(coder(&g, &p, &c).code_chunk(&chunk, &turns, None).unwrap().is_empty());
}

fn draft(chunk: u32, label: &str) -> CodeDraft {
    CodeDraft {
        chunk_id: crate::testkit::chk(chunk),
        label: label.into(),
        description: format!("description of {label}"),
        quotes: vec![GroundedQuote { turn_id: crate::testkit::tid(1), char_span: (chunk as usize, chunk as usize + 5), text: format!("{label}{chunk}") }],
    }
}

#[test]
fn normalisation_merges_equal_labels() {
    let d = vec![draft(1, "Fear of surgery"), draft(2, "fear of  surgery."), draft(3, "FEAR OF SURGERY")];
    let n = normalize_codes(&d);
    assert_eq!(n.len(), 1);
    assert_eq!(n[0].frequency(), 3);
    assert_eq!(n[0].label, "Fear of surgery");
    assert_eq!(n[0].description, "description of Fear of surgery");
    assert_eq!(n[0].quotes.len(), 3);

    let many: Vec<CodeDraft> = (1..=2).flat_map(|c| (0..20).map(move |i| draft(c, &format!("label {c} {i}")))).collect();
    let n = normalize_codes(&many);
    assert_eq!(n.len(), 40);
    assert!(n.iter().all(|c| c.frequency() == 1));
}

#[test]
fn incremental_commit_matches_batch_normalisation() {
    let (mut j, chunk, turns) = fixture_journal();
    let (g, p, c) = (Gateway::mock(), PromptSet::builtin(), coding());
    let cd = coder(&g, &p, &c);
    let mut all = Vec::new();
    let mut index = label_index(&j);
    for seed in [1u64, 2, 3] {
        let drafts = cd.code_chunk(&chunk, &turns, Some(seed)).unwrap();
        commit_chunk_drafts(&mut j, &mut index, chunk.chunk_id, &drafts, "coder").unwrap();
        all.extend(drafts);
    }
    let batch = normalize_codes(&all);
    assert_eq!(j.hierarchy.live_codes().count(), batch.len());
    for nc in &batch {
        let code = j.hierarchy.code(index[&nc.key]).unwrap();
        assert_eq!(code.frequency, code.source_chunk_ids.len());
        assert_eq!(code.quote_ids.len(), nc.quotes.len());
    }
    assert!(j.hierarchy.validate_links().is_empty(), "{:?}", j.hierarchy.validate_links());
}

#[test]
fn candidate_pairs_match_brute_force() {
    let e = Embedder::mock(384, 0);
    let texts = [
        "Fear before surgery kept parents awake",
        "Fear before surgery kept parents awake at night",
        "School letters about sport restrictions",
        "Grandparents helped with school pickups",
        "Fear of surgery",
    ];
    let vectors: Vec<(ArtifactId, Vec<f64>)> = texts.iter().enumerate().map(|(i, t)| (cid(i as u32 + 1), e.embed(t).unwrap().vector.clone())).collect();
    let got = candidate_pairs(&vectors, 0.5).unwrap();
    let mut want = Vec::new();
    for i in 0..5 {
        for j in 0..5 {
            if i < j && cosine(&vectors[i].1, &vectors[j].1).unwrap() > 0.5 {
                want.push((vectors[i].0, vectors[j].0));
            }
        }
    }
    assert_eq!(got, want);
    assert!(!got.is_empty());
    assert!(candidate_pairs(&vectors, 1.0).unwrap().is_empty());
    let same = vec![(cid(1), vec![1.0, 0.0]), (cid(2), vec![1.0, 0.0])];
    assert_eq!(candidate_pairs(&same, 0.5).unwrap(), vec![(cid(1), cid(2))]);
}

fn code(id: u32, label: &str) -> Code {
    Code {
        code_id: cid(id),
        label: label.into(),
        description: String::new(),
        frequency: 1,
        source_chunk_ids: Default::default(),
        quote_ids: Default::default(),
        deleted: false,
    }
}

#[test]
fn unparseable_relation_is_orthogonal() {
    let (p, c) = (PromptSet::builtin(), coding());
    let g = scripted(&["I think they are related".into()]);
    let r = coder(&g, &p, &c).classify_relation(&code(1, "a b c d e"), &code(2, "f g h i j")).unwrap();
    assert_eq!(r.kind, RelationKind::Orthogonal);
}

#[test]
fn mock_relations_follow_token_sets() {
    let (g, p, c) = (Gateway::mock(), PromptSet::builtin(), coding());
    let cd = coder(&g, &p, &c);
    let r = cd.classify_relation(&code(1, "Making treatment decisions about surgery with limited evidence"), &code(2, "Making treatment decisions about surgery")).unwrap();
    assert_eq!((r.a, r.b, r.kind), (cid(1), cid(2), RelationKind::Subordinate));
    let r = cd.classify_relation(&code(1, "Making treatment decisions about surgery"), &code(2, "Making treatment decisions about surgery with limited evidence")).unwrap();
    assert_eq!((r.a, r.b, r.kind), (cid(2), cid(1), RelationKind::Subordinate));
    let r = cd.classify_relation(&code(1, "Family coping shaped by school and surgery"), &code(2, "Family coping shaped by surgery and school")).unwrap();
    assert_eq!(r.kind, RelationKind::Equivalent);
}

#[test]
fn classification_asks_each_class_pair_once() {
    let (g, p, c) = (Gateway::mock(), PromptSet::builtin(), coding());
    let codes: BTreeMap<ArtifactId, Code> = [
        code(1, "Family coping shaped by school and surgery"),
        code(2, "Family coping shaped by surgery and school"),
        code(3, "Hope and resilience while facing surgery"),
    ]
    .into_iter()
    .map(|c| (c.code_id, c))
    .collect();
    let pairs = vec![(cid(1), cid(2)), (cid(1), cid(3)), (cid(2), cid(3))];
    let rels = coder(&g, &p, &c).classify_candidates(&codes, &pairs).unwrap();
    assert_eq!(rels.len(), 2);
    assert_eq!(rels[0].kind, RelationKind::Equivalent);
}

fn consolidation_fixture() -> (Journal, [ArtifactId; 6]) {
    let mut j = Journal::new();
    let q: Vec<ArtifactId> = (0..7).map(|i| add_quote(&mut j, &format!("evidence sentence number {i} for the fixture"))).collect();
    let a = add_code(&mut j, "code a three chunks label", &q[0..3]);
    let b = add_code(&mut j, "code b one chunk label", &q[3..4]);
    let p = add_code(&mut j, "parent code with two chunks", &q[4..6]);
    let child = add_code(&mut j, "low frequency child code label", &q[6..7]);
    let o1 = add_quote(&mut j, "orphan evidence sentence for the fixture");
    let orphan = add_code(&mut j, "orphan code with one chunk", &[o1]);
    (j, [a, b, p, child, orphan, o1])
}

#[test]
fn cleanup_steps_on_scripted_fixture() {
    let (mut j, [a, b, p, child, orphan, o1]) = consolidation_fixture();
    let quotes_before = j.hierarchy.quotes().count();
    let rels = [
        CodeRelation::new(a, b, RelationKind::Equivalent),
        CodeRelation::new(child, p, RelationKind::Subordinate),
    ];
    let graph = build_graph([a, b, p, child, orphan], &rels);
    let before = j.ledger.len();
    let cb = consolidate(&mut j, &graph, &CodingConfig::default(), "coder").unwrap();
    let ids: BTreeSet<ArtifactId> = cb.codes.iter().map(|c| c.code_id).collect();
    assert_eq!(ids, [a, p].into());
    let ca = j.hierarchy.code(a).unwrap();
    assert_eq!(ca.frequency, 4);
    assert_eq!(ca.quote_ids.len(), 4);
    let cp = j.hierarchy.code(p).unwrap();
    assert_eq!(cp.quote_ids.len(), 3);
    assert!(j.hierarchy.code(child).unwrap().deleted);
    assert!(j.hierarchy.code(orphan).unwrap().deleted);
    assert!(j.hierarchy.quote(o1).unwrap().deleted);
    assert_eq!(j.ledger.len() - before, 3);
    let types: Vec<ActionType> = j.ledger.entries()[before..].iter().map(|e| e.action_type).collect();
    assert_eq!(types, [ActionType::Merge, ActionType::Merge, ActionType::Delete]);
    assert_eq!(j.hierarchy.quotes().count(), quotes_before);
    let live_quotes: usize = cb.codes.iter().map(|c| c.quote_ids.len()).sum();
    let tombstoned = j.hierarchy.quotes().filter(|q| q.deleted).count();
    assert_eq!(live_quotes + tombstoned, quotes_before);
    assert!(j.hierarchy.validate_links().is_empty(), "{:?}", j.hierarchy.validate_links());
    assert!(cb.violations().is_empty());
    assert_eq!(crate::ledger::replay(&j.ledger).unwrap(), j.hierarchy);
}

#[test]
fn merge_score_prefers_in_degree_then_lower_id() {
    let mut j = Journal::new();
    let q: Vec<ArtifactId> = (0..6).map(|i| add_quote(&mut j, &format!("evidence sentence number {i} for the fixture"))).collect();
    let a = add_code(&mut j, "code a two chunks label", &q[0..2]);
    let b = add_code(&mut j, "code b two chunks label", &q[2..4]);
    let kid = add_code(&mut j, "child of b with two chunks", &q[4..6]);
    let rels = [CodeRelation::new(a, b, RelationKind::Equivalent), CodeRelation::new(kid, b, RelationKind::Subordinate)];
    let cb = consolidate(&mut j, &build_graph([a, b, kid], &rels), &CodingConfig::default(), "coder").unwrap();
    assert!(cb.codes.iter().any(|c| c.code_id == b));
    assert!(j.hierarchy.code(a).unwrap().deleted);

    let mut j = Journal::new();
    let q: Vec<ArtifactId> = (0..4).map(|i| add_quote(&mut j, &format!("evidence sentence number {i} for the fixture"))).collect();
    let a = add_code(&mut j, "code a two chunks label", &q[0..2]);
    let b = add_code(&mut j, "code b two chunks label", &q[2..4]);
    let cb = consolidate(&mut j, &build_graph([a, b], &[CodeRelation::new(b, a, RelationKind::Equivalent)]), &CodingConfig::default(), "coder").unwrap();
    assert_eq!(cb.codes.iter().map(|c| c.code_id).collect::<Vec<_>>(), vec![a]);
}

#[test]
fn codebook_file_round_trip_and_import() {
    let (mut j, [a, b, p, child, orphan, _]) = consolidation_fixture();
    let rels = [CodeRelation::new(child, p, RelationKind::Subordinate), CodeRelation::new(b, a, RelationKind::Subordinate)];
    let cb = consolidate(&mut j, &build_graph([a, b, p, child, orphan], &rels), &CodingConfig::default(), "coder").unwrap();
    let file = cb.to_file();
    let back = CodebookFile::from_json(&serde_json::to_string(&file).unwrap()).unwrap();
    assert_eq!(back, file);
    let ext = CodebookFile::from_json(r#"{"codes": [{"label": "Fear"}, {"label": "Hope", "frequency": 3}]}"#).unwrap();
    assert_eq!(ext.codes[0].code_id, "ext_000001");
    assert_eq!(ext.codes[1].train_count(), 3);
    assert!(CodebookFile::from_json(r#"{"codes": [{"code_id": "x", "label": "a"}, {"code_id": "x", "label": "b"}]}"#).is_err());
}

fn brute_components(n: usize, eq: &[(usize, usize)]) -> Vec<usize> {
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(a, b) in eq {
        reach[a][b] = true;
        reach[b][a] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    (0..n).map(|i| (0..n).find(|&j| reach[i][j]).unwrap()).collect()
}

proptest! {
    #[test]
    fn union_find_matches_connected_components(
        n in 1usize..=10,
        raw in proptest::collection::vec((0usize..10, 0usize..10), 0..20),
    ) {
        let eq: Vec<(usize, usize)> = raw.into_iter().map(|(a, b)| (a % n, b % n)).collect();
        let mut uf = UnionFind::new((0..n).map(|i| cid(i as u32 + 1)));
        for &(a, b) in &eq {
            uf.union(cid(a as u32 + 1), cid(b as u32 + 1));
        }
        let want = brute_components(n, &eq);
        for (i, w) in want.iter().enumerate() {
            prop_assert_eq!(uf.find(cid(i as u32 + 1)), cid(*w as u32 + 1));
        }
    }
}
