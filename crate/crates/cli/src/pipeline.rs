//! Stage orchestration shared by the commands: ingest, open coding with
//! consolidation, synthesis, refinement and evaluation.

use std::collections::BTreeMap;

use traceta_core::coder::{build_graph, candidate_pairs, code_vectors, commit_chunk_drafts, consolidate, label_index, Codebook, Coder, CodebookEntry};
use traceta_core::config::{ChunkMode, Config};
use traceta_core::embed::Embedder;
use traceta_core::evaluator::{Evaluation, Evaluator};
use traceta_core::ingest::{chunk_chars, chunk_words, record_document, split_train_test, Document, RawDocument};
use traceta_core::llm::{Gateway, PromptSet};
use traceta_core::rng::substream_seed;
use traceta_core::synthesizer::{live_entries, refine_loop, IterationRecord, RefineContext, RefineOutcome, Synthesizer};
use traceta_core::{Chunk, Error, Journal, Turn};

/// Model, embedder and prompt templates used by one run.
pub struct Services {
    pub gateway: Gateway,
    pub embedder: Embedder,
    pub prompts: PromptSet,
}

impl Services {
    pub fn from_config(cfg: &Config, trace: Option<&std::path::Path>) -> Result<Self, Error> {
        let mut gateway = cfg.backend.gateway();
        if let Some(p) = trace {
            gateway = gateway.with_trace_file(p)?;
        }
        Ok(Self { gateway, embedder: cfg.embedding.embedder(), prompts: PromptSet::builtin() })
    }

    pub fn backend_ids(&self) -> BTreeMap<String, String> {
        BTreeMap::from([("chat".to_string(), self.gateway.backend_id()), ("embedding".to_string(), self.embedder.model_id())])
    }
}

/// Parses and chunks every document, recording each as one ledger entry.
/// Returns all chunks in document order.
pub fn ingest(journal: &mut Journal, docs: &[RawDocument], cfg: &Config) -> Result<Vec<Chunk>, Error> {
    let mut all = Vec::new();
    for d in docs {
        let doc = Document::parse(&d.doc_id, &d.text, &mut journal.ids)?;
        let c = &cfg.chunking;
        let chunks = match c.mode {
            ChunkMode::Words => chunk_words(&doc, c.words, c.word_overlap, &mut journal.ids)?,
            ChunkMode::Chars => chunk_chars(&doc, c.max_chars, c.overlap_chars, &mut journal.ids)?,
        };
        record_document(journal, &doc, &chunks)?;
        all.extend(chunks);
    }
    Ok(all)
}

/// Train/test split under the split seed, which replicates share.
pub fn split(chunks: &[Chunk], cfg: &Config) -> Result<(Vec<Chunk>, Vec<Chunk>), Error> {
    Ok(split_train_test(chunks, cfg.split.ratio, cfg.split.seed)?)
}

fn turns_by_doc(journal: &Journal) -> BTreeMap<String, Vec<Turn>> {
    let mut out: BTreeMap<String, Vec<Turn>> = BTreeMap::new();
    for t in journal.hierarchy.turns() {
        out.entry(t.doc_id.clone()).or_default().push(t.clone());
    }
    out
}

/// Open coding of the training chunks (model calls in parallel, commits in
/// chunk order), relation classification between similar codes, the code
/// graph and consolidation.
pub fn open_code(svc: &Services, cfg: &Config, journal: &mut Journal, train: &[Chunk], seed: u64) -> Result<Codebook, Error> {
    let turns = turns_by_doc(journal);
    let coder = Coder {
        gateway: &svc.gateway,
        prompts: &svc.prompts,
        config: &cfg.coding,
        research_question: &cfg.research_question,
        temperature: cfg.backend.temperature,
    };
    let hint = substream_seed(seed, "coding");
    let drafts = traceta_core::par::map(train, svc.gateway.max_in_flight(), |c| coder.code_chunk(c, turns.get(&c.doc_id).map(Vec::as_slice).unwrap_or(&[]), Some(hint)));
    let mut index = label_index(journal);
    for (chunk, d) in train.iter().zip(drafts) {
        commit_chunk_drafts(journal, &mut index, chunk.chunk_id, &d?, "coder")?;
    }
    let codes: BTreeMap<_, _> = journal.hierarchy.live_codes().map(|c| (c.code_id, c.clone())).collect();
    if codes.is_empty() {
        return Err(Error::Config("open coding produced no grounded codes".into()));
    }
    let vectors = code_vectors(&svc.embedder, codes.values())?;
    let pairs = candidate_pairs(&vectors, cfg.coding.sim_threshold)?;
    let relations = coder.classify_candidates(&codes, &pairs)?;
    let graph = build_graph(codes.keys().copied(), &relations);
    let codebook = consolidate(journal, &graph, &cfg.coding, "coder")?;
    if codebook.is_empty() {
        return Err(Error::Config(format!("consolidation kept no code; coding.low_freq = {} may be too high for this corpus", cfg.coding.low_freq)));
    }
    tracing::info!(codes = codebook.len(), relations = relations.len(), "codebook consolidated");
    Ok(codebook)
}

pub fn synthesize(svc: &Services, cfg: &Config, journal: &mut Journal) -> Result<(), Error> {
    Synthesizer { gateway: &svc.gateway, prompts: &svc.prompts, temperature: cfg.backend.temperature }.synthesize(journal, "synthesizer")
}

#[allow(clippy::too_many_arguments)]
pub fn refine(
    svc: &Services,
    cfg: &Config,
    journal: &mut Journal,
    train: &[Chunk],
    test: &[Chunk],
    seed: u64,
    prior: Vec<IterationRecord>,
    on_iteration: &mut dyn FnMut(&IterationRecord, &Journal) -> Result<(), Error>,
) -> Result<RefineOutcome, Error> {
    let ctx = RefineContext { gateway: &svc.gateway, prompts: &svc.prompts, embedder: &svc.embedder, config: cfg, train, test, seed };
    refine_loop(&ctx, journal, prior, on_iteration)
}

pub fn evaluate(svc: &Services, cfg: &Config, codebook: &[CodebookEntry], train: &[Chunk], test: &[Chunk], seed: u64) -> Result<Evaluation, Error> {
    Evaluator { gateway: &svc.gateway, prompts: &svc.prompts, embedder: &svc.embedder, config: &cfg.evaluation }.evaluate(codebook, train, test, seed)
}

/// Live codes of a journal as codebook entries, with graph parents when a
/// consolidated codebook is supplied.
pub fn live_codebook(journal: &Journal, graph_source: Option<&Codebook>) -> Vec<CodebookEntry> {
    match graph_source {
        Some(cb) => Codebook::from_hierarchy(&journal.hierarchy, cb.graph.clone(), cb.aid_range).to_file().codes,
        None => live_entries(journal),
    }
}
