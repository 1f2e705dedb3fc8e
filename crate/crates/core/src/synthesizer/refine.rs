//! Iterative refinement: fresh training evidence, review, constrained edits,
//! re-synthesis and held-out evaluation, repeated until the stopping rule fires.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::edit::{apply_edit, EditContext};
use super::review::{Candidate, Reviewer};
use super::{codebook_jaccard, Synthesizer};
use crate::artifact::{Artifact, Chunk, Turn};
use crate::coder::{commit_chunk_drafts, label_index, CodeDraft, Coder, CodebookEntry};
use crate::config::Config;
use crate::embed::Embedder;
use crate::error::Error;
use crate::evaluator::{Evaluator, MetricReport};
use crate::ids::ArtifactId;
use crate::ledger::{ActionType, Journal};
use crate::llm::{Gateway, PromptSet};
use crate::rng::{permutation, substream, substream_seed};
use crate::text::normalize_label;

pub const REFINE_STREAM: &str = "refinement-sampling";

/// Candidate concepts offered to the reviewer per round.
const MAX_CANDIDATES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxRounds,
    NoSubstantiveEdits,
    Converged,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::MaxRounds => "max_rounds",
            StopReason::NoSubstantiveEdits => "no_substantive_edits",
            StopReason::Converged => "converged",
        }
    }
}

/// One evaluated state of the codebook. Iteration 1 is the state before any
/// review round; its `jaccard_vs_prev` is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Last ledger aid reflected in this state.
    pub snapshot_aid: u64,
    pub n_codes: usize,
    pub n_subthemes: usize,
    pub n_themes: usize,
    pub report: MetricReport,
    pub jaccard_vs_prev: f64,
    pub edits_proposed: usize,
    pub edits_applied: usize,
    pub substantive_edits: usize,
    /// Normalised code labels, sorted.
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub records: Vec<IterationRecord>,
    /// Iteration number with the highest composite (earliest on ties).
    pub best: usize,
    pub stop_reason: StopReason,
}

pub struct RefineContext<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptSet,
    pub embedder: &'a Embedder,
    pub config: &'a Config,
    pub train: &'a [Chunk],
    pub test: &'a [Chunk],
    pub seed: u64,
}

/// `Some` when a finished round should end refinement: no substantive edit
/// was applied, or the codebook barely changed.
pub fn should_stop(substantive_edits: usize, jaccard_vs_prev: f64, jaccard_stop: f64) -> Option<StopReason> {
    if substantive_edits == 0 {
        Some(StopReason::NoSubstantiveEdits)
    } else if jaccard_vs_prev > jaccard_stop {
        Some(StopReason::Converged)
    } else {
        None
    }
}

/// Iteration with the highest composite, earliest on ties; 0 when empty.
pub fn best_iteration(records: &[IterationRecord]) -> usize {
    let mut best: Option<&IterationRecord> = None;
    for r in records {
        if best.is_none_or(|b| r.report.composite > b.report.composite) {
            best = Some(r);
        }
    }
    best.map_or(0, |r| r.iteration)
}

/// Live codes as codebook entries (no code-graph parents).
pub fn live_entries(journal: &Journal) -> Vec<CodebookEntry> {
    journal
        .hierarchy
        .live_codes()
        .map(|c| CodebookEntry {
            code_id: c.code_id.to_string(),
            label: c.label.clone(),
            description: c.description.clone(),
            frequency: c.frequency,
            quote_ids: c.quote_ids.iter().map(|q| q.to_string()).collect(),
            source_chunk_ids: c.source_chunk_ids.iter().map(|q| q.to_string()).collect(),
            parent_ids: Vec::new(),
        })
        .collect()
}

fn live_code_ids(journal: &Journal) -> BTreeSet<ArtifactId> {
    journal.hierarchy.live_codes().map(|c| c.code_id).collect()
}

impl RefineContext<'_> {
    fn evaluate_state(&self, journal: &Journal, iteration: usize, prev: Option<&IterationRecord>, edits: (usize, usize, usize)) -> Result<IterationRecord, Error> {
        let entries = live_entries(journal);
        let evaluator = Evaluator { gateway: self.gateway, prompts: self.prompts, embedder: self.embedder, config: &self.config.evaluation };
        let report = evaluator.evaluate(&entries, self.train, self.test, self.seed)?.report;
        let labels: BTreeSet<String> = entries.iter().map(|e| normalize_label(&e.label)).collect();
        let labels: Vec<String> = labels.into_iter().collect();
        let jaccard_vs_prev = prev.map_or(0.0, |p| codebook_jaccard(p.labels.iter().map(String::as_str), labels.iter().map(String::as_str)));
        let h = &journal.hierarchy;
        Ok(IterationRecord {
            iteration,
            snapshot_aid: journal.ledger.last_aid(),
            n_codes: entries.len(),
            n_subthemes: h.live_subthemes().count(),
            n_themes: h.live_themes().count(),
            report,
            jaccard_vs_prev,
            edits_proposed: edits.0,
            edits_applied: edits.1,
            substantive_edits: edits.2,
            labels,
        })
    }

    /// Codes the sampled chunks in parallel, commits drafts whose label is
    /// already in the codebook as reinforcement (in sample order) and returns
    /// the recurring unmatched concepts as candidates.
    fn gather_evidence(&self, journal: &mut Journal, round: usize, sample: &[usize]) -> Result<Vec<Candidate>, Error> {
        let mut turns_by_doc: BTreeMap<String, Vec<Turn>> = BTreeMap::new();
        for t in journal.hierarchy.turns() {
            turns_by_doc.entry(t.doc_id.clone()).or_default().push(t.clone());
        }
        let coder = Coder {
            gateway: self.gateway,
            prompts: self.prompts,
            config: &self.config.coding,
            research_question: &self.config.research_question,
            temperature: self.config.backend.temperature,
        };
        let hint = substream_seed(self.seed, &format!("refine-coding:{round}"));
        let chunks: Vec<&Chunk> = sample.iter().map(|&i| &self.train[i]).collect();
        let coded = crate::par::map(&chunks, self.gateway.max_in_flight(), |c| {
            let turns = turns_by_doc.get(&c.doc_id).map(Vec::as_slice).unwrap_or(&[]);
            coder.code_chunk(c, turns, Some(hint))
        });
        let mut index = label_index(journal);
        let role = format!("coder@r{round}");
        // normalised label -> (first draft, supporting chunks)
        let mut pool: BTreeMap<String, (CodeDraft, BTreeSet<ArtifactId>)> = BTreeMap::new();
        for (chunk, drafts) in chunks.iter().zip(coded) {
            let drafts = drafts?;
            let (known, novel): (Vec<CodeDraft>, Vec<CodeDraft>) = drafts.into_iter().partition(|d| index.contains_key(&normalize_label(&d.label)));
            commit_chunk_drafts(journal, &mut index, chunk.chunk_id, &known, &role)?;
            for d in novel {
                pool.entry(normalize_label(&d.label)).or_insert_with(|| (d.clone(), BTreeSet::new())).1.insert(chunk.chunk_id);
            }
        }
        let mut candidates: Vec<Candidate> = pool
            .into_values()
            .filter(|(_, support)| support.len() >= self.config.coding.low_freq)
            .map(|(d, support)| Candidate {
                chunk_id: d.chunk_id,
                label: d.label,
                description: d.description,
                quotes: d.quotes.into_iter().map(|q| q.text).collect(),
                support: support.len(),
            })
            .collect();
        candidates.sort_by(|a, b| b.support.cmp(&a.support).then_with(|| normalize_label(&a.label).cmp(&normalize_label(&b.label))));
        candidates.truncate(MAX_CANDIDATES);
        Ok(candidates)
    }

    /// One review round; returns (proposed, applied, substantive).
    fn round(&self, journal: &mut Journal, round: usize, sample: &[usize]) -> Result<(usize, usize, usize), Error> {
        let candidates = self.gather_evidence(journal, round, sample)?;
        let reviewer = Reviewer {
            gateway: self.gateway,
            prompts: self.prompts,
            embedder: self.embedder,
            config: &self.config.review,
            temperature: self.config.backend.temperature,
        };
        let (_, proposals) = reviewer.review(&journal.hierarchy, &candidates)?;
        let role = format!("reviewer@r{round}");
        let ctx = EditContext { role: &role, min_quote_chars: self.config.coding.min_quote_chars, max_quote_chars: self.config.coding.max_quote_chars };
        let codes_before = live_code_ids(journal);
        let (mut applied, mut substantive) = (0, 0);
        for p in &proposals {
            match apply_edit(journal, p, &ctx) {
                Ok(_) => {
                    applied += 1;
                    if p.is_substantive() {
                        substantive += 1;
                    }
                }
                Err(Error::Edit(e)) => tracing::warn!(action = p.action.as_str(), "edit rejected: {e}"),
                Err(e) => return Err(e),
            }
        }
        let code_edit = journal.ledger.entries().iter().rev().take(applied).any(|e| e.payload.iter().any(|a| matches!(a, Artifact::Code(_))) && e.action_type != ActionType::Revise);
        if code_edit || live_code_ids(journal) != codes_before {
            let synth = Synthesizer { gateway: self.gateway, prompts: self.prompts, temperature: self.config.backend.temperature };
            let role = format!("synthesizer@r{round}");
            synth.retire_layers(journal, &role)?;
            synth.synthesize(journal, &role)?;
        }
        Ok((proposals.len(), applied, substantive))
    }
}

/// Runs refinement on a journal that already holds a synthesised hierarchy.
/// `prior` holds records of an interrupted run on the same journal; the
/// sampling stream is advanced past them so the continuation matches an
/// uninterrupted run. `on_iteration` sees every new record after it is
/// appended (for snapshots and checkpoints).
pub fn refine_loop(
    ctx: &RefineContext,
    journal: &mut Journal,
    prior: Vec<IterationRecord>,
    on_iteration: &mut dyn FnMut(&IterationRecord, &Journal) -> Result<(), Error>,
) -> Result<RefineOutcome, Error> {
    let cfg = &ctx.config.refine;
    if cfg.max_rounds == 0 {
        return Err(Error::Config("refine.max_rounds must be at least 1".into()));
    }
    let mut records = prior;
    let finish = |records: Vec<IterationRecord>, stop_reason| RefineOutcome { best: best_iteration(&records), records, stop_reason };
    if records.is_empty() {
        let r = ctx.evaluate_state(journal, 1, None, (0, 0, 0))?;
        records.push(r);
        on_iteration(records.last().expect("just pushed"), journal)?;
    }
    let mut rng = substream(ctx.seed, REFINE_STREAM);
    for _ in 1..records.len() {
        permutation(&mut rng, ctx.train.len());
    }
    loop {
        let last = records.last().expect("at least one record");
        if last.iteration >= 2 {
            if let Some(reason) = should_stop(last.substantive_edits, last.jaccard_vs_prev, cfg.jaccard_stop) {
                return Ok(finish(records, reason));
            }
        }
        if records.len() >= cfg.max_rounds {
            return Ok(finish(records, StopReason::MaxRounds));
        }
        let iteration = last.iteration + 1;
        let round = iteration - 1;
        let order = permutation(&mut rng, ctx.train.len());
        let sample = &order[..cfg.sample_chunks.min(order.len())];
        let edits = ctx.round(journal, round, sample)?;
        let r = ctx.evaluate_state(journal, iteration, records.last(), edits)?;
        tracing::info!(iteration, composite = r.report.composite, jaccard = r.jaccard_vs_prev, applied = r.edits_applied, "refinement round finished");
        records.push(r);
        on_iteration(records.last().expect("just pushed"), journal)?;
    }
}
