//! Held-out evaluation: deductive coding of test chunks with a fixed
//! codebook, the five quality metrics, the composite score, replicate
//! statistics and theme alignment.

mod align;
mod metrics;
mod stats;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use align::{theme_alignment, Alignment, AlignmentRow, ThemeText};
pub use metrics::{composite, consistency, jsd, parsimony, rescale_judge, reusability, MetricReport, EQUAL_WEIGHTS, METRIC_NAMES};
pub use stats::{incomplete_beta, ln_gamma, paired_stats, student_t_two_tailed, EffectSize, StatRow, TestStatus};

use crate::artifact::Chunk;
use crate::coder::CodebookEntry;
use crate::config::EvaluationConfig;
use crate::embed::{code_representation, Embedder};
use crate::error::{Error, GatewayError, MetricError};
use crate::ids::ArtifactId;
use crate::llm::prompts::Template;
use crate::llm::{CompletionRequest, Gateway, PromptSet, Role, SchemaTag};
use crate::rng::{permutation, substream};
use crate::text::normalize_label;

pub const JUDGE_STREAM: &str = "judge-sampling";

/// Codes applied to one test chunk: distinct ids, all from the codebook.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub chunk_id: ArtifactId,
    pub code_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    Fitness,
    Coverage,
}

impl JudgeKind {
    fn role(self) -> Role {
        match self {
            JudgeKind::Fitness => Role::JudgeFitness,
            JudgeKind::Coverage => Role::JudgeCoverage,
        }
    }

    fn template(self) -> Template {
        match self {
            JudgeKind::Fitness => Template::JudgeFitness,
            JudgeKind::Coverage => Template::JudgeCoverage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRecord {
    pub chunk_id: ArtifactId,
    pub fitness: u8,
    pub coverage: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricReport,
    pub assignments: Vec<Assignment>,
    pub judged: Vec<JudgeRecord>,
}

/// `id | label | description` lines.
pub fn code_menu<'a>(codes: impl IntoIterator<Item = &'a CodebookEntry>) -> String {
    codes
        .into_iter()
        .map(|c| format!("{} | {} | {}", c.code_id, c.label, c.description))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Per-code occurrence counts: one per (chunk, code) assignment.
pub fn assignment_counts(assignments: &[Assignment]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for a in assignments {
        for c in &a.code_ids {
            *out.entry(c.clone()).or_insert(0.0) += 1.0;
        }
    }
    out
}

pub struct Evaluator<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptSet,
    pub embedder: &'a Embedder,
    pub config: &'a EvaluationConfig,
}

impl Evaluator<'_> {
    fn workers(&self) -> usize {
        self.gateway.max_in_flight()
    }

    /// Asks the model to pick codes for `chunk` from the codebook menu. Items
    /// naming neither an id nor a label of the codebook are dropped; the
    /// selection is capped at `max_assigned`.
    pub fn deductive_code(&self, codebook: &[CodebookEntry], chunk: &Chunk) -> Result<Assignment, GatewayError> {
        if codebook.is_empty() {
            return Err(GatewayError::InvalidRequest("deductive coding needs a non-empty codebook".into()));
        }
        let max = self.config.max_assigned.min(codebook.len());
        let id = chunk.chunk_id.to_string();
        let prompt = self.prompts.render(
            Template::Deductive,
            &[("max_codes", &max.to_string()), ("code_menu", &code_menu(codebook)), ("chunk_id", &id), ("chunk_text", &chunk.text)],
        )?;
        let picked = self
            .gateway
            .complete_structured(&CompletionRequest::new(Role::DeductiveCoder, prompt), SchemaTag::AssignmentList)?
            .into_assignments()?;
        let by_id: BTreeSet<&str> = codebook.iter().map(|c| c.code_id.as_str()).collect();
        let by_label: BTreeMap<String, &str> = codebook.iter().map(|c| (normalize_label(&c.label), c.code_id.as_str())).collect();
        let mut seen = BTreeSet::new();
        let mut code_ids = Vec::new();
        for item in picked {
            let item = item.trim();
            let resolved = by_id.get(item).copied().or_else(|| by_label.get(&normalize_label(item)).copied());
            match resolved {
                Some(c) if seen.insert(c) => code_ids.push(c.to_string()),
                Some(_) => {}
                None => tracing::warn!(chunk = %id, item, "deductive coder named a code outside the codebook; dropped"),
            }
        }
        if code_ids.len() > max {
            tracing::warn!(chunk = %id, n = code_ids.len(), max, "selection truncated");
            code_ids.truncate(max);
        }
        Ok(Assignment { chunk_id: chunk.chunk_id, code_ids })
    }

    /// Raw 1..=10 judge score for one chunk and its assigned codes.
    pub fn judge_raw(&self, chunk: &Chunk, assigned: &[&CodebookEntry], kind: JudgeKind) -> Result<u8, GatewayError> {
        let menu = if assigned.is_empty() { "(no codes assigned)".to_string() } else { code_menu(assigned.iter().copied()) };
        let prompt = self.prompts.render(
            kind.template(),
            &[("chunk_id", &chunk.chunk_id.to_string()), ("chunk_text", &chunk.text), ("assigned_codes", &menu)],
        )?;
        let req = CompletionRequest::new(kind.role(), prompt).with_temperature(self.config.judge_temperature);
        self.gateway.complete_structured(&req, SchemaTag::JudgeScore)?.into_score()
    }

    /// Rescaled judge score in [0, 1].
    pub fn judge_score(&self, chunk: &Chunk, assigned: &[&CodebookEntry], kind: JudgeKind) -> Result<f64, GatewayError> {
        self.judge_raw(chunk, assigned, kind).map(rescale_judge)
    }

    fn judge_pair(&self, chunk: &Chunk, assigned: &[&CodebookEntry]) -> Result<Option<JudgeRecord>, GatewayError> {
        let score = |k| match self.judge_raw(chunk, assigned, k) {
            Ok(s) => Ok(Some(s)),
            Err(GatewayError::MalformedResponse { reason, .. }) => {
                tracing::warn!(chunk = %chunk.chunk_id, ?k, "judge response unusable, chunk excluded: {reason}");
                Ok(None)
            }
            Err(e) => Err(e),
        };
        let Some(fitness) = score(JudgeKind::Fitness)? else { return Ok(None) };
        let Some(coverage) = score(JudgeKind::Coverage)? else { return Ok(None) };
        Ok(Some(JudgeRecord { chunk_id: chunk.chunk_id, fitness, coverage }))
    }

    /// Judges a seeded sample of `judge_sample_size` test chunks. Chunks whose
    /// judge output stays unusable are replaced by the next in the sampling
    /// order while any remain.
    pub fn judge_sample(&self, codebook: &[CodebookEntry], test: &[Chunk], assignments: &[Assignment], seed: u64) -> Result<Vec<JudgeRecord>, GatewayError> {
        let by_id: BTreeMap<&str, &CodebookEntry> = codebook.iter().map(|c| (c.code_id.as_str(), c)).collect();
        let order = permutation(&mut substream(seed, JUDGE_STREAM), test.len());
        let want = self.config.judge_sample_size.min(test.len());
        let mut out = Vec::with_capacity(want);
        let mut cursor = 0;
        while out.len() < want && cursor < order.len() {
            let take = (want - out.len()).min(order.len() - cursor);
            let batch = &order[cursor..cursor + take];
            cursor += take;
            let results = crate::par::map(batch, self.workers(), |&i| {
                let assigned: Vec<&CodebookEntry> = assignments[i].code_ids.iter().filter_map(|c| by_id.get(c.as_str()).copied()).collect();
                self.judge_pair(&test[i], &assigned)
            });
            for r in results {
                out.extend(r?);
            }
        }
        if out.len() < want {
            tracing::warn!(judged = out.len(), want, "judge sample could not be filled");
        }
        Ok(out)
    }

    /// Scores `codebook` on the test split. Training-side code frequencies come
    /// from the codebook counts; a codebook without counts is deductively
    /// applied to `train` instead.
    pub fn evaluate(&self, codebook: &[CodebookEntry], train: &[Chunk], test: &[Chunk], seed: u64) -> Result<Evaluation, Error> {
        if codebook.is_empty() {
            return Err(MetricError::EmptyCodebook.into());
        }
        let ids: BTreeSet<String> = codebook.iter().map(|c| c.code_id.clone()).collect();
        let assignments = crate::par::map(test, self.workers(), |c| self.deductive_code(codebook, c)).into_iter().collect::<Result<Vec<_>, _>>()?;
        let reusability = reusability(&ids, assignments.iter().flat_map(|a| a.code_ids.iter().map(String::as_str)))?;

        let judged = self.judge_sample(codebook, test, &assignments, seed)?;
        if judged.is_empty() {
            return Err(GatewayError::MalformedResponse { schema: SchemaTag::JudgeScore.as_str(), reason: "no test chunk could be judged".into() }.into());
        }
        let n = judged.len() as f64;
        let fitness = judged.iter().map(|j| rescale_judge(j.fitness)).sum::<f64>() / n;
        let coverage = judged.iter().map(|j| rescale_judge(j.coverage)).sum::<f64>() / n;

        let vectors = codebook
            .iter()
            .map(|c| Ok(self.embedder.embed(&code_representation(&c.label, &c.description))?.vector.clone()))
            .collect::<Result<Vec<_>, MetricError>>()?;
        let parsimony = parsimony(&vectors)?;

        let mut train_counts: BTreeMap<String, f64> = codebook.iter().map(|c| (c.code_id.clone(), c.train_count() as f64)).collect();
        if train_counts.values().all(|v| *v == 0.0) {
            tracing::info!("codebook carries no training counts; coding the training split deductively");
            let train_assign = crate::par::map(train, self.workers(), |c| self.deductive_code(codebook, c)).into_iter().collect::<Result<Vec<_>, _>>()?;
            train_counts = assignment_counts(&train_assign);
        }
        let consistency = match consistency(&train_counts, &assignment_counts(&assignments)) {
            Ok(v) => v,
            Err(MetricError::EmptyDistribution) => {
                tracing::warn!("one side has no code occurrences; consistency scored 0");
                0.0
            }
            Err(e) => return Err(e.into()),
        };
        let report = MetricReport::from_values([reusability, fitness, coverage, parsimony, consistency], self.config.weights, judged.len())?;
        Ok(Evaluation { report, assignments, judged })
    }
}
