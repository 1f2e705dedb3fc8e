//! Command implementations. Each returns a short human-readable summary;
//! all artifacts go to the run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use traceta_core::coder::{Codebook, CodebookFile};
use traceta_core::config::{BackendKind, Config};
use traceta_core::evaluator::{theme_alignment, ThemeText};
use traceta_core::ingest::{chunk_manifest, load_corpus, RawDocument};
use traceta_core::ledger::{replay, trace, verify_completeness};
use traceta_core::synthesizer::{IterationRecord, RefineOutcome};
use traceta_core::{ArtifactId, Chunk, Journal};

use crate::error::{CliError, CliResult};
use crate::manifest::{RunEnd, RunManifest};
use crate::pipeline::{self, Services};
use crate::report;
use crate::rundir::RunDir;

pub const DEFAULT_SEEDS: [u64; 5] = [42, 43, 44, 45, 46];

/// Flag values that take precedence over the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub max_rounds: Option<usize>,
    pub backend: Option<BackendKind>,
}

impl Overrides {
    /// The configuration file (or `fallback`, or defaults) with flags applied.
    pub fn resolve(&self, fallback: Option<&Path>) -> CliResult<Config> {
        let mut cfg = match self.config.as_deref().or(fallback.filter(|p| p.is_file())) {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.max_rounds {
            cfg.refine.max_rounds = r;
        }
        if let Some(b) = self.backend {
            cfg.backend.kind = b;
            cfg.embedding.kind = b;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_corpus(corpus: &Path) -> CliResult<Vec<RawDocument>> {
    load_corpus(corpus).map_err(|e| CliError::Corpus(e.to_string()))
}

fn dataset_hashes(docs: &[RawDocument]) -> BTreeMap<String, String> {
    docs.iter().map(|d| (d.doc_id.clone(), d.sha256.clone())).collect()
}

fn services(dir: &RunDir, cfg: &Config) -> CliResult<Services> {
    Ok(Services::from_config(cfg, Some(&dir.path("llm_trace.jsonl")))?)
}

/// Writes `manifest.json` for a fresh run, or checks that an existing one
/// describes the same inputs and configuration.
fn ensure_manifest(dir: &RunDir, command: &str, cfg: &Config, svc: &Services, docs: &[RawDocument]) -> CliResult<()> {
    let m = RunManifest::new(command, cfg, svc.prompts.hashes(), dataset_hashes(docs), svc.backend_ids());
    let path = dir.path("manifest.json");
    if path.is_file() {
        let old = RunManifest::read(&path)?;
        if old.fingerprint() != m.fingerprint() || old.config != *cfg {
            return Err(CliError::Config(format!(
                "{} holds a run with different inputs or configuration; choose another --out",
                dir.root.display()
            )));
        }
        return Ok(());
    }
    m.write_new(&path)?;
    std::fs::write(dir.path("config.toml"), cfg.to_toml_string())?;
    Ok(())
}

/// Stage commands on an existing run record their own manifest beside the
/// original one, which is never rewritten.
fn stage_manifest(dir: &RunDir, command: &str, cfg: &Config, svc: &Services) -> CliResult<()> {
    let m = RunManifest::new(command, cfg, svc.prompts.hashes(), BTreeMap::new(), svc.backend_ids());
    let path = dir.path(&format!("manifest.{command}.json"));
    if path.is_file() {
        std::fs::remove_file(&path)?;
    }
    m.write_new(&path)
}

fn finish(dir: &RunDir, status: &str) -> CliResult<()> {
    let run_id = RunManifest::read(&dir.path("manifest.json")).map(|m| m.run_id).unwrap_or_default();
    RunEnd { run_id, ended_at: chrono::Utc::now(), status: status.into() }.write(&dir.path("manifest.end.json"))
}

/// Ingest, split and open coding into a fresh journal.
fn code_stage(dir: &RunDir, svc: &Services, cfg: &Config, docs: &[RawDocument]) -> CliResult<(Journal, Codebook, Vec<Chunk>, Vec<Chunk>)> {
    let mut journal = Journal::new();
    let chunks = pipeline::ingest(&mut journal, docs, cfg)?;
    dir.save_chunk_manifest(&chunk_manifest(&chunks))?;
    let (train, test) = pipeline::split(&chunks, cfg)?;
    dir.save_split(&train, &test)?;
    dir.save_journal(&journal)?;
    let codebook = pipeline::open_code(svc, cfg, &mut journal, &train, cfg.seed)?;
    codebook.to_file().write(&dir.path("codebook.json"))?;
    dir.save_journal(&journal)?;
    Ok((journal, codebook, train, test))
}

/// Refinement with a checkpoint after every iteration, then the final
/// outputs. `prior` holds records already checkpointed for this journal.
fn refine_stage(dir: &RunDir, svc: &Services, cfg: &Config, journal: &mut Journal, train: &[Chunk], test: &[Chunk], prior: Vec<IterationRecord>) -> CliResult<RefineOutcome> {
    let mut so_far = prior.clone();
    let mut hook_err: Option<CliError> = None;
    let mut on_iteration = |r: &IterationRecord, j: &Journal| -> Result<(), traceta_core::Error> {
        so_far.push(r.clone());
        let res = (|| -> CliResult<()> {
            dir.save_journal(j)?;
            std::fs::write(dir.snapshot_path("hierarchy", r.iteration), j.hierarchy.canonical_json() + "\n")?;
            CodebookFile { codes: pipeline::live_codebook(j, None) }.write(&dir.snapshot_path("codebook", r.iteration))?;
            dir.save_records(&so_far)
        })();
        res.map_err(|e| {
            let m = e.to_string();
            hook_err = Some(e);
            traceta_core::Error::Config(m)
        })
    };
    let outcome = pipeline::refine(svc, cfg, journal, train, test, cfg.seed, prior, &mut on_iteration);
    if let Some(e) = hook_err {
        return Err(e);
    }
    let outcome = outcome?;
    dir.save_journal(journal)?;
    dir.save_outcome(&outcome)?;
    report::write_trajectory(&dir.path("trajectory.csv"), &outcome)?;
    let rows: Vec<_> = outcome.records.iter().map(|r| report::MetricsRow::new(format!("iter_{:02}", r.iteration), &r.report)).collect();
    report::write_metrics(&dir.path("metrics.csv"), &rows)?;
    Ok(outcome)
}

/// One complete run into `dir`, resuming from the last checkpoint when the
/// directory holds an interrupted run of the same configuration. A finished
/// run is returned as recorded.
pub fn run_seed(dir: &RunDir, cfg: &Config, docs: &[RawDocument], command: &str) -> CliResult<RefineOutcome> {
    let svc = services(dir, cfg)?;
    ensure_manifest(dir, command, cfg, &svc, docs)?;
    if let Some(o) = dir.load_outcome()? {
        tracing::info!(dir = %dir.root.display(), "run already complete");
        return Ok(o);
    }
    let prior = dir.load_records()?;
    let (mut journal, train, test) = match prior.last() {
        Some(last) => {
            tracing::info!(iterations = prior.len(), "resuming refinement from checkpoint");
            let journal = dir.load_journal_at(last.snapshot_aid)?;
            let (train, test) = dir.load_split(&journal)?;
            (journal, train, test)
        }
        None => {
            let (mut journal, _, train, test) = code_stage(dir, &svc, cfg, docs)?;
            pipeline::synthesize(&svc, cfg, &mut journal)?;
            dir.save_journal(&journal)?;
            (journal, train, test)
        }
    };
    let outcome = refine_stage(dir, &svc, cfg, &mut journal, &train, &test, prior)?;
    finish(dir, "completed")?;
    Ok(outcome)
}

fn outcome_summary(o: &RefineOutcome) -> String {
    let best = o.records.iter().find(|r| r.iteration == o.best).expect("best is recorded");
    format!(
        "{} iterations, stopped: {}; best iteration {} with composite {:.3} ({} themes, {} codes)",
        o.records.len(),
        o.stop_reason.as_str(),
        o.best,
        best.report.composite,
        best.n_themes,
        best.n_codes
    )
}

pub fn cmd_run(corpus: &Path, out: &Path, o: &Overrides) -> CliResult<String> {
    let docs = read_corpus(corpus)?;
    let dir = RunDir::create(out)?;
    let recorded = dir.path("manifest.json").is_file().then(|| dir.path("config.toml"));
    let cfg = o.resolve(recorded.as_deref())?;
    let outcome = run_seed(&dir, &cfg, &docs, "run")?;
    Ok(outcome_summary(&outcome))
}

pub fn cmd_code(corpus: &Path, out: &Path, o: &Overrides) -> CliResult<String> {
    let docs = read_corpus(corpus)?;
    let dir = RunDir::create(out)?;
    if dir.ledger_path().exists() {
        return Err(CliError::Config(format!("{} already holds a ledger; choose another --out", out.display())));
    }
    let cfg = o.resolve(None)?;
    let svc = services(&dir, &cfg)?;
    ensure_manifest(&dir, "code", &cfg, &svc, &docs)?;
    let (journal, codebook, train, test) = code_stage(&dir, &svc, &cfg, &docs)?;
    Ok(format!(
        "{} chunks ({} train, {} test); {} codes after consolidation; ledger has {} entries",
        train.len() + test.len(),
        train.len(),
        test.len(),
        codebook.len(),
        journal.ledger.len()
    ))
}

fn open_run(run: &Path, o: &Overrides) -> CliResult<(RunDir, Config)> {
    let dir = RunDir::open(run)?;
    let cfg = o.resolve(Some(&dir.path("config.toml")))?;
    Ok((dir, cfg))
}

pub fn cmd_synthesize(run: &Path, o: &Overrides) -> CliResult<String> {
    let (dir, cfg) = open_run(run, o)?;
    let svc = services(&dir, &cfg)?;
    stage_manifest(&dir, "synthesize", &cfg, &svc)?;
    let mut journal = dir.load_journal()?;
    traceta_core::synthesizer::Synthesizer { gateway: &svc.gateway, prompts: &svc.prompts, temperature: cfg.backend.temperature }
        .retire_layers(&mut journal, "synthesizer")?;
    pipeline::synthesize(&svc, &cfg, &mut journal)?;
    dir.save_journal(&journal)?;
    let h = &journal.hierarchy;
    Ok(format!("{} themes over {} subthemes and {} codes", h.live_themes().count(), h.live_subthemes().count(), h.live_codes().count()))
}

pub fn cmd_refine(run: &Path, o: &Overrides) -> CliResult<String> {
    let (dir, cfg) = open_run(run, o)?;
    let svc = services(&dir, &cfg)?;
    stage_manifest(&dir, "refine", &cfg, &svc)?;
    let prior = dir.load_records()?;
    let mut journal = match prior.last() {
        Some(last) => dir.load_journal_at(last.snapshot_aid)?,
        None => dir.load_journal()?,
    };
    if journal.hierarchy.live_themes().next().is_none() {
        return Err(CliError::Config("the run has no themes yet; run `synthesize` first".into()));
    }
    let (train, test) = dir.load_split(&journal)?;
    let outcome = refine_stage(&dir, &svc, &cfg, &mut journal, &train, &test, prior)?;
    finish(&dir, "completed")?;
    Ok(outcome_summary(&outcome))
}

fn metrics_line(label: &str, r: &traceta_core::evaluator::MetricReport) -> String {
    format!(
        "{label}: reusability {:.3} fitness {:.3} coverage {:.3} parsimony {:.3} consistency {:.3} composite {:.3}",
        r.reusability, r.fitness, r.coverage, r.parsimony, r.consistency, r.composite
    )
}

pub fn cmd_evaluate(run: &Path, o: &Overrides) -> CliResult<String> {
    let (dir, cfg) = open_run(run, o)?;
    let svc = services(&dir, &cfg)?;
    stage_manifest(&dir, "evaluate", &cfg, &svc)?;
    let journal = dir.load_journal()?;
    let (train, test) = dir.load_split(&journal)?;
    let codebook = pipeline::live_codebook(&journal, None);
    if codebook.is_empty() {
        return Err(CliError::Config("the run has no live codes to evaluate".into()));
    }
    let ev = pipeline::evaluate(&svc, &cfg, &codebook, &train, &test, cfg.seed)?;
    report::write_metrics(&dir.path("evaluation.csv"), &[report::MetricsRow::new("current", &ev.report)])?;
    dir.write_json("evaluation.json", &ev)?;
    Ok(metrics_line("current", &ev.report))
}

/// Evaluates externally produced codebooks on the corpus split, one metrics
/// row per codebook.
pub fn cmd_compare(corpus: &Path, codebooks: &[PathBuf], out: &Path, o: &Overrides) -> CliResult<String> {
    if codebooks.is_empty() {
        return Err(CliError::Config("compare needs at least one --codebook".into()));
    }
    let docs = read_corpus(corpus)?;
    let dir = RunDir::create(out)?;
    let cfg = o.resolve(None)?;
    let svc = services(&dir, &cfg)?;
    ensure_manifest(&dir, "compare", &cfg, &svc, &docs)?;
    let mut journal = Journal::new();
    let chunks = pipeline::ingest(&mut journal, &docs, &cfg)?;
    let (train, test) = pipeline::split(&chunks, &cfg)?;
    dir.save_split(&train, &test)?;
    dir.save_journal(&journal)?;
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for p in codebooks {
        let cb = CodebookFile::read(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        if cb.codes.is_empty() {
            return Err(CliError::Config(format!("{}: codebook has no codes", p.display())));
        }
        let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string());
        let ev = pipeline::evaluate(&svc, &cfg, &cb.codes, &train, &test, cfg.seed)?;
        lines.push(metrics_line(&name, &ev.report));
        rows.push(report::MetricsRow::new(name, &ev.report));
    }
    report::write_metrics(&dir.path("comparison.csv"), &rows)?;
    finish(&dir, "completed")?;
    Ok(lines.join("\n"))
}

/// Runs every seed into `out/seed_<s>/` and writes the paired statistics.
/// Finished seeds are skipped and an interrupted seed resumes from its last
/// checkpoint.
pub fn cmd_replicates(corpus: &Path, out: &Path, seeds: &[u64], o: &Overrides) -> CliResult<String> {
    if seeds.is_empty() {
        return Err(CliError::Config("replicates needs at least one seed".into()));
    }
    let docs = read_corpus(corpus)?;
    std::fs::create_dir_all(out)?;
    let mut outcomes = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let cfg = Overrides { seed: Some(s), ..o.clone() }.resolve(None)?;
        let dir = RunDir::create(&out.join(format!("seed_{s}")))?;
        tracing::info!(seed = s, "replicate");
        outcomes.push(run_seed(&dir, &cfg, &docs, "replicates")?);
    }
    let stats = report::replicate_stats(&outcomes)?;
    report::write_stats(&out.join("stats.csv"), &stats)?;
    report::write_maxima(&out.join("metric_maxima.csv"), &report::metric_maxima(&outcomes))?;
    let mut summary: Vec<String> = seeds.iter().zip(&outcomes).map(|(s, o)| format!("seed {s}: {}", outcome_summary(o))).collect();
    for r in &stats {
        let t = r.t.map(|t| format!("{t:.3}")).unwrap_or_else(|| "---".into());
        summary.push(format!("{:<12} iter1 {:.3} best {:.3} delta {:+.3} t {t} {}", r.metric, r.mean_iter1, r.mean_best, r.delta, r.significance()));
    }
    Ok(summary.join("\n"))
}

pub fn cmd_trace(run: &Path, id: &str) -> CliResult<String> {
    let dir = RunDir::open(run)?;
    let id: ArtifactId = id.parse().map_err(|e| CliError::Config(format!("artifact id `{id}`: {e}")))?;
    let journal = dir.load_journal()?;
    let chain = trace(&journal.hierarchy, &journal.ledger, id)?;
    let mut out = chain.root.render();
    out.push_str("\nledger:\n");
    for e in &chain.entries {
        let ids = |v: &[ArtifactId]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        out.push_str(&format!(
            "  aid {:>5} {:<14} {:<8} in [{}] out [{}] {}\n",
            e.aid,
            e.agent_role,
            e.action_type.as_str(),
            ids(&e.inputs),
            ids(&e.outputs),
            e.justification
        ));
    }
    Ok(out)
}

/// Outcome of replaying a run's ledger against its stored hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub enum ReplayVerdict {
    Pass { entries: usize },
    Fail { aid: Option<u64>, reason: String },
}

impl ReplayVerdict {
    pub fn line(&self) -> String {
        match self {
            ReplayVerdict::Pass { entries } => format!("PASS: {entries} ledger entries reproduce hierarchy.json"),
            ReplayVerdict::Fail { aid: Some(a), reason } => format!("FAIL at aid {a}: {reason}"),
            ReplayVerdict::Fail { aid: None, reason } => format!("FAIL: {reason}"),
        }
    }
}

pub fn cmd_replay(run: &Path) -> CliResult<ReplayVerdict> {
    let dir = RunDir::open(run)?;
    let ledger = match dir.read_ledger() {
        Ok(l) => l,
        Err(CliError::Provenance(m)) => return Ok(ReplayVerdict::Fail { aid: None, reason: m }),
        Err(e) => return Err(e),
    };
    let h = match replay(&ledger) {
        Ok(h) => h,
        Err(traceta_core::error::LedgerError::CorruptLedger { aid, reason }) => return Ok(ReplayVerdict::Fail { aid: Some(aid), reason }),
        Err(e) => return Ok(ReplayVerdict::Fail { aid: None, reason: e.to_string() }),
    };
    if let Err(m) = verify_completeness(&h, &ledger) {
        return Ok(ReplayVerdict::Fail { aid: None, reason: m });
    }
    let stored = std::fs::read_to_string(dir.path("hierarchy.json")).map_err(|e| CliError::Provenance(format!("hierarchy.json: {e}")))?;
    if stored.trim_end() != h.canonical_json() {
        return Ok(ReplayVerdict::Fail { aid: Some(ledger.last_aid()), reason: "replayed hierarchy differs from hierarchy.json".into() });
    }
    Ok(ReplayVerdict::Pass { entries: ledger.len() })
}

/// Matches the run's live themes to human themes (a JSON list of
/// `{label, description}`) and writes `alignment.csv`.
pub fn cmd_align(run: &Path, human: &Path, o: &Overrides) -> CliResult<String> {
    let (dir, cfg) = open_run(run, o)?;
    let text = std::fs::read_to_string(human).map_err(|e| CliError::Config(format!("{}: {e}", human.display())))?;
    let human: Vec<ThemeText> = serde_json::from_str(&text)?;
    let journal = dir.load_journal()?;
    let generated: Vec<ThemeText> = journal.hierarchy.live_themes().map(|t| ThemeText { label: t.label.clone(), description: t.description.clone() }).collect();
    let alignment = theme_alignment(&cfg.embedding.embedder(), &generated, &human).map_err(|e| CliError::Config(e.to_string()))?;
    report::write_alignment(&dir.path("alignment.csv"), &alignment)?;
    let mut lines: Vec<String> = alignment.rows.iter().map(|r| format!("{:.3}  {}  ->  {}", r.similarity, r.generated, r.closest_human)).collect();
    lines.push(format!("mean similarity {:.3}", alignment.mean_similarity));
    Ok(lines.join("\n"))
}
