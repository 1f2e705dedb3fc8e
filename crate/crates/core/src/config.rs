//! Run configuration: one versioned TOML document. Unknown keys are errors.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::llm::{HttpSettings, RetryPolicy, DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL, DEFAULT_CHAT_MODEL};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    pub seed: u64,
    pub research_question: String,
    pub chunking: ChunkingConfig,
    pub split: SplitConfig,
    pub coding: CodingConfig,
    pub review: ReviewConfig,
    pub refine: RefineConfig,
    pub evaluation: EvaluationConfig,
    pub backend: BackendConfig,
    pub embedding: EmbeddingConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 42,
            research_question: "What experiences, needs and concerns do participants describe?".into(),
            chunking: ChunkingConfig::default(),
            split: SplitConfig::default(),
            coding: CodingConfig::default(),
            review: ReviewConfig::default(),
            refine: RefineConfig::default(),
            evaluation: EvaluationConfig::default(),
            backend: BackendConfig::default(),
            embedding: EmbeddingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkMode {
    Words,
    Chars,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkingConfig {
    pub mode: ChunkMode,
    pub words: usize,
    pub word_overlap: usize,
    pub max_chars: usize,
    pub overlap_chars: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self { mode: ChunkMode::Words, words: 2048, word_overlap: 200, max_chars: 8000, overlap_chars: 400 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratio: f64,
    /// Held fixed across replicates, independent of the run seed.
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { ratio: 0.8, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodingConfig {
    pub codes_per_chunk: usize,
    pub min_quote_chars: usize,
    pub max_quote_chars: usize,
    pub sim_threshold: f64,
    pub low_freq: usize,
    pub w_frequency: f64,
    pub w_in_degree: f64,
}

impl Default for CodingConfig {
    fn default() -> Self {
        Self {
            codes_per_chunk: 20,
            min_quote_chars: 20,
            max_quote_chars: 1000,
            sim_threshold: 0.5,
            low_freq: 2,
            w_frequency: 1.0,
            w_in_degree: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewConfig {
    pub min_quotes: usize,
    pub duplicate_threshold: f64,
    /// A subtheme is oversized when it holds more than this multiple of the
    /// median subtheme size (and at least `min_split_size` codes).
    pub granularity_factor: f64,
    pub min_split_size: usize,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        Self { min_quotes: 3, duplicate_threshold: 0.9, granularity_factor: 3.0, min_split_size: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub max_rounds: usize,
    pub sample_chunks: usize,
    pub jaccard_stop: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { max_rounds: 10, sample_chunks: 5, jaccard_stop: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub judge_sample_size: usize,
    pub max_assigned: usize,
    pub judge_temperature: f64,
    /// Reusability, fitness, coverage, parsimony, consistency.
    pub weights: [f64; 5],
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { judge_sample_size: 5, max_assigned: 20, judge_temperature: 0.3, weights: [0.2; 5] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub backoff_factor: f64,
    pub trace: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            base_url: DEFAULT_BASE_URL.into(),
            model: DEFAULT_CHAT_MODEL.into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 120,
            temperature: 0.7,
            max_tokens: 4096,
            max_in_flight: 4,
            max_attempts: 5,
            base_delay_ms: 1000,
            backoff_factor: 2.0,
            trace: true,
        }
    }
}

impl BackendConfig {
    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts,
            base_delay: Duration::from_millis(self.base_delay_ms),
            factor: self.backoff_factor,
        }
    }

    pub fn http_settings(&self) -> HttpSettings {
        HttpSettings::from_env(&self.base_url, &self.model, &self.api_key_env, Duration::from_secs(self.timeout_secs))
    }

    /// Gateway for this backend with its retry policy and concurrency limit.
    pub fn gateway(&self) -> crate::llm::Gateway {
        let g = match self.kind {
            BackendKind::Mock => crate::llm::Gateway::mock(),
            BackendKind::Http => crate::llm::Gateway::new(Box::new(crate::llm::HttpChatBackend::new(self.http_settings()))),
        };
        g.with_retry(self.retry()).with_max_in_flight(self.max_in_flight)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub kind: BackendKind,
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub dim: usize,
    pub timeout_secs: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            base_url: DEFAULT_BASE_URL.into(),
            model: "all-MiniLM-L6-v2".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            dim: crate::embed::DEFAULT_DIM,
            timeout_secs: 60,
        }
    }
}

impl EmbeddingConfig {
    pub fn http_settings(&self) -> HttpSettings {
        HttpSettings::from_env(&self.base_url, &self.model, &self.api_key_env, Duration::from_secs(self.timeout_secs))
    }

    /// The mock embedder ignores the run seed so vectors agree across replicates.
    pub fn embedder(&self) -> crate::embed::Embedder {
        match self.kind {
            BackendKind::Mock => crate::embed::Embedder::mock(self.dim, 0),
            BackendKind::Http => crate::embed::Embedder::new(Box::new(crate::embed::HttpEmbedder::new(self.http_settings()))),
        }
    }
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self, Error> {
        let cfg: Config = toml::from_str(s).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        let c = &self.chunking;
        if c.words <= c.word_overlap {
            return bad(format!("chunking.words ({}) must exceed chunking.word_overlap ({})", c.words, c.word_overlap));
        }
        if c.max_chars <= c.overlap_chars {
            return bad(format!("chunking.max_chars ({}) must exceed chunking.overlap_chars ({})", c.max_chars, c.overlap_chars));
        }
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            return bad(format!("split.ratio {} must lie in (0, 1)", self.split.ratio));
        }
        if self.coding.codes_per_chunk == 0 {
            return bad("coding.codes_per_chunk must be positive".into());
        }
        if self.coding.min_quote_chars > self.coding.max_quote_chars || self.coding.max_quote_chars == 0 {
            return bad("coding.min_quote_chars must not exceed coding.max_quote_chars".into());
        }
        if self.refine.max_rounds == 0 {
            return bad("refine.max_rounds must be at least 1".into());
        }
        if self.evaluation.max_assigned == 0 || self.evaluation.judge_sample_size == 0 {
            return bad("evaluation.max_assigned and evaluation.judge_sample_size must be positive".into());
        }
        let w = &self.evaluation.weights;
        if w.iter().any(|x| *x < 0.0 || !x.is_finite()) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("evaluation.weights must be non-negative and sum to 1, got {w:?}"));
        }
        if self.backend.temperature < 0.0 || self.evaluation.judge_temperature < 0.0 {
            return bad("temperatures must be >= 0".into());
        }
        if self.embedding.dim == 0 {
            return bad("embedding.dim must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = Config::default();
        assert_eq!(Config::from_toml_str(&c.to_toml_string()).unwrap(), c);
        assert_eq!(Config::from_toml_str("").unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = Config::from_toml_str("[coding]\nsim_treshold = 0.4\n").unwrap_err().to_string();
        assert!(e.contains("sim_treshold"), "{e}");
        let e = Config::from_toml_str("bogus = 1\n").unwrap_err().to_string();
        assert!(e.contains("bogus"), "{e}");
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c = Config::from_toml_str("seed = 7\n[chunking]\nwords = 300\nword_overlap = 30\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.chunking.words, 300);
        assert_eq!(c.chunking.max_chars, 8000);
        assert_eq!(c.coding.codes_per_chunk, 20);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_toml_str("version = 2").is_err());
        assert!(Config::from_toml_str("[chunking]\nwords = 100\nword_overlap = 100").is_err());
        assert!(Config::from_toml_str("[evaluation]\nweights = [0.5, 0.5, 0.5, 0.0, 0.0]").is_err());
        assert!(Config::from_toml_str("[split]\nratio = 1.0").is_err());
    }
}
