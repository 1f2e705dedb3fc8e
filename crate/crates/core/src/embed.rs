//! Text embeddings and vector utilities.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::artifact::Code;
use crate::error::EmbedError;
use crate::llm::{BackendError, HttpSettings};
use crate::text::{content_tokens, sha256_hex, tokens};

pub const DEFAULT_DIM: usize = 384;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub model_id: String,
    pub source_sha256: String,
}

pub trait EmbedBackend: Send + Sync {
    fn model_id(&self) -> String;
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbedError>;
}

/// Token-hash bag of words: each content token adds ±1 (sign and index from
/// a seeded hash of the token) to one of `dim` coordinates, then the vector
/// is L2-normalised. Texts sharing no tokens are near-orthogonal.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
}

impl MockEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0);
        Self { dim, seed }
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM, 0)
    }
}

impl EmbedBackend for MockEmbedder {
    fn model_id(&self) -> String {
        format!("mock-hash-{}-s{}", self.dim, self.seed)
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let mut toks = content_tokens(text);
        if toks.is_empty() {
            toks = tokens(text);
        }
        if toks.is_empty() {
            toks = vec![text.trim().to_string()];
        }
        let mut v = vec![0.0; self.dim];
        for t in toks {
            let d = Sha256::digest(format!("{}:{t}", self.seed).as_bytes());
            let mut b = [0u8; 8];
            b.copy_from_slice(&d[..8]);
            let idx = (u64::from_le_bytes(b) % self.dim as u64) as usize;
            v[idx] += if d[8] & 1 == 0 { 1.0 } else { -1.0 };
        }
        normalize(&mut v)?;
        Ok(v)
    }
}

/// OpenAI-style `/embeddings` endpoint.
pub struct HttpEmbedder {
    settings: HttpSettings,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(settings: HttpSettings) -> Self {
        let agent = crate::llm::http_agent(settings.timeout);
        Self { settings, agent }
    }
}

impl EmbedBackend for HttpEmbedder {
    fn model_id(&self) -> String {
        format!("http:{}", self.settings.model)
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let url = format!("{}/embeddings", self.settings.base_url);
        let body = json!({ "model": self.settings.model, "input": text });
        let mut last = String::new();
        for attempt in 0..3u32 {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(500 << attempt));
            }
            match crate::llm::http_post_json(&self.agent, &url, self.settings.api_key.as_deref(), &body) {
                Ok(v) => {
                    let arr = v["data"][0]["embedding"]
                        .as_array()
                        .ok_or_else(|| EmbedError::BackendUnavailable("response lacks data[0].embedding".into()))?;
                    return arr
                        .iter()
                        .map(|x| x.as_f64().filter(|f| f.is_finite()))
                        .collect::<Option<Vec<f64>>>()
                        .ok_or_else(|| EmbedError::BackendUnavailable("non-numeric embedding component".into()));
                }
                Err(BackendError::Transient(e)) => last = e,
                Err(BackendError::Fatal(e)) => return Err(EmbedError::BackendUnavailable(e)),
            }
        }
        Err(EmbedError::BackendUnavailable(last))
    }
}

/// Caching front end. Every vector produced within one embedder has the
/// dimension of the first.
pub struct Embedder {
    backend: Box<dyn EmbedBackend>,
    cache: RwLock<HashMap<String, Arc<Embedding>>>,
    dim: RwLock<Option<usize>>,
}

impl Embedder {
    pub fn new(backend: Box<dyn EmbedBackend>) -> Self {
        Self { backend, cache: RwLock::new(HashMap::new()), dim: RwLock::new(None) }
    }

    pub fn mock(dim: usize, seed: u64) -> Self {
        Self::new(Box::new(MockEmbedder::new(dim, seed)))
    }

    pub fn model_id(&self) -> String {
        self.backend.model_id()
    }

    pub fn cache_len(&self) -> usize {
        self.cache.read().expect("embed cache").len()
    }

    pub fn embed(&self, text: &str) -> Result<Arc<Embedding>, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let key = sha256_hex(text);
        if let Some(e) = self.cache.read().expect("embed cache").get(&key) {
            return Ok(e.clone());
        }
        let vector = self.backend.embed_raw(text)?;
        {
            let mut dim = self.dim.write().expect("embed dim");
            match *dim {
                Some(d) if d != vector.len() => return Err(EmbedError::DimensionMismatch(d, vector.len())),
                Some(_) => {}
                None => *dim = Some(vector.len()),
            }
        }
        let e = Arc::new(Embedding { vector, model_id: self.backend.model_id(), source_sha256: key.clone() });
        Ok(self.cache.write().expect("embed cache").entry(key).or_insert(e).clone())
    }

    pub fn embed_code(&self, code: &Code) -> Result<Arc<Embedding>, EmbedError> {
        self.embed(&code_representation(&code.label, &code.description))
    }
}

/// Text embedded for a code: its label and description joined as one passage.
pub fn code_representation(label: &str, description: &str) -> String {
    let label = label.trim().trim_end_matches('.');
    if description.trim().is_empty() {
        label.to_string()
    } else {
        format!("{label}. {}", description.trim())
    }
}

fn normalize(v: &mut [f64]) -> Result<(), EmbedError> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, EmbedError> {
    if u.len() != v.len() {
        return Err(EmbedError::DimensionMismatch(u.len(), v.len()));
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}
