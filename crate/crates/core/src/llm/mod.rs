//! Chat-completion gateway.
//!
//! [`Gateway`] wraps a [`ChatBackend`] with request validation, retries with
//! exponential backoff, an in-flight limit, an optional request/response trace
//! and a one-shot repair re-prompt for structured output.

mod http;
pub mod mock;
pub mod prompts;
pub mod structured;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub(crate) use http::{agent as http_agent, post_json as http_post_json};
pub use http::{HttpChatBackend, HttpSettings, DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL, DEFAULT_CHAT_MODEL};
pub use mock::MockBackend;
pub use prompts::PromptSet;
pub use structured::{parse_structured, SchemaTag, Structured};

use crate::error::GatewayError;
use crate::text::sha256_hex;

/// Which agent a request is made on behalf of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Coder,
    RelationClassifier,
    SubthemeSynthesizer,
    ThemeSynthesizer,
    Reviewer,
    DeductiveCoder,
    JudgeFitness,
    JudgeCoverage,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Coder => "coder",
            Role::RelationClassifier => "relation_classifier",
            Role::SubthemeSynthesizer => "subtheme_synthesizer",
            Role::ThemeSynthesizer => "theme_synthesizer",
            Role::Reviewer => "reviewer",
            Role::DeductiveCoder => "deductive_coder",
            Role::JudgeFitness => "judge_fitness",
            Role::JudgeCoverage => "judge_coverage",
        }
    }

    pub fn is_judge(self) -> bool {
        matches!(self, Role::JudgeFitness | Role::JudgeCoverage)
    }
}

pub const JUDGE_TEMPERATURE: f64 = 0.3;
pub const DEFAULT_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub role: Role,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed_hint: Option<u64>,
}

impl CompletionRequest {
    /// Judge roles default to temperature 0.3, everything else to 0.7.
    pub fn new(role: Role, prompt: impl Into<String>) -> Self {
        Self {
            role,
            prompt: prompt.into(),
            temperature: if role.is_judge() { JUDGE_TEMPERATURE } else { DEFAULT_TEMPERATURE },
            max_tokens: 4096,
            seed_hint: None,
        }
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed_hint = seed;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        if self.prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty prompt".into()));
        }
        Ok(())
    }

    /// Content hash keying the trace log.
    pub fn content_hash(&self) -> String {
        sha256_hex(format!(
            "{}\u{1f}{}\u{1f}{}\u{1f}{:?}\u{1f}{}",
            self.role.as_str(),
            self.temperature,
            self.max_tokens,
            self.seed_hint,
            self.prompt
        ))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub backend_id: String,
    pub attempt_count: u32,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying (timeouts, 429, 5xx).
    Transient(String),
    /// Retrying will not help (bad key, bad request).
    Fatal(String),
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> String;
    fn send(&self, request: &CompletionRequest) -> Result<BackendReply, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 5, base_delay: Duration::from_secs(1), factor: 2.0 }
    }
}

impl RetryPolicy {
    /// Delay slept before attempt `attempt` (1-based); none before the first.
    pub fn delay_before(&self, attempt: u32) -> Duration {
        if attempt <= 1 {
            return Duration::ZERO;
        }
        self.base_delay.mul_f64(self.factor.powi(attempt as i32 - 2))
    }
}

/// Counting semaphore bounding concurrent backend calls.
struct InFlight {
    limit: usize,
    busy: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(limit: usize) -> Self {
        Self { limit: limit.max(1), busy: Mutex::new(0), freed: Condvar::new() }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut busy = self.busy.lock().expect("in-flight lock");
        while *busy >= self.limit {
            busy = self.freed.wait(busy).expect("in-flight lock");
        }
        *busy += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut busy = self.0.busy.lock().expect("in-flight lock");
        *busy -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    key: String,
    role: &'a str,
    backend: &'a str,
    attempts: u32,
    prompt: &'a str,
    response: &'a str,
}

pub const REPAIR_SUFFIX: &str = "\n\nReturn only valid JSON matching the schema.";

pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    retry: RetryPolicy,
    limiter: InFlight,
    trace: Option<Mutex<BufWriter<File>>>,
}

impl Gateway {
    pub fn new(backend: Box<dyn ChatBackend>) -> Self {
        Self { backend, retry: RetryPolicy::default(), limiter: InFlight::new(4), trace: None }
    }

    pub fn mock() -> Self {
        Self::new(Box::new(MockBackend::new()))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.limiter = InFlight::new(limit);
        self
    }

    /// Appends one JSON line per call to `path`, so a resumed run extends
    /// the trace of the interrupted one.
    pub fn with_trace_file(mut self, path: &Path) -> std::io::Result<Self> {
        let f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        self.trace = Some(Mutex::new(BufWriter::new(f)));
        Ok(self)
    }

    pub fn max_in_flight(&self) -> usize {
        self.limiter.limit
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        request.validate()?;
        let _slot = self.limiter.acquire();
        let mut last = String::new();
        for attempt in 1..=self.retry.max_attempts.max(1) {
            let delay = self.retry.delay_before(attempt);
            if !delay.is_zero() {
                std::thread::sleep(delay);
            }
            match self.backend.send(request) {
                Ok(reply) => {
                    let result = CompletionResult {
                        text: reply.text,
                        backend_id: self.backend.id(),
                        attempt_count: attempt,
                        usage: reply.usage,
                    };
                    self.log(request, &result);
                    return Ok(result);
                }
                Err(BackendError::Transient(e)) => {
                    tracing::warn!(role = request.role.as_str(), attempt, "transient backend failure: {e}");
                    last = e;
                }
                Err(BackendError::Fatal(e)) => {
                    return Err(GatewayError::BackendUnavailable { attempts: attempt, reason: e });
                }
            }
        }
        Err(GatewayError::BackendUnavailable { attempts: self.retry.max_attempts.max(1), reason: last })
    }

    /// Completes and parses under `schema`; on a parse failure re-prompts once
    /// with a repair instruction before giving up.
    pub fn complete_structured(
        &self,
        request: &CompletionRequest,
        schema: SchemaTag,
    ) -> Result<Structured, GatewayError> {
        let first = self.complete(request)?;
        match parse_structured(&first.text, schema) {
            Ok(v) => Ok(v),
            Err(err) => {
                tracing::warn!(role = request.role.as_str(), "structured parse failed, re-prompting: {err}");
                let mut repair = request.clone();
                repair.prompt.push_str(REPAIR_SUFFIX);
                let second = self.complete(&repair)?;
                parse_structured(&second.text, schema)
            }
        }
    }

    fn log(&self, request: &CompletionRequest, result: &CompletionResult) {
        let Some(trace) = &self.trace else { return };
        let rec = TraceRecord {
            key: request.content_hash(),
            role: request.role.as_str(),
            backend: &result.backend_id,
            attempts: result.attempt_count,
            prompt: &request.prompt,
            response: &result.text,
        };
        let mut w = trace.lock().expect("trace lock");
        if serde_json::to_writer(&mut *w, &rec).is_ok() {
            let _ = w.write_all(b"\n");
            let _ = w.flush();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Flaky {
        fail_first: u32,
        calls: AtomicU32,
        fatal: bool,
    }

    impl ChatBackend for Flaky {
        fn id(&self) -> String {
            "flaky".into()
        }
        fn send(&self, _r: &CompletionRequest) -> Result<BackendReply, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
            if self.fatal {
                return Err(BackendError::Fatal("401".into()));
            }
            if n <= self.fail_first {
                Err(BackendError::Transient("503".into()))
            } else {
                Ok(BackendReply { text: "{\"score\": 7}".into(), usage: Usage::default() })
            }
        }
    }

    fn fast() -> RetryPolicy {
        RetryPolicy { max_attempts: 5, base_delay: Duration::ZERO, factor: 2.0 }
    }

    #[test]
    fn backoff_schedule() {
        let p = RetryPolicy::default();
        let d: Vec<u64> = (1..=5).map(|a| p.delay_before(a).as_secs()).collect();
        assert_eq!(d, [0, 1, 2, 4, 8]);
    }

    #[test]
    fn retries_transient_then_succeeds() {
        let g = Gateway::new(Box::new(Flaky { fail_first: 3, calls: AtomicU32::new(0), fatal: false })).with_retry(fast());
        let r = g.complete(&CompletionRequest::new(Role::JudgeFitness, "x")).unwrap();
        assert_eq!(r.attempt_count, 4);
        assert!(r.attempt_count <= 5);
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let g = Gateway::new(Box::new(Flaky { fail_first: 99, calls: AtomicU32::new(0), fatal: false })).with_retry(fast());
        let err = g.complete(&CompletionRequest::new(Role::Coder, "x")).unwrap_err();
        assert!(matches!(err, GatewayError::BackendUnavailable { attempts: 5, .. }));
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let b = Flaky { fail_first: 0, calls: AtomicU32::new(0), fatal: true };
        let g = Gateway::new(Box::new(b)).with_retry(fast());
        let err = g.complete(&CompletionRequest::new(Role::Coder, "x")).unwrap_err();
        assert!(matches!(err, GatewayError::BackendUnavailable { attempts: 1, .. }));
    }

    #[test]
    fn negative_temperature_rejected_before_dispatch() {
        let b = Flaky { fail_first: 0, calls: AtomicU32::new(0), fatal: false };
        let g = Gateway::new(Box::new(b)).with_retry(fast());
        let err = g.complete(&CompletionRequest::new(Role::Coder, "x").with_temperature(-1.0)).unwrap_err();
        assert!(matches!(err, GatewayError::InvalidRequest(_)));
    }

    #[test]
    fn judge_roles_default_to_low_temperature() {
        assert_eq!(CompletionRequest::new(Role::JudgeCoverage, "x").temperature, 0.3);
        assert_eq!(CompletionRequest::new(Role::JudgeFitness, "x").temperature, 0.3);
    }

    struct Scripted(Mutex<Vec<String>>);
    impl ChatBackend for Scripted {
        fn id(&self) -> String {
            "scripted".into()
        }
        fn send(&self, _r: &CompletionRequest) -> Result<BackendReply, BackendError> {
            let mut v = self.0.lock().unwrap();
            Ok(BackendReply { text: v.remove(0), usage: Usage::default() })
        }
    }

    #[test]
    fn one_repair_reprompt_then_error() {
        let g = Gateway::new(Box::new(Scripted(Mutex::new(vec!["nope".into(), "{\"score\": 4}".into()]))));
        let s = g.complete_structured(&CompletionRequest::new(Role::JudgeFitness, "x"), SchemaTag::JudgeScore).unwrap();
        assert_eq!(s, Structured::Score(4));
        let g = Gateway::new(Box::new(Scripted(Mutex::new(vec!["nope".into(), "still no".into()]))));
        let e = g.complete_structured(&CompletionRequest::new(Role::JudgeFitness, "x"), SchemaTag::JudgeScore).unwrap_err();
        assert!(matches!(e, GatewayError::MalformedResponse { .. }));
    }

    struct Counting {
        now: AtomicUsize,
        peak: AtomicUsize,
    }
    impl ChatBackend for Arc<Counting> {
        fn id(&self) -> String {
            "counting".into()
        }
        fn send(&self, _r: &CompletionRequest) -> Result<BackendReply, BackendError> {
            let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(n, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            self.now.fetch_sub(1, Ordering::SeqCst);
            Ok(BackendReply { text: "ok".into(), usage: Usage::default() })
        }
    }

    #[test]
    fn in_flight_limit_bounds_parallelism() {
        let c = Arc::new(Counting { now: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
        let g = Gateway::new(Box::new(c.clone())).with_max_in_flight(2);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| g.complete(&CompletionRequest::new(Role::Coder, "x")).unwrap());
            }
        });
        assert!(c.peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn trace_file_is_keyed_by_content_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let g = Gateway::mock().with_trace_file(&path).unwrap();
        let req = CompletionRequest::new(Role::JudgeFitness, "<<<EXCERPT c\nhello\nEXCERPT>>>");
        g.complete(&req).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let rec: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(rec["key"], req.content_hash());
        assert_eq!(rec["role"], "judge_fitness");
    }
}
