//! OpenAI-style HTTP chat backend.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, BackendReply, ChatBackend, CompletionRequest, Usage};

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_CHAT_MODEL: &str = "gpt-4o-mini";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpSettings {
    /// Base URL up to and including the API version, e.g. `https://host/v1`.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpSettings {
    /// Settings with the key read from `key_env`, if set.
    pub fn from_env(base_url: &str, model: &str, key_env: &str, timeout: Duration) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key: std::env::var(key_env).ok().filter(|k| !k.is_empty()),
            timeout,
        }
    }
}

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::new_with_config(
        ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build(),
    )
}

/// POSTs `body` and returns the decoded JSON reply. 429 and 5xx statuses and
/// transport failures are transient; other non-2xx statuses are fatal.
pub(crate) fn post_json(agent: &ureq::Agent, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value, BackendError> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(key) = api_key {
        req = req.header("Authorization", format!("Bearer {key}"));
    }
    let mut resp = req.send_json(body).map_err(|e| BackendError::Transient(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(|e| BackendError::Transient(e.to_string()))?;
    match status {
        200..=299 => serde_json::from_str(&text).map_err(|e| BackendError::Transient(format!("invalid JSON body: {e}"))),
        429 | 500..=599 => Err(BackendError::Transient(format!("HTTP {status}: {}", truncate(&text)))),
        _ => Err(BackendError::Fatal(format!("HTTP {status}: {}", truncate(&text)))),
    }
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(200) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

pub struct HttpChatBackend {
    settings: HttpSettings,
    agent: ureq::Agent,
}

impl HttpChatBackend {
    pub fn new(settings: HttpSettings) -> Self {
        let agent = agent(settings.timeout);
        Self { settings, agent }
    }

    fn body(&self, r: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": self.settings.model,
            "messages": [{ "role": "user", "content": r.prompt }],
            "temperature": r.temperature,
            "max_tokens": r.max_tokens,
        });
        if let Some(seed) = r.seed_hint {
            body["seed"] = json!(seed);
        }
        body
    }
}

impl ChatBackend for HttpChatBackend {
    fn id(&self) -> String {
        format!("http:{}", self.settings.model)
    }

    fn send(&self, request: &CompletionRequest) -> Result<BackendReply, BackendError> {
        let url = format!("{}/chat/completions", self.settings.base_url);
        let v = post_json(&self.agent, &url, self.settings.api_key.as_deref(), &self.body(request))?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::Transient("response lacks choices[0].message.content".into()))?
            .to_string();
        let usage = Usage {
            prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        };
        Ok(BackendReply { text, usage })
    }
}

#[cfg(test)]
pub(crate) mod fake_server {
    //! Minimal HTTP/1.1 server answering a scripted sequence of responses.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};
    use std::thread::JoinHandle;

    pub struct FakeServer {
        pub base_url: String,
        pub requests: Arc<Mutex<Vec<(String, String)>>>,
        handle: Option<JoinHandle<()>>,
    }

    impl FakeServer {
        /// Serves one connection per scripted `(status, body)` pair, then exits.
        pub fn start(script: Vec<(u16, String)>) -> Self {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            let base_url = format!("http://{}/v1", listener.local_addr().unwrap());
            let requests = Arc::new(Mutex::new(Vec::new()));
            let log = requests.clone();
            let handle = std::thread::spawn(move || {
                for (status, body) in script {
                    let Ok((stream, _)) = listener.accept() else { return };
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut head = String::new();
                    let mut len = 0usize;
                    loop {
                        let mut line = String::new();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                            break;
                        }
                        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                            len = v.trim().parse().unwrap_or(0);
                        }
                        head.push_str(&line);
                    }
                    let mut buf = vec![0u8; len];
                    reader.read_exact(&mut buf).unwrap();
                    log.lock().unwrap().push((head, String::from_utf8(buf).unwrap()));
                    let mut stream = stream;
                    let resp = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    stream.write_all(resp.as_bytes()).unwrap();
                }
            });
            Self { base_url, requests, handle: Some(handle) }
        }
    }

    impl Drop for FakeServer {
        fn drop(&mut self) {
            if let Some(h) = self.handle.take() {
                let _ = h.join();
            }
        }
    }
}
