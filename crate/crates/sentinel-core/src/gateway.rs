//! Chat-completion HTTP client with bounded retries, a mock transport for
//! tests, and a record/replay transport for fully offline runs.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::error::{Result, SentinelError};
use crate::prompt::PromptBundle;

pub const ENV_API_KEY: &str = "KPM_LLM_API_KEY";
pub const ENV_BASE_URL: &str = "KPM_LLM_BASE_URL";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key. The key itself
    /// is read at call time and never stored or logged.
    pub api_key_env: String,
    pub reasoning_enabled: bool,
    pub timeout_secs: u64,
    pub max_retries: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Extra multiplicative backoff jitter fraction; 0.0 keeps the exact
    /// 1 s, 2 s, 4 s schedule.
    pub jitter: f64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            base_url: std::env::var(ENV_BASE_URL)
                .unwrap_or_else(|_| "https://api.openai.com/v1".to_string()),
            model: "gpt-4o".to_string(),
            api_key_env: ENV_API_KEY.to_string(),
            reasoning_enabled: false,
            timeout_secs: 60,
            max_retries: 3,
            temperature: 0.2,
            max_tokens: 1024,
            jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InsightText {
    pub text: String,
    pub provider: String,
    pub model: String,
    pub latency_ms: u64,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Minimal HTTP POST abstraction so the client can run against the real
/// network, scripted responses, or a recorded session.
pub trait Transport: Send + Sync {
    fn post(&self, url: &str, auth_bearer: Option<&str>, body: &str) -> Result<HttpResponse>;
}

impl Transport for Box<dyn Transport> {
    fn post(&self, url: &str, auth_bearer: Option<&str>, body: &str) -> Result<HttpResponse> {
        (**self).post(url, auth_bearer, body)
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

pub struct RealSleeper;

impl Sleeper for RealSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Records requested sleep durations instead of blocking.
#[derive(Default)]
pub struct FakeClock {
    pub sleeps: Mutex<Vec<Duration>>,
}

impl Sleeper for FakeClock {
    fn sleep(&self, duration: Duration) {
        self.sleeps.lock().unwrap().push(duration);
    }
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout_secs: u64) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(timeout_secs))
            .build()
            .map_err(|e| SentinelError::Transport(e.to_string()))?;
        Ok(HttpTransport { client })
    }
}

impl Transport for HttpTransport {
    fn post(&self, url: &str, auth_bearer: Option<&str>, body: &str) -> Result<HttpResponse> {
        let mut req = self
            .client
            .post(url)
            .header("content-type", "application/json")
            .body(body.to_string());
        if let Some(key) = auth_bearer {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| SentinelError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| SentinelError::Transport(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Scripted responses consumed in order; panics if exhausted. Requests are
/// kept for assertions.
pub struct MockTransport {
    responses: Mutex<Vec<HttpResponse>>,
    pub requests: Mutex<Vec<String>>,
}

impl MockTransport {
    pub fn new(script: Vec<(u16, &str)>) -> Self {
        let mut responses: Vec<HttpResponse> = script
            .into_iter()
            .map(|(status, body)| HttpResponse { status, body: body.to_string() })
            .collect();
        responses.reverse();
        MockTransport { responses: Mutex::new(responses), requests: Mutex::new(Vec::new()) }
    }
}

impl Transport for MockTransport {
    fn post(&self, _url: &str, _auth: Option<&str>, body: &str) -> Result<HttpResponse> {
        self.requests.lock().unwrap().push(body.to_string());
        self.responses
            .lock()
            .unwrap()
            .pop()
            .ok_or_else(|| SentinelError::Transport("mock script exhausted".into()))
    }
}

fn request_hash(url: &str, body: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(url.as_bytes());
    hasher.update(b"\n");
    hasher.update(body.as_bytes());
    format!("{:x}", hasher.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionMode {
    Record,
    Replay,
}

/// Persists request/response pairs keyed by a hash of (url, body). Record
/// mode forwards to an inner transport and writes through after every call;
/// replay mode answers purely from the store.
pub struct RecordReplayTransport {
    mode: SessionMode,
    inner: Option<Box<dyn Transport>>,
    path: PathBuf,
    entries: Mutex<BTreeMap<String, HttpResponse>>,
}

impl RecordReplayTransport {
    pub fn record(inner: Box<dyn Transport>, path: &Path) -> Result<Self> {
        let entries = if path.exists() { Self::load(path)? } else { BTreeMap::new() };
        Ok(RecordReplayTransport {
            mode: SessionMode::Record,
            inner: Some(inner),
            path: path.to_path_buf(),
            entries: Mutex::new(entries),
        })
    }

    pub fn replay(path: &Path) -> Result<Self> {
        Ok(RecordReplayTransport {
            mode: SessionMode::Replay,
            inner: None,
            path: path.to_path_buf(),
            entries: Mutex::new(Self::load(path)?),
        })
    }

    fn load(path: &Path) -> Result<BTreeMap<String, HttpResponse>> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn persist(&self, entries: &BTreeMap<String, HttpResponse>) -> Result<()> {
        let text = serde_json::to_string_pretty(entries)?;
        std::fs::write(&self.path, text)?;
        Ok(())
    }
}

impl Transport for RecordReplayTransport {
    fn post(&self, url: &str, auth: Option<&str>, body: &str) -> Result<HttpResponse> {
        let key = request_hash(url, body);
        match self.mode {
            SessionMode::Replay => self
                .entries
                .lock()
                .unwrap()
                .get(&key)
                .cloned()
                .ok_or(SentinelError::ReplayMiss(key)),
            SessionMode::Record => {
                let response =
                    self.inner.as_ref().expect("record mode has inner").post(url, auth, body)?;
                let mut entries = self.entries.lock().unwrap();
                entries.insert(key, response.clone());
                self.persist(&entries)?;
                Ok(response)
            }
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<crate::prompt::Message>,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    reasoning: Option<bool>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

fn excerpt(body: &str) -> String {
    body.chars().take(200).collect()
}

pub struct Gateway<T: Transport, S: Sleeper> {
    pub transport: T,
    pub sleeper: S,
}

impl<T: Transport, S: Sleeper> Gateway<T, S> {
    pub fn new(transport: T, sleeper: S) -> Self {
        Gateway { transport, sleeper }
    }

    /// Send the bundle and extract the first choice's text. Retries 429 and
    /// 5xx with exponential backoff (1 s base, doubling); auth failures are
    /// terminal.
    pub fn complete(&self, bundle: &PromptBundle, config: &ProviderConfig) -> Result<InsightText> {
        let url = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        let request = WireRequest {
            model: &config.model,
            messages: bundle.to_messages(),
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            reasoning: config.reasoning_enabled.then_some(true),
        };
        let body = serde_json::to_string(&request)?;
        let api_key = std::env::var(&config.api_key_env).ok();
        let start = Instant::now();

        let mut last_err = String::new();
        for attempt in 0..=config.max_retries {
            if attempt > 0 {
                let base = Duration::from_secs_f64(
                    f64::powi(2.0, attempt as i32 - 1) * (1.0 + config.jitter),
                );
                self.sleeper.sleep(base);
            }
            let response = self.transport.post(&url, api_key.as_deref(), &body)?;
            match response.status {
                200 => {
                    let parsed: WireResponse =
                        serde_json::from_str(&response.body).map_err(|e| {
                            SentinelError::ResponseParse {
                                message: e.to_string(),
                                excerpt: excerpt(&response.body),
                            }
                        })?;
                    let choice = parsed.choices.first().ok_or_else(|| {
                        SentinelError::ResponseParse {
                            message: "empty choices".into(),
                            excerpt: excerpt(&response.body),
                        }
                    })?;
                    if choice.message.content.is_empty() {
                        return Err(SentinelError::ResponseParse {
                            message: "empty message content".into(),
                            excerpt: excerpt(&response.body),
                        });
                    }
                    return Ok(InsightText {
                        text: choice.message.content.clone(),
                        provider: config.base_url.clone(),
                        model: config.model.clone(),
                        latency_ms: start.elapsed().as_millis() as u64,
                        prompt_tokens: parsed.usage.as_ref().and_then(|u| u.prompt_tokens),
                        completion_tokens: parsed
                            .usage
                            .as_ref()
                            .and_then(|u| u.completion_tokens),
                    });
                }
                401 | 403 => {
                    return Err(SentinelError::Auth(format!(
                        "provider rejected credentials (HTTP {})",
                        response.status
                    )))
                }
                429 | 500..=599 => {
                    last_err = format!("HTTP {}", response.status);
                }
                other => {
                    return Err(SentinelError::Transport(format!(
                        "unexpected HTTP {other}: {}",
                        excerpt(&response.body)
                    )))
                }
            }
        }
        Err(SentinelError::Transport(format!(
            "gave up after {} retries; last error: {last_err}",
            config.max_retries
        )))
    }
}
