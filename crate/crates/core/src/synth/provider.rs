//! Chat-completion providers: a live HTTP client and a replaying mock, both
//! behind retry and a JSON-lines audit log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::prompt::phase_key;
use crate::error::{Error, Result};

pub const ENV_ENDPOINT: &str = "SHIFTSEG_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "SHIFTSEG_LLM_MODEL";
pub const ENV_API_KEY: &str = "SHIFTSEG_LLM_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub raw: String,
    pub payload: Value,
    pub model: String,
    pub temperature: f64,
}

/// Failure of a single completion request.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportError {
    pub message: String,
    /// Whether another attempt could succeed.
    pub retryable: bool,
}

pub trait Provider: Send + Sync {
    fn model(&self) -> &str;
    fn complete(&self, prompt: &str) -> std::result::Result<String, TransportError>;
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Replays canned responses keyed by the prompt's SHA-256, falling back to its
/// `phase:task` key.
#[derive(Clone, Debug, Default)]
pub struct MockProvider {
    responses: BTreeMap<String, String>,
}

impl MockProvider {
    pub fn new(responses: BTreeMap<String, String>) -> Self {
        Self { responses }
    }

    /// Parses a JSON object whose values are response texts or JSON payloads.
    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, Value> = serde_json::from_str(text)?;
        Ok(Self::new(
            map.into_iter()
                .map(|(k, v)| {
                    let raw = match v {
                        Value::String(s) => s,
                        other => other.to_string(),
                    };
                    (k, raw)
                })
                .collect(),
        ))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl Provider for MockProvider {
    fn model(&self) -> &str {
        "mock"
    }

    fn complete(&self, prompt: &str) -> std::result::Result<String, TransportError> {
        self.responses
            .get(&prompt_hash(prompt))
            .or_else(|| phase_key(prompt).and_then(|k| self.responses.get(&k)))
            .cloned()
            .ok_or_else(|| TransportError {
                message: format!(
                    "mock provider has no response for prompt {} ({})",
                    prompt_hash(prompt),
                    phase_key(prompt).unwrap_or_default()
                ),
                retryable: false,
            })
    }
}

/// OpenAI-style chat-completions endpoint.
pub struct HttpProvider {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(endpoint: String, model: String, api_key: Option<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            endpoint,
            model,
            api_key,
            agent: ureq::Agent::new_with_config(config),
        }
    }

    /// Reads the endpoint, model and optional API key from the environment.
    pub fn from_env(timeout: Duration) -> Result<Self> {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
        let endpoint = var(ENV_ENDPOINT).ok_or_else(|| Error::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let model = var(ENV_MODEL).ok_or_else(|| Error::Config(format!("{ENV_MODEL} is not set")))?;
        Ok(Self::new(endpoint, model, var(ENV_API_KEY), timeout))
    }
}

impl Provider for HttpProvider {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str) -> std::result::Result<String, TransportError> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let transport = |e: ureq::Error| TransportError {
            message: e.to_string(),
            retryable: true,
        };
        let mut resp = req.send_json(&body).map_err(transport)?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(TransportError {
                message: format!("endpoint returned HTTP {status}"),
                retryable: status == 429 || status >= 500,
            });
        }
        let v: Value = resp.body_mut().read_json().map_err(transport)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| TransportError {
                message: "response has no choices[0].message.content".into(),
                retryable: false,
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub kind: String,
    pub prompt_sha256: String,
    pub attempt: u32,
    pub model: String,
    pub text: String,
}

/// Append-only JSON-lines record of every request and response.
#[derive(Debug, Default)]
pub struct AuditLog {
    path: Option<PathBuf>,
    file: Option<File>,
    entries: Vec<AuditEntry>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn append_to(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            file: Some(file),
            entries: Vec::new(),
        })
    }

    pub fn entries(&self) -> &[AuditEntry] {
        &self.entries
    }

    fn record(&mut self, kind: &str, prompt_sha256: &str, attempt: u32, model: &str, text: &str) -> Result<()> {
        let entry = AuditEntry {
            seq: self.entries.len() as u64,
            kind: kind.into(),
            prompt_sha256: prompt_sha256.into(),
            attempt,
            model: model.into(),
            text: text.into(),
        };
        if let Some(f) = &mut self.file {
            let line = serde_json::to_string(&entry)?;
            writeln!(f, "{line}").map_err(|e| Error::io(self.path.clone().unwrap_or_default(), e))?;
        }
        self.entries.push(entry);
        Ok(())
    }
}

/// Why a provider call produced no usable payload.
#[derive(Clone, Debug, PartialEq)]
pub enum CallError {
    Transport(String),
    Parse { raw: String, message: String },
}

impl From<CallError> for Error {
    fn from(e: CallError) -> Self {
        match e {
            CallError::Transport(m) => Error::Provider(m),
            CallError::Parse { message, .. } => Error::Provider(format!("unparseable response: {message}")),
        }
    }
}

/// Returns the JSON object embedded in `raw`, tolerating code fences and
/// surrounding prose.
pub fn extract_json(raw: &str) -> std::result::Result<Value, String> {
    let start = raw.find('{').ok_or("no JSON object in response")?;
    let end = raw.rfind('}').ok_or("no JSON object in response")?;
    if end < start {
        return Err("no JSON object in response".into());
    }
    serde_json::from_str(&raw[start..=end]).map_err(|e| e.to_string())
}

/// Sends `prompt`, retrying retryable transport failures with exponential
/// backoff, and parses the reply as JSON. Every attempt is audited.
pub fn call_provider(
    provider: &dyn Provider,
    prompt: &str,
    retry: &RetryPolicy,
    audit: &mut AuditLog,
) -> Result<std::result::Result<ProviderResponse, CallError>> {
    let hash = prompt_hash(prompt);
    let model = provider.model().to_string();
    let mut attempt = 0;
    loop {
        audit.record("request", &hash, attempt, &model, prompt)?;
        match provider.complete(prompt) {
            Ok(raw) => {
                audit.record("response", &hash, attempt, &model, &raw)?;
                return Ok(match extract_json(&raw) {
                    Ok(payload) => Ok(ProviderResponse {
                        raw,
                        payload,
                        model,
                        temperature: 0.0,
                    }),
                    Err(message) => {
                        audit.record("parse-error", &hash, attempt, &model, &message)?;
                        Err(CallError::Parse { raw, message })
                    }
                });
            }
            Err(e) => {
                audit.record("transport-error", &hash, attempt, &model, &e.message)?;
                if !e.retryable || attempt >= retry.max_retries {
                    return Ok(Err(CallError::Transport(format!(
                        "{} (after {} attempt(s))",
                        e.message,
                        attempt + 1
                    ))));
                }
                let delay = retry.base_delay_ms.saturating_mul(1u64 << attempt.min(16));
                std::thread::sleep(Duration::from_millis(delay));
                attempt += 1;
            }
        }
    }
}
