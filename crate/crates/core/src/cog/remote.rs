//! Grounding backend that asks a chat-completion endpoint for each phase.
//!
//! Responses are validated against the phase schema; an invalid response is
//! sent back with a repair request up to `max_retries` times. Returned content
//! is only ever parsed as data.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::schema::{describe, validate_phase};
use super::{BackendError, GroundingBackend, Phase};

/// Environment variable holding the bearer token.
pub const DEFAULT_API_KEY_ENV: &str = "TASKREP_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}
fn default_retries() -> usize {
    2
}
fn default_in_flight() -> usize {
    1
}
fn default_timeout() -> f64 {
    60.0
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: default_key_env(),
            max_retries: default_retries(),
            max_in_flight: default_in_flight(),
            timeout_s: default_timeout(),
        }
    }
}

/// Sends one JSON request and returns the JSON response body.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, String>;
}

struct Gate {
    used: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut used = self.used.lock().expect("gate lock");
        while *used >= self.limit {
            used = self.freed.wait(used).expect("gate lock");
        }
        *used += 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.gate.used.lock().expect("gate lock") -= 1;
        self.gate.freed.notify_one();
    }
}

pub struct RemoteBackend<T: Transport> {
    cfg: RemoteConfig,
    transport: T,
    api_key: Option<String>,
    retries: AtomicU64,
    gate: Gate,
}

impl<T: Transport> RemoteBackend<T> {
    /// Reads the API key from the configured environment variable.
    pub fn new(cfg: RemoteConfig, transport: T) -> Self {
        let api_key = std::env::var(&cfg.api_key_env).ok();
        Self::with_key(cfg, transport, api_key)
    }

    pub fn with_key(cfg: RemoteConfig, transport: T, api_key: Option<String>) -> Self {
        let limit = cfg.max_in_flight.max(1);
        RemoteBackend {
            cfg,
            transport,
            api_key,
            retries: AtomicU64::new(0),
            gate: Gate {
                used: Mutex::new(0),
                freed: Condvar::new(),
                limit,
            },
        }
    }

    /// Repair requests sent so far.
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::SeqCst)
    }
}

/// System prompt for a phase. These texts are original to this project.
pub fn system_prompt(phase: Phase) -> String {
    let task = match phase {
        Phase::Decompose => {
            "Split the instruction into ordered stages. For each stage give short operational hints. \
             Hints must not name representation types (no 'point', 'vector', 'pose', '6D' or 'keypoint')."
        }
        Phase::Constraints => {
            "For every hint, state the spatial constraints it implies. Each constraint lists the scene \
             objects it involves and the representation each one needs."
        }
        Phase::Estimate => {
            "For every request, estimate the probability that each listed tool extracts the required \
             representation of that object correctly."
        }
        Phase::Emit => {
            "Write each constraint as a cost expression in the constraint language. The cost must be \
             zero when the constraint holds. Give each stage's final gripper command, motion style and \
             optional stage program."
        }
        Phase::SingleShot => {
            "Produce stages, constraints, tool estimates and cost expressions for the instruction in one answer."
        }
    };
    format!(
        "You ground robot manipulation instructions. {task}\nReply with a single JSON object of exactly this shape, \
         with every field present (use null where a value is absent):\n{}",
        describe(phase)
    )
}

fn extract_json(content: &str) -> Result<Value, String> {
    let trimmed = content.trim();
    let body = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .and_then(|s| s.strip_suffix("```"))
        .unwrap_or(trimmed);
    serde_json::from_str(body.trim()).map_err(|e| format!("response is not JSON: {e}"))
}

fn message_content(resp: &Value) -> Result<&str, String> {
    resp.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| "response has no choices[0].message.content".to_string())
}

impl<T: Transport> GroundingBackend for RemoteBackend<T> {
    fn call(&self, phase: Phase, payload: &Value) -> Result<Value, BackendError> {
        let _slot = self.gate.acquire();
        let mut messages = vec![
            json!({"role": "system", "content": system_prompt(phase)}),
            json!({"role": "user", "content": payload.to_string()}),
        ];
        let mut last_error = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                self.retries.fetch_add(1, Ordering::SeqCst);
            }
            let body = json!({
                "model": self.cfg.model,
                "messages": messages,
                "temperature": 0,
            });
            let resp = self
                .transport
                .post_json(&self.cfg.endpoint, self.api_key.as_deref(), &body)
                .map_err(|e| BackendError::new(format!("transport: {e}")))?;
            let content = message_content(&resp)
                .map_err(BackendError::new)?
                .to_string();
            match extract_json(&content).and_then(|v| validate_phase(phase, &v).map(|_| v)) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    last_error = e.clone();
                    messages.push(json!({"role": "assistant", "content": content}));
                    messages.push(json!({
                        "role": "user",
                        "content": format!(
                            "That reply does not match the required shape: {e}. Reply again with only the corrected JSON object."
                        ),
                    }));
                }
            }
        }
        Err(BackendError::new(format!(
            "schema validation failed after {} retries: {last_error}",
            self.cfg.max_retries
        )))
    }
}

/// HTTP transport over `ureq`.
#[cfg(feature = "remote")]
pub struct HttpTransport {
    agent: ureq::Agent,
}

#[cfg(feature = "remote")]
impl HttpTransport {
    pub fn new(timeout_s: f64) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_secs_f64(
                timeout_s.max(0.001),
            )))
            .build();
        HttpTransport {
            agent: config.into(),
        }
    }
}

#[cfg(feature = "remote")]
impl Transport for HttpTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, String> {
        let mut req = self.agent.post(url);
        if let Some(k) = bearer {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| e.to_string())
    }
}

#[cfg(feature = "remote")]
impl RemoteBackend<HttpTransport> {
    pub fn http(cfg: RemoteConfig) -> Self {
        let t = HttpTransport::new(cfg.timeout_s);
        Self::new(cfg, t)
    }
}
