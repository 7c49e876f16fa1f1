//! OpenAI-compatible `/chat/completions` client.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::warn;

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URL, e.g. `https://api.openai.com/v1`.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key. Empty means no
    /// authentication header is sent.
    pub api_key_env: String,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub request_timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_retries: 4,
            backoff_base_ms: 500,
            request_timeout_secs: 120,
        }
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    max_retries: u32,
    backoff_base: Duration,
}

enum Attempt {
    Done(ChatResponse),
    Retry(String),
    Fatal(LlmError),
}

impl HttpBackend {
    pub fn new(cfg: &HttpConfig) -> Result<Self, LlmError> {
        let api_key = if cfg.api_key_env.is_empty() {
            None
        } else {
            match std::env::var(&cfg.api_key_env) {
                Ok(k) if !k.is_empty() => Some(k),
                _ => {
                    return Err(LlmError::Auth(format!(
                        "environment variable {} is not set",
                        cfg.api_key_env
                    )))
                }
            }
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.request_timeout_secs.max(1)))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            url: format!("{}/chat/completions", cfg.endpoint.trim_end_matches('/')),
            model: cfg.model.clone(),
            api_key,
            max_retries: cfg.max_retries,
            backoff_base: Duration::from_millis(cfg.backoff_base_ms),
        })
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({ "role": m.role.as_str(), "content": m.content }))
            .collect();
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                return Attempt::Retry(e.to_string())
            }
            Err(e) => return Attempt::Fatal(LlmError::Transport(e.to_string())),
        };
        let status = resp.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            let text = resp.text().unwrap_or_default();
            return Attempt::Fatal(LlmError::Auth(format!("HTTP {status}: {text}")));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Retry(format!("HTTP {status}"));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Attempt::Fatal(LlmError::Transport(format!("HTTP {status}: {text}")));
        }
        let value: Value = match resp.json() {
            Ok(v) => v,
            Err(e) => return Attempt::Retry(format!("undecodable body: {e}")),
        };
        match parse_completion(&value) {
            Some(r) => Attempt::Done(r),
            None => Attempt::Fatal(LlmError::Transport(format!(
                "response missing choices[0].message.content: {value}"
            ))),
        }
    }
}

fn parse_completion(value: &Value) -> Option<ChatResponse> {
    let text = value["choices"][0]["message"]["content"].as_str()?.to_string();
    let usage = &value["usage"];
    Some(ChatResponse {
        text,
        prompt_tokens: usage["prompt_tokens"].as_u64().unwrap_or(0),
        completion_tokens: usage["completion_tokens"].as_u64().unwrap_or(0),
    })
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let body = self.body(request);
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                let exp = self.backoff_base.saturating_mul(1 << (attempt - 1).min(16));
                let jitter = rand::rng().random_range(0.5..=1.0);
                std::thread::sleep(exp.mul_f64(jitter));
            }
            match self.attempt(&body) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(reason) => {
                    warn!(attempt, %reason, "transient chat failure");
                    last = reason;
                }
            }
        }
        Err(LlmError::Transport(format!(
            "giving up after {} retries: {last}",
            self.max_retries
        )))
    }
}
