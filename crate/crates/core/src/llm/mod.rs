//! Chat-completion access behind one trait, with live HTTP, replay and
//! recording backends and per-run token accounting.

mod http;
mod ledger;
mod transcript;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig};
pub use ledger::{LedgerEntry, LedgerTotals, TokenLedger, TokenPair};
pub use transcript::{RecordingBackend, ReplayBackend, Transcript, TranscriptRecord};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("replay transcript exhausted after {records} records")]
    ReplayExhausted { records: usize },
    #[error("replay digest mismatch at record {index}: transcript has {expected}, request is {actual}")]
    ReplayDigestMismatch {
        index: usize,
        expected: String,
        actual: String,
    },
    #[error("LLM call budget of {budget} exhausted")]
    BudgetExhausted { budget: u32 },
    #[error("transcript error: {0}")]
    Transcript(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Operator name, used as the ledger key.
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Structured facts about the request (target module name, expected
    /// submodules). Never sent over the wire and excluded from the digest;
    /// offline backends use them to synthesize plausible answers.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub hints: BTreeMap<String, String>,
}

impl ChatRequest {
    pub fn new(tag: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            temperature: 0.0,
            max_output_tokens: 4096,
            tag: tag.into(),
            seed: None,
            hints: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        match self.messages.last() {
            None => return Err(LlmError::InvalidRequest("no messages".into())),
            Some(m) if m.role != Role::User => {
                return Err(LlmError::InvalidRequest("last message must come from the user".into()))
            }
            _ => {}
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 over the role/content pairs only.
    pub fn digest(&self) -> String {
        digest_messages(&self.messages)
    }

    pub fn hint(&self, key: &str) -> Option<&str> {
        self.hints.get(key).map(String::as_str)
    }
}

pub fn digest_messages(messages: &[ChatMessage]) -> String {
    let mut hasher = Sha256::new();
    for m in messages {
        let content = m.content.as_bytes();
        hasher.update(m.role.as_str().as_bytes());
        hasher.update([0u8]);
        hasher.update((content.len() as u64).to_le_bytes());
        hasher.update(content);
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// A chat-completion provider.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<F> ChatBackend for F
where
    F: Fn(&ChatRequest) -> Result<ChatResponse, LlmError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self(request)
    }
}

/// Sampling parameters applied to every request a session builds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub temperature: f64,
    /// Per-operator overrides keyed by tag.
    pub per_tag_temperature: BTreeMap<String, f64>,
    pub max_output_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.2,
            per_tag_temperature: BTreeMap::new(),
            max_output_tokens: 4096,
            seed: None,
        }
    }
}

/// One run's view of a backend: enforces the call budget and appends every
/// completed call to the run's token ledger.
pub struct LlmSession {
    backend: Arc<dyn ChatBackend>,
    ledger: TokenLedger,
    calls: AtomicU32,
    budget: Option<u32>,
    sampling: SamplingConfig,
}

impl LlmSession {
    pub fn new(backend: Arc<dyn ChatBackend>, sampling: SamplingConfig) -> Self {
        Self {
            backend,
            ledger: TokenLedger::new(),
            calls: AtomicU32::new(0),
            budget: None,
            sampling,
        }
    }

    pub fn with_call_budget(mut self, budget: u32) -> Self {
        self.budget = Some(budget);
        self
    }

    /// Builds a request with this session's sampling parameters.
    pub fn request(&self, tag: &str, messages: Vec<ChatMessage>) -> ChatRequest {
        let mut req = ChatRequest::new(tag, messages);
        req.temperature = self
            .sampling
            .per_tag_temperature
            .get(tag)
            .copied()
            .unwrap_or(self.sampling.temperature);
        req.max_output_tokens = self.sampling.max_output_tokens;
        req.seed = self.sampling.seed;
        req
    }

    pub fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        if let Some(budget) = self.budget {
            let reserved = self.calls.fetch_add(1, Ordering::SeqCst);
            if reserved >= budget {
                self.calls.fetch_sub(1, Ordering::SeqCst);
                return Err(LlmError::BudgetExhausted { budget });
            }
        } else {
            self.calls.fetch_add(1, Ordering::SeqCst);
        }
        let response = self.backend.complete(request)?;
        self.ledger
            .record(&request.tag, response.prompt_tokens, response.completion_tokens);
        Ok(response)
    }

    /// Calls issued so far, including ones whose backend call failed.
    pub fn calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn budget(&self) -> Option<u32> {
        self.budget
    }

    pub fn ledger(&self) -> &TokenLedger {
        &self.ledger
    }
}
