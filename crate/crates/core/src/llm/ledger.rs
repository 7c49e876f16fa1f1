use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub tag: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPair {
    pub prompt: u64,
    pub completion: u64,
}

impl TokenPair {
    pub fn total(&self) -> u64 {
        self.prompt + self.completion
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub prompt: u64,
    pub completion: u64,
    pub by_tag: BTreeMap<String, TokenPair>,
}

/// Append-only token usage log; safe to append from several threads.
#[derive(Debug, Default)]
pub struct TokenLedger {
    entries: Mutex<Vec<LedgerEntry>>,
}

impl TokenLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, tag: &str, prompt_tokens: u64, completion_tokens: u64) {
        let timestamp_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        self.push(LedgerEntry {
            tag: tag.to_string(),
            prompt_tokens,
            completion_tokens,
            timestamp_ms,
        });
    }

    pub fn push(&self, entry: LedgerEntry) {
        self.entries.lock().expect("ledger poisoned").push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("ledger poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> Vec<LedgerEntry> {
        self.entries.lock().expect("ledger poisoned").clone()
    }

    pub fn totals(&self) -> LedgerTotals {
        totals_of(&self.entries.lock().expect("ledger poisoned"))
    }
}

pub fn totals_of(entries: &[LedgerEntry]) -> LedgerTotals {
    let mut totals = LedgerTotals::default();
    for e in entries {
        totals.prompt += e.prompt_tokens;
        totals.completion += e.completion_tokens;
        let slot = totals.by_tag.entry(e.tag.clone()).or_default();
        slot.prompt += e.prompt_tokens;
        slot.completion += e.completion_tokens;
    }
    totals
}
