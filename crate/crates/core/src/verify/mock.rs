use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{SimOutcome, Verifier, VerifyError};

/// Digest identifying one verification request. `testbench` is `None` for
/// syntax checks.
pub fn sources_digest(design_sources: &[String], testbench: Option<&str>) -> String {
    let mut hasher = Sha256::new();
    for src in design_sources {
        hasher.update(b"D");
        hasher.update((src.len() as u64).to_le_bytes());
        hasher.update(src.as_bytes());
    }
    if let Some(tb) = testbench {
        hasher.update(b"T");
        hasher.update((tb.len() as u64).to_le_bytes());
        hasher.update(tb.as_bytes());
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockDefault {
    Pass,
    #[default]
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    pub digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub outcome: SimOutcome,
}

/// On-disk form of a mock verifier script.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub default: MockDefault,
    #[serde(default)]
    pub entries: Vec<MockEntry>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, VerifyError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| VerifyError::Config(format!("{}: {e}", path.display())))
    }

    pub fn add(&mut self, label: &str, design_sources: &[String], testbench: Option<&str>, outcome: SimOutcome) {
        self.entries.push(MockEntry {
            digest: sources_digest(design_sources, testbench),
            label: Some(label.to_string()),
            outcome,
        });
    }
}

/// Table-driven verifier: returns the scripted outcome for a source digest.
pub struct MockVerifier {
    table: HashMap<String, SimOutcome>,
    default: MockDefault,
    calls: AtomicUsize,
}

impl MockVerifier {
    pub fn new(default: MockDefault) -> Self {
        Self { table: HashMap::new(), default, calls: AtomicUsize::new(0) }
    }

    pub fn from_script(script: MockScript) -> Result<Self, VerifyError> {
        let mut v = Self::new(script.default);
        for e in script.entries {
            if e.digest.len() != 64 || !e.digest.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(VerifyError::Config(format!("malformed digest `{}`", e.digest)));
            }
            v.table.insert(e.digest.to_ascii_lowercase(), e.outcome);
        }
        Ok(v)
    }

    pub fn script(mut self, design_sources: &[String], testbench: Option<&str>, outcome: SimOutcome) -> Self {
        self.table.insert(sources_digest(design_sources, testbench), outcome);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn lookup(&self, digest: &str, with_testbench: bool) -> SimOutcome {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(o) = self.table.get(digest) {
            return o.clone();
        }
        match (self.default, with_testbench) {
            (MockDefault::Pass, false) => SimOutcome::syntax_only(true, String::new(), Duration::ZERO),
            (MockDefault::Pass, true) => pass_outcome(),
            (MockDefault::Fail, false) => {
                SimOutcome::syntax_only(false, "unscripted sources".into(), Duration::ZERO)
            }
            (MockDefault::Fail, true) => fail_outcome(None),
        }
    }
}

/// A clean simulation pass.
pub fn pass_outcome() -> SimOutcome {
    SimOutcome {
        syntax_ok: true,
        functional_pass: Some(true),
        mismatch_count: Some(0),
        log: super::PASS_SENTINEL.to_string(),
        duration: Duration::ZERO,
        timed_out: false,
    }
}

/// A simulation that compiled but failed, optionally with a mismatch count.
pub fn fail_outcome(mismatches: Option<u64>) -> SimOutcome {
    SimOutcome {
        syntax_ok: true,
        functional_pass: Some(false),
        mismatch_count: mismatches,
        log: match mismatches {
            Some(n) => format!("{} mismatches={n}", super::FAIL_SENTINEL),
            None => "unscripted sources".into(),
        },
        duration: Duration::ZERO,
        timed_out: false,
    }
}

impl Verifier for MockVerifier {
    fn syntax_check(&self, sources: &[String]) -> Result<SimOutcome, VerifyError> {
        Ok(self.lookup(&sources_digest(sources, None), false))
    }

    fn run_testbench(
        &self,
        design_sources: &[String],
        testbench: &str,
        _timeout: Option<Duration>,
    ) -> Result<SimOutcome, VerifyError> {
        Ok(self.lookup(&sources_digest(design_sources, Some(testbench)), true))
    }
}
