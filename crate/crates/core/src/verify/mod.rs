//! Syntax checks and testbench simulation through an external Verilog
//! toolchain, sentinel-based log classification, and a scripted mock.
//!
//! Testbenches report their verdict by printing exactly one line:
//!
//! ```text
//! VERIBTOT_RESULT: PASS
//! VERIBTOT_RESULT: FAIL mismatches=<decimal>
//! ```

mod mock;
mod toolchain;

use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{fail_outcome, pass_outcome, sources_digest, MockDefault, MockEntry, MockScript, MockVerifier};
pub use toolchain::{ToolchainConfig, ToolchainVerifier};

pub const PASS_SENTINEL: &str = "VERIBTOT_RESULT: PASS";
pub const FAIL_SENTINEL: &str = "VERIBTOT_RESULT: FAIL";

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("HDL toolchain unavailable: {0}")]
    ToolchainUnavailable(String),
    #[error("invalid toolchain config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub syntax_ok: bool,
    /// `None` when nothing ran or the log carried no sentinel.
    #[serde(default)]
    pub functional_pass: Option<bool>,
    #[serde(default)]
    pub mismatch_count: Option<u64>,
    #[serde(default)]
    pub log: String,
    #[serde(default, with = "crate::tree::duration_secs")]
    pub duration: Duration,
    #[serde(default)]
    pub timed_out: bool,
}

impl SimOutcome {
    pub fn syntax_only(syntax_ok: bool, log: String, duration: Duration) -> Self {
        Self {
            syntax_ok,
            functional_pass: None,
            mismatch_count: None,
            log,
            duration,
            timed_out: false,
        }
    }

    /// Missing sentinels and syntax failures both count as failure.
    pub fn passed(&self) -> bool {
        self.syntax_ok && self.functional_pass == Some(true)
    }

    /// The last `lines` lines of the log, for diagnoses.
    pub fn log_tail(&self, lines: usize) -> String {
        let all: Vec<&str> = self.log.lines().collect();
        all[all.len().saturating_sub(lines)..].join("\n")
    }

    /// Short human-readable failure reason.
    pub fn failure_summary(&self) -> String {
        let reason = if self.timed_out {
            "simulation timed out".to_string()
        } else if !self.syntax_ok {
            "compilation failed".to_string()
        } else {
            match (self.functional_pass, self.mismatch_count) {
                (None, _) => "no sentinel in simulation output".to_string(),
                (Some(false), Some(n)) => format!("testbench reported {n} mismatches"),
                (Some(false), None) => "testbench reported failure".to_string(),
                (Some(true), _) => "passed".to_string(),
            }
        };
        let tail = self.log_tail(20);
        if tail.trim().is_empty() {
            reason
        } else {
            format!("{reason}\n{tail}")
        }
    }
}

/// Result of scanning a simulation log for sentinels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogVerdict {
    pub functional_pass: Option<bool>,
    pub mismatch_count: Option<u64>,
}

static FAIL_COUNT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"VERIBTOT_RESULT: FAIL\s+mismatches=(\d+)").expect("valid regex")
});

/// Pass iff some line carries the PASS sentinel and none the FAIL one.
/// A FAIL line reporting zero mismatches keeps the count unknown so that a
/// zero count always coincides with a pass.
pub fn classify_log(log: &str) -> LogVerdict {
    let mut pass = false;
    let mut fail = false;
    let mut count = None;
    for line in log.lines() {
        if line.contains(FAIL_SENTINEL) {
            fail = true;
            if let Some(c) = FAIL_COUNT.captures(line) {
                if let Ok(n) = c[1].parse::<u64>() {
                    if n > 0 {
                        count = Some(count.unwrap_or(0u64).max(n));
                    }
                }
            }
        } else if line.contains(PASS_SENTINEL) {
            pass = true;
        }
    }
    if fail {
        LogVerdict { functional_pass: Some(false), mismatch_count: count }
    } else if pass {
        LogVerdict { functional_pass: Some(true), mismatch_count: Some(0) }
    } else {
        LogVerdict { functional_pass: None, mismatch_count: None }
    }
}

/// Anything that can compile and simulate Verilog.
pub trait Verifier: Send + Sync {
    /// Compiles `sources` together without running anything.
    fn syntax_check(&self, sources: &[String]) -> Result<SimOutcome, VerifyError>;

    /// Compiles the designs with the testbench, runs it and classifies the log.
    /// `timeout` overrides the configured simulation bound.
    fn run_testbench(
        &self,
        design_sources: &[String],
        testbench: &str,
        timeout: Option<Duration>,
    ) -> Result<SimOutcome, VerifyError>;
}
