//! Reasoning strategies. Every paradigm takes a [`DesignTask`] and returns a
//! [`RunResult`] whose functional verdict comes only from simulating the
//! final source against the task's oracle testbench.

mod baselines;
mod machine;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baselines::{run_baseline, tags as baseline_tags};
pub use machine::{run_veribtot, run_veribtot_minus, run_veribtot_observed, TreeEvent};

use crate::llm::{ChatBackend, LedgerEntry, LedgerTotals, LlmSession, SamplingConfig};
use crate::operators::{EvalMode, PromptTemplates};
use crate::tree::{DesignTask, TreeSnapshot};
use crate::verify::Verifier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Paradigm {
    IO,
    CoT,
    CoTSC,
    ToT,
    VeriBToT,
    VeriBToTMinus,
}

impl Paradigm {
    pub const ALL: [Paradigm; 6] = [
        Paradigm::IO,
        Paradigm::CoT,
        Paradigm::CoTSC,
        Paradigm::ToT,
        Paradigm::VeriBToT,
        Paradigm::VeriBToTMinus,
    ];

    /// Column label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Paradigm::IO => "IO",
            Paradigm::CoT => "CoT",
            Paradigm::CoTSC => "CoT-SC",
            Paradigm::ToT => "ToT",
            Paradigm::VeriBToT => "VeriBToT",
            Paradigm::VeriBToTMinus => "VeriBToT-",
        }
    }

    /// Filesystem-safe name used in replay layouts.
    pub fn slug(self) -> &'static str {
        match self {
            Paradigm::IO => "io",
            Paradigm::CoT => "cot",
            Paradigm::CoTSC => "cot_sc",
            Paradigm::ToT => "tot",
            Paradigm::VeriBToT => "veribtot",
            Paradigm::VeriBToTMinus => "veribtot_minus",
        }
    }

    pub fn is_tree(self) -> bool {
        matches!(self, Paradigm::VeriBToT | Paradigm::VeriBToTMinus)
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown paradigm `{0}` (expected IO, CoT, CoT-SC, ToT, VeriBToT or VeriBToT-)")]
pub struct UnknownParadigm(pub String);

impl FromStr for Paradigm {
    type Err = UnknownParadigm;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let (base, minus) = match lower.strip_suffix('-') {
            Some(b) => (b, true),
            None => (lower.as_str(), false),
        };
        let key: String = base.chars().filter(|c| !matches!(c, '-' | '_' | ' ')).collect();
        Ok(match (key.as_str(), minus) {
            ("io", false) => Paradigm::IO,
            ("cot", false) => Paradigm::CoT,
            ("cotsc", false) => Paradigm::CoTSC,
            ("tot", false) => Paradigm::ToT,
            ("veribtot", false) => Paradigm::VeriBToT,
            ("veribtot", true) | ("veribtotminus", false) => Paradigm::VeriBToTMinus,
            _ => return Err(UnknownParadigm(s.to_string())),
        })
    }
}

/// Where the root node's testbench comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleTbPolicy {
    /// The LLM writes the root self-test; the oracle is used only at finality.
    FinalOnly,
    /// The oracle testbench doubles as the root's testbench.
    InLoop,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid run configuration: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paradigm: Paradigm,
    pub max_depth: u32,
    /// Repair rethinks allowed per node before branching or backtracking.
    pub rethink_budget: u32,
    /// Backtrack decisions allowed per run.
    pub backtrack_budget: u32,
    pub llm_call_budget: u32,
    pub max_fanout: u32,
    pub eval_mode: EvalMode,
    pub oracle_tb_policy: OracleTbPolicy,
    pub temperature: f64,
    /// Per-operator temperature keyed by ledger tag.
    pub per_tag_temperature: BTreeMap<String, f64>,
    pub max_output_tokens: u32,
    pub seed: Option<u64>,
    pub cotsc_chains: u32,
    pub tot_width: u32,
    pub tot_depth: u32,
    /// Cosmetic LLM pass over the aggregated design.
    pub polish: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paradigm: Paradigm::VeriBToT,
            max_depth: 3,
            rethink_budget: 1,
            backtrack_budget: 5,
            llm_call_budget: 60,
            max_fanout: 6,
            eval_mode: EvalMode::Hybrid,
            oracle_tb_policy: OracleTbPolicy::FinalOnly,
            temperature: 0.2,
            per_tag_temperature: BTreeMap::new(),
            max_output_tokens: 4096,
            seed: None,
            cotsc_chains: 5,
            tot_width: 2,
            tot_depth: 2,
            polish: false,
        }
    }
}

impl RunConfig {
    pub fn for_paradigm(paradigm: Paradigm) -> Self {
        Self { paradigm, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("max_depth", self.max_depth),
            ("llm_call_budget", self.llm_call_budget),
            ("max_output_tokens", self.max_output_tokens),
            ("cotsc_chains", self.cotsc_chains),
            ("tot_width", self.tot_width),
            ("tot_depth", self.tot_depth),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError(format!("{name} must be positive")));
            }
        }
        if self.max_fanout < 2 {
            return Err(ConfigError("max_fanout must be at least 2".into()));
        }
        let temps = std::iter::once(&self.temperature).chain(self.per_tag_temperature.values());
        if temps.into_iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(ConfigError("temperature must be a non-negative number".into()));
        }
        Ok(())
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            temperature: self.temperature,
            per_tag_temperature: self.per_tag_temperature.clone(),
            max_output_tokens: self.max_output_tokens,
            seed: self.seed,
        }
    }

    /// A session over `backend` that enforces this config's call budget.
    pub fn session(&self, backend: Arc<dyn ChatBackend>) -> LlmSession {
        LlmSession::new(backend, self.sampling()).with_call_budget(self.llm_call_budget)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminatedBy {
    /// The strategy produced its final answer and it was checked.
    Success,
    BudgetExhausted,
    OperatorFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub paradigm: Paradigm,
    pub final_source: Option<String>,
    pub syntax_ok: bool,
    /// Verdict of the oracle testbench on `final_source`.
    pub functional_ok: bool,
    pub mismatch_count: Option<u64>,
    /// Tree-family paradigms only.
    pub tree_snapshot: Option<TreeSnapshot>,
    pub ledger: Vec<LedgerEntry>,
    pub totals: LedgerTotals,
    pub llm_calls: u32,
    pub terminated_by: TerminatedBy,
    pub error: Option<String>,
    /// The in-loop evaluation accepted the root but the oracle rejected the
    /// final design.
    pub verdict_disagreement: bool,
    #[serde(with = "crate::tree::duration_secs")]
    pub wall_time: Duration,
}

/// Everything a run needs besides the task and config.
#[derive(Clone)]
pub struct RunEnv<'a> {
    pub backend: Arc<dyn ChatBackend>,
    pub verifier: &'a dyn Verifier,
    pub templates: &'a PromptTemplates,
}

impl<'a> RunEnv<'a> {
    pub fn new(backend: Arc<dyn ChatBackend>, verifier: &'a dyn Verifier, templates: &'a PromptTemplates) -> Self {
        Self { backend, verifier, templates }
    }
}

/// Runs `cfg.paradigm` on `task`.
pub fn run(task: &DesignTask, env: &RunEnv<'_>, cfg: &RunConfig) -> RunResult {
    match cfg.paradigm {
        Paradigm::VeriBToT => run_veribtot(task, env, cfg),
        Paradigm::VeriBToTMinus => run_veribtot_minus(task, env, cfg),
        _ => run_baseline(task, env, cfg),
    }
}

pub(crate) struct FinalCheck {
    pub syntax_ok: bool,
    pub functional_ok: bool,
    pub mismatch_count: Option<u64>,
    pub error: Option<String>,
}

/// Simulates `source` against the oracle testbench.
pub(crate) fn final_check(verifier: &dyn Verifier, task: &DesignTask, source: Option<&str>) -> FinalCheck {
    let Some(source) = source else {
        return FinalCheck { syntax_ok: false, functional_ok: false, mismatch_count: None, error: None };
    };
    match verifier.run_testbench(&[source.to_string()], &task.oracle_testbench, Some(task.timeout)) {
        Ok(o) => FinalCheck {
            syntax_ok: o.syntax_ok,
            functional_ok: o.syntax_ok && o.passed(),
            mismatch_count: o.mismatch_count,
            error: None,
        },
        Err(e) => FinalCheck {
            syntax_ok: false,
            functional_ok: false,
            mismatch_count: None,
            error: Some(format!("final check: {e}")),
        },
    }
}

pub(crate) struct Outcome {
    pub final_source: Option<String>,
    pub terminated_by: TerminatedBy,
    pub error: Option<String>,
    pub tree_snapshot: Option<TreeSnapshot>,
    pub root_accepted: bool,
}

pub(crate) fn finish(
    task: &DesignTask,
    env: &RunEnv<'_>,
    cfg: &RunConfig,
    llm: &LlmSession,
    started: Instant,
    outcome: Outcome,
) -> RunResult {
    let check = final_check(env.verifier, task, outcome.final_source.as_deref());
    let error = match (outcome.error, check.error) {
        (Some(a), Some(b)) => Some(format!("{a}; {b}")),
        (a, b) => a.or(b),
    };
    RunResult {
        paradigm: cfg.paradigm,
        syntax_ok: check.syntax_ok,
        functional_ok: check.functional_ok,
        mismatch_count: check.mismatch_count,
        verdict_disagreement: outcome.root_accepted && !check.functional_ok,
        final_source: outcome.final_source,
        tree_snapshot: outcome.tree_snapshot,
        ledger: llm.ledger().entries(),
        totals: llm.ledger().totals(),
        llm_calls: llm.calls(),
        terminated_by: outcome.terminated_by,
        error,
        wall_time: started.elapsed(),
    }
}
