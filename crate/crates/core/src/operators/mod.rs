//! The five tree operators: branch generation (with per-child
//! materialization), node evaluation, node rethinking, backtrack execution
//! and code aggregation.
//!
//! Every LLM-backed operator renders a prompt template, sends it through the
//! run's [`LlmSession`] and parses the reply against a strict grammar (see
//! [`grammar`]). A malformed reply earns one format reminder; a well-formed
//! reply that violates a content rule (wrong module name, missing
//! instantiation, fanout out of range) earns one corrective re-ask. After
//! that the operator fails with a typed error.

mod aggregate;
pub mod grammar;
mod templates;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use aggregate::{aggregate, aggregate_best_effort, subtree_source, AggregatedDesign};
pub use templates::PromptTemplates;

use crate::llm::{ChatMessage, LlmError, LlmSession};
use crate::tree::{ChildSeed, NodeId, NodeStatus, PathContext, ThoughtNode, TreeError};
use crate::verify::{SimOutcome, Verifier, VerifyError, PASS_SENTINEL};
use crate::verilog;

pub const DEFAULT_MAX_FANOUT: usize = 6;

/// Ledger tags, one per operator.
pub mod tags {
    pub const BRANCH: &str = "branch_generator";
    pub const MATERIALIZE: &str = "materialize_child";
    pub const EVALUATE: &str = "node_evaluator";
    pub const COMPLEXITY: &str = "complexity_assessment";
    pub const RETHINK: &str = "node_rethinker";
    pub const BACKTRACK: &str = "backtrack_executor";
    pub const POLISH: &str = "code_aggregator_polish";
}

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("{op}: unusable response after a format reminder: {detail}")]
    Parse { op: String, detail: String },
    #[error("branch plan has {got} children, allowed 2..={max}")]
    Fanout { got: usize, max: usize },
    #[error("design declares {found:?}, expected module `{expected}`")]
    NameMismatch { expected: String, found: Vec<String> },
    #[error("integration design does not instantiate {missing:?}")]
    MissingInstantiation { missing: Vec<String> },
    #[error("branch plan reuses module names already in the tree: {0:?}")]
    NameCollision(Vec<String>),
    #[error("operator precondition violated: {0}")]
    Precondition(String),
    #[error("cannot aggregate, nodes not verified: {0:?}")]
    Aggregation(Vec<(NodeId, String)>),
    #[error("prompt template error: {0}")]
    Template(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvalMode {
    Simulator,
    LlmJudge,
    Hybrid,
}

/// Which path produced a verdict. Hybrid evaluation records the path it
/// actually took.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalSource {
    Simulator,
    LlmJudge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Complexity {
    Simple,
    Complex,
}

impl Complexity {
    fn parse(v: &Value) -> Option<Self> {
        match v.as_str()?.trim().to_ascii_lowercase().as_str() {
            "simple" => Some(Self::Simple),
            "complex" => Some(Self::Complex),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationVerdict {
    pub passed: bool,
    pub complexity: Complexity,
    /// Empty when passed.
    pub diagnosis: String,
    pub source: EvalSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchPlan {
    pub children: Vec<ChildSeed>,
    pub rationale: String,
}

impl BranchPlan {
    pub fn to_json(&self) -> Value {
        json!({ "children": self.children, "rationale": self.rationale })
    }

    /// Reads the structured block of a branch response; checks identifiers,
    /// non-empty specs and name uniqueness but not fanout.
    pub fn from_json(v: &Value) -> Result<Self, String> {
        let plan: BranchPlan = serde_json::from_value(json!({
            "children": v.get("children").cloned().unwrap_or(Value::Null),
            "rationale": v.get("rationale").cloned().unwrap_or_else(|| json!("")),
        }))
        .map_err(|e| format!("branch plan fields: {e}"))?;
        let mut seen = std::collections::HashSet::new();
        for c in &plan.children {
            if !verilog::is_identifier(&c.module_name) {
                return Err(format!("`{}` is not a valid Verilog identifier", c.module_name));
            }
            if c.spec.trim().is_empty() {
                return Err(format!("submodule `{}` has an empty spec", c.module_name));
            }
            if !seen.insert(c.module_name.as_str()) {
                return Err(format!("submodule name `{}` repeated", c.module_name));
            }
        }
        Ok(plan)
    }
}

/// Design plus optional testbench produced for one node. Testbenches are
/// absent only in reflection-only runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifacts {
    pub design: String,
    pub testbench: Option<String>,
}

pub type RethinkOutput = Artifacts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BacktrackAction {
    RebranchHere,
    Ascend,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BacktrackDecision {
    pub action: BacktrackAction,
    pub rationale: String,
}

enum Reject {
    Format(String),
    Content { correction: String, error: OperatorError },
}

/// Operator entry points bound to one run's LLM session and templates.
pub struct Operators<'a> {
    llm: &'a LlmSession,
    templates: &'a PromptTemplates,
}

fn render_ancestors(ctx: &PathContext) -> String {
    if ctx.ancestor_chain.is_empty() {
        return "(none: this is the top-level module)".into();
    }
    ctx.ancestor_chain
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{}. `{}`: {}", i + 1, a.module_name, a.spec.trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_siblings(ctx: &PathContext) -> String {
    if ctx.verified_sibling_summaries.is_empty() {
        return "(none)".into();
    }
    ctx.verified_sibling_summaries
        .iter()
        .map(|s| format!("- `{}`: {}", s.module_name, s.spec.trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn check_testbench(tb: &str, module_name: &str) -> Result<(), Reject> {
    if !tb.contains("VERIBTOT_RESULT") {
        return Err(Reject::Format(format!(
            "the testbench never prints the `{PASS_SENTINEL}` / `VERIBTOT_RESULT: FAIL mismatches=<n>` result line"
        )));
    }
    if !verilog::instantiates(tb, module_name) {
        return Err(Reject::Format(format!(
            "the testbench does not instantiate `{module_name}`"
        )));
    }
    Ok(())
}

fn check_design_name(design: &str, module_name: &str) -> Result<(), Reject> {
    let found = verilog::module_names(design);
    if found.iter().any(|n| n == module_name) {
        return Ok(());
    }
    if found.is_empty() {
        return Err(Reject::Format("the design block declares no module".into()));
    }
    Err(Reject::Content {
        correction: format!(
            "The design must declare `module {module_name}`, but it declares {}. Rename it and answer again in the same format.",
            found.iter().map(|n| format!("`{n}`")).collect::<Vec<_>>().join(", ")
        ),
        error: OperatorError::NameMismatch { expected: module_name.to_string(), found },
    })
}

fn parse_artifacts(text: &str, module_name: &str, with_testbench: bool) -> Result<Artifacts, Reject> {
    let (design, testbench) = grammar::design_and_testbench(text);
    let design = design.ok_or_else(|| Reject::Format("no ```verilog design block found".into()))?;
    check_design_name(&design, module_name)?;
    let testbench = if with_testbench {
        let tb = testbench
            .ok_or_else(|| Reject::Format("no ```verilog testbench block found".into()))?;
        check_testbench(&tb, module_name)?;
        Some(tb)
    } else {
        None
    };
    Ok(Artifacts { design, testbench })
}

impl<'a> Operators<'a> {
    pub fn new(llm: &'a LlmSession, templates: &'a PromptTemplates) -> Self {
        Self { llm, templates }
    }

    pub fn llm(&self) -> &LlmSession {
        self.llm
    }

    pub fn templates(&self) -> &PromptTemplates {
        self.templates
    }

    fn artifact_rules(&self, module_name: &str, with_testbench: bool) -> Result<String, OperatorError> {
        let name = if with_testbench { "artifact_rules_tb" } else { "artifact_rules_design_only" };
        self.templates.render(name, &[("module_name", module_name)])
    }

    /// Sends `prompt`, parsing with `parse`; one format reminder and one
    /// content correction are allowed.
    fn ask<T>(
        &self,
        tag: &str,
        prompt: String,
        hints: &[(&str, String)],
        mut parse: impl FnMut(&str) -> Result<T, Reject>,
    ) -> Result<T, OperatorError> {
        let mut messages = vec![
            ChatMessage::system(self.templates.render("system", &[])?),
            ChatMessage::user(prompt),
        ];
        let mut reminded = false;
        let mut corrected = false;
        for attempt in 0.. {
            let mut req = self.llm.request(tag, messages.clone());
            for (k, v) in hints {
                req.hints.insert(k.to_string(), v.clone());
            }
            req.hints.insert("attempt".into(), attempt.to_string());
            let resp = self.llm.chat(&req)?;
            let follow_up = match parse(&resp.text) {
                Ok(v) => return Ok(v),
                Err(Reject::Format(problem)) => {
                    if reminded {
                        return Err(OperatorError::Parse { op: tag.to_string(), detail: problem });
                    }
                    reminded = true;
                    self.templates.render("format_reminder", &[("problem", &problem)])?
                }
                Err(Reject::Content { correction, error }) => {
                    if corrected {
                        return Err(error);
                    }
                    corrected = true;
                    correction
                }
            };
            messages.push(ChatMessage::assistant(resp.text));
            messages.push(ChatMessage::user(follow_up));
        }
        unreachable!("the retry loop always returns")
    }

    fn ask_json<T>(
        &self,
        tag: &str,
        prompt: String,
        hints: &[(&str, String)],
        mut parse: impl FnMut(&Value) -> Result<T, Reject>,
    ) -> Result<T, OperatorError> {
        self.ask(tag, prompt, hints, |text| {
            let v = grammar::json_block(text).map_err(Reject::Format)?;
            parse(&v)
        })
    }

    /// Branch Generator: a decomposition plan for a failed leaf.
    /// `taken_names` are module names already live in the tree.
    pub fn branch_plan(
        &self,
        ctx: &PathContext,
        node: &ThoughtNode,
        max_fanout: usize,
        taken_names: &[String],
    ) -> Result<BranchPlan, OperatorError> {
        if node.status != NodeStatus::EvaluatedFail || !node.is_leaf() {
            return Err(OperatorError::Precondition(format!(
                "branching needs a failed leaf, `{}` is {:?} with {} children",
                node.module_name,
                node.status,
                node.children.len()
            )));
        }
        let max = max_fanout.max(2);
        let taken = if taken_names.is_empty() {
            "(none)".to_string()
        } else {
            taken_names.join(", ")
        };
        let max_str = max.to_string();
        let prompt = self.templates.render(
            "branch_plan",
            &[
                ("task", &ctx.task_description),
                ("ancestors", &render_ancestors(ctx)),
                ("module_name", &node.module_name),
                ("spec", &node.spec),
                ("design", node.design.as_deref().unwrap_or("// no design yet")),
                ("diagnosis", node.diagnosis.as_deref().unwrap_or("(none recorded)")),
                ("max_fanout", &max_str),
                ("taken_names", &taken),
            ],
        )?;
        let hints = [
            ("module_name", node.module_name.clone()),
            ("max_fanout", max_str.clone()),
            ("taken_names", taken_names.join(",")),
        ];
        self.ask_json(tags::BRANCH, prompt, &hints, |v| {
            let plan = BranchPlan::from_json(v).map_err(Reject::Format)?;
            let n = plan.children.len();
            if !(2..=max).contains(&n) {
                return Err(Reject::Content {
                    correction: format!(
                        "The plan has {n} submodules; it must have between 2 and {max}. Answer again in the same format."
                    ),
                    error: OperatorError::Fanout { got: n, max },
                });
            }
            let clashes: Vec<String> = plan
                .children
                .iter()
                .filter(|c| taken_names.contains(&c.module_name))
                .map(|c| c.module_name.clone())
                .collect();
            if !clashes.is_empty() {
                return Err(Reject::Content {
                    correction: format!(
                        "These module names are already used in the design: {}. Pick different names and answer again in the same format.",
                        clashes.join(", ")
                    ),
                    error: OperatorError::NameCollision(clashes),
                });
            }
            Ok(plan)
        })
    }

    /// Produces the design (and testbench, unless `with_testbench` is false)
    /// for a freshly attached child.
    pub fn materialize_child(
        &self,
        ctx: &PathContext,
        seed: &ChildSeed,
        with_testbench: bool,
    ) -> Result<Artifacts, OperatorError> {
        if !verilog::is_identifier(&seed.module_name) || seed.spec.trim().is_empty() {
            return Err(OperatorError::Precondition(format!(
                "invalid child seed `{}`",
                seed.module_name
            )));
        }
        let rules = self.artifact_rules(&seed.module_name, with_testbench)?;
        let prompt = self.templates.render(
            "materialize",
            &[
                ("task", &ctx.task_description),
                ("ancestors", &render_ancestors(ctx)),
                ("siblings", &render_siblings(ctx)),
                ("module_name", &seed.module_name),
                ("spec", &seed.spec),
                ("artifact_rules", &rules),
            ],
        )?;
        let hints = [
            ("module_name", seed.module_name.clone()),
            ("with_testbench", with_testbench.to_string()),
        ];
        self.ask(tags::MATERIALIZE, prompt, &hints, |text| {
            parse_artifacts(text, &seed.module_name, with_testbench)
        })
    }

    /// Node Evaluator. `design_sources` is everything needed to compile the
    /// node (its verified descendants first, then its own design).
    pub fn evaluate(
        &self,
        verifier: &dyn Verifier,
        node: &ThoughtNode,
        design_sources: &[String],
        mode: EvalMode,
        timeout: Option<Duration>,
    ) -> Result<EvaluationVerdict, OperatorError> {
        let design = node.design.as_deref().ok_or_else(|| {
            OperatorError::Precondition(format!("`{}` has no design to evaluate", node.module_name))
        })?;
        match (mode, node.testbench.as_deref()) {
            (EvalMode::LlmJudge, tb) | (EvalMode::Hybrid, tb @ None) => self.judge(node, design_sources, tb),
            (EvalMode::Simulator, None) => Err(OperatorError::Precondition(format!(
                "simulator evaluation of `{}` needs a testbench",
                node.module_name
            ))),
            (EvalMode::Simulator, Some(tb)) => {
                let outcome = verifier.run_testbench(design_sources, tb, timeout)?;
                self.simulated_verdict(node, design, &outcome)
            }
            (EvalMode::Hybrid, Some(tb)) => match verifier.run_testbench(design_sources, tb, timeout) {
                Ok(outcome) if outcome.syntax_ok => self.simulated_verdict(node, design, &outcome),
                Ok(_) | Err(VerifyError::ToolchainUnavailable(_)) => {
                    self.judge(node, design_sources, Some(tb))
                }
                Err(e) => Err(e.into()),
            },
        }
    }

    fn simulated_verdict(
        &self,
        node: &ThoughtNode,
        design: &str,
        outcome: &SimOutcome,
    ) -> Result<EvaluationVerdict, OperatorError> {
        if outcome.passed() {
            return Ok(EvaluationVerdict {
                passed: true,
                complexity: Complexity::Simple,
                diagnosis: String::new(),
                source: EvalSource::Simulator,
            });
        }
        let diagnosis = outcome.failure_summary();
        let complexity = self.complexity(node, design, &diagnosis)?;
        Ok(EvaluationVerdict { passed: false, complexity, diagnosis, source: EvalSource::Simulator })
    }

    fn complexity(&self, node: &ThoughtNode, design: &str, outcome: &str) -> Result<Complexity, OperatorError> {
        let prompt = self.templates.render(
            "complexity",
            &[
                ("module_name", &node.module_name),
                ("spec", &node.spec),
                ("design", design),
                ("outcome", outcome),
            ],
        )?;
        let hints = [("module_name", node.module_name.clone())];
        self.ask_json(tags::COMPLEXITY, prompt, &hints, |v| {
            v.get("complexity")
                .and_then(Complexity::parse)
                .ok_or_else(|| Reject::Format("`complexity` must be \"simple\" or \"complex\"".into()))
        })
    }

    fn judge(
        &self,
        node: &ThoughtNode,
        design_sources: &[String],
        testbench: Option<&str>,
    ) -> Result<EvaluationVerdict, OperatorError> {
        let design = design_sources.join("\n");
        let tb_section = match testbench {
            Some(tb) => format!("\nTestbench written for it:\n```verilog\n{tb}\n```\n"),
            None => String::new(),
        };
        let prompt = self.templates.render(
            "judge",
            &[
                ("module_name", &node.module_name),
                ("spec", &node.spec),
                ("design", &design),
                ("testbench_section", &tb_section),
            ],
        )?;
        let hints = [("module_name", node.module_name.clone())];
        self.ask_json(tags::EVALUATE, prompt, &hints, |v| {
            let passed = v
                .get("passed")
                .and_then(Value::as_bool)
                .ok_or_else(|| Reject::Format("`passed` must be a boolean".into()))?;
            let complexity = v
                .get("complexity")
                .and_then(Complexity::parse)
                .ok_or_else(|| Reject::Format("`complexity` must be \"simple\" or \"complex\"".into()))?;
            let diagnosis = v.get("diagnosis").and_then(Value::as_str).unwrap_or("").trim().to_string();
            if !passed && diagnosis.is_empty() {
                return Err(Reject::Format("a failing verdict needs a non-empty `diagnosis`".into()));
            }
            Ok(EvaluationVerdict {
                passed,
                complexity,
                diagnosis: if passed { String::new() } else { diagnosis },
                source: EvalSource::LlmJudge,
            })
        })
    }

    /// Node Rethinker. Leaves are redesigned from their diagnosis; a node
    /// with children is rebuilt on top of `verified_children`
    /// (module name, design) and must instantiate each of them.
    pub fn rethink(
        &self,
        ctx: &PathContext,
        node: &ThoughtNode,
        verified_children: &[(String, String)],
        with_testbench: bool,
    ) -> Result<RethinkOutput, OperatorError> {
        if !matches!(node.status, NodeStatus::EvaluatedFail | NodeStatus::Branched) {
            return Err(OperatorError::Precondition(format!(
                "rethinking `{}` needs a failed or branched node, found {:?}",
                node.module_name, node.status
            )));
        }
        if !node.is_leaf() && verified_children.is_empty() {
            return Err(OperatorError::Precondition(format!(
                "`{}` has submodules but no verified children were supplied",
                node.module_name
            )));
        }
        if node.is_leaf() && !verified_children.is_empty() {
            return Err(OperatorError::Precondition(format!(
                "`{}` is a leaf; it has no children to integrate",
                node.module_name
            )));
        }
        let rules = self.artifact_rules(&node.module_name, with_testbench)?;
        let diagnosis = node.diagnosis.as_deref().unwrap_or("(none)");
        let child_names: Vec<String> = verified_children.iter().map(|(n, _)| n.clone()).collect();
        let prompt = if node.is_leaf() {
            self.templates.render(
                "rethink_leaf",
                &[
                    ("task", &ctx.task_description),
                    ("ancestors", &render_ancestors(ctx)),
                    ("module_name", &node.module_name),
                    ("spec", &node.spec),
                    ("design", node.design.as_deref().unwrap_or("// none")),
                    ("diagnosis", diagnosis),
                    ("artifact_rules", &rules),
                ],
            )?
        } else {
            let children = verified_children
                .iter()
                .map(|(_, d)| grammar::fence_verilog("", d))
                .collect::<Vec<_>>()
                .join("\n");
            self.templates.render(
                "rethink_integrate",
                &[
                    ("task", &ctx.task_description),
                    ("ancestors", &render_ancestors(ctx)),
                    ("module_name", &node.module_name),
                    ("spec", &node.spec),
                    ("child_names", &child_names.join(", ")),
                    ("children", &children),
                    ("diagnosis", diagnosis),
                    ("artifact_rules", &rules),
                ],
            )?
        };
        let hints = [
            ("module_name", node.module_name.clone()),
            ("children", child_names.join(",")),
            ("with_testbench", with_testbench.to_string()),
        ];
        self.ask(tags::RETHINK, prompt, &hints, |text| {
            let out = parse_artifacts(text, &node.module_name, with_testbench)?;
            let missing: Vec<String> = child_names
                .iter()
                .filter(|c| !verilog::instantiates(&out.design, c))
                .cloned()
                .collect();
            if !missing.is_empty() {
                return Err(Reject::Content {
                    correction: format!(
                        "`{}` must instantiate every verified submodule; missing: {}. Answer again in the same format.",
                        node.module_name,
                        missing.join(", ")
                    ),
                    error: OperatorError::MissingInstantiation { missing },
                });
            }
            Ok(out)
        })
    }

    /// Backtrack Executor: rebranch at this node or ascend to its parent.
    pub fn backtrack(
        &self,
        ctx: &PathContext,
        node: &ThoughtNode,
        child_names: &[String],
        failure_history: &[String],
    ) -> Result<BacktrackDecision, OperatorError> {
        if node.status != NodeStatus::EvaluatedFail {
            return Err(OperatorError::Precondition(format!(
                "backtracking from `{}` needs a failed node, found {:?}",
                node.module_name, node.status
            )));
        }
        let children = if child_names.is_empty() { "(none)".to_string() } else { child_names.join(", ") };
        let history = if failure_history.is_empty() {
            "(none recorded)".to_string()
        } else {
            failure_history
                .iter()
                .enumerate()
                .map(|(i, d)| format!("{}. {}", i + 1, d.trim()))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let prompt = self.templates.render(
            "backtrack",
            &[
                ("task", &ctx.task_description),
                ("ancestors", &render_ancestors(ctx)),
                ("module_name", &node.module_name),
                ("spec", &node.spec),
                ("children", &children),
                ("history", &history),
            ],
        )?;
        let hints = [
            ("module_name", node.module_name.clone()),
            ("depth", ctx.ancestor_chain.len().to_string()),
        ];
        self.ask_json(tags::BACKTRACK, prompt, &hints, |v| {
            let action = v
                .get("action")
                .and_then(Value::as_str)
                .map(|s| s.trim().to_ascii_lowercase().replace(['-', ' '], "_"))
                .and_then(|s| match s.as_str() {
                    "rebranch_here" | "rebranchhere" | "rebranch" => Some(BacktrackAction::RebranchHere),
                    "ascend" => Some(BacktrackAction::Ascend),
                    _ => None,
                })
                .ok_or_else(|| Reject::Format("`action` must be \"rebranch_here\" or \"ascend\"".into()))?;
            let rationale = v.get("rationale").and_then(Value::as_str).unwrap_or("").to_string();
            Ok(BacktrackDecision { action, rationale })
        })
    }

    /// Optional cosmetic LLM pass over an aggregated design. The result is
    /// kept only if it declares exactly the same modules; otherwise the input
    /// comes back unchanged.
    pub fn polish(&self, design: &AggregatedDesign) -> Result<AggregatedDesign, OperatorError> {
        let prompt = self.templates.render(
            "polish",
            &[("source", &design.source), ("top_module", &design.top_module)],
        )?;
        let hints = [("module_name", design.top_module.clone())];
        let polished = self.ask(tags::POLISH, prompt, &hints, |text| {
            grammar::design_and_testbench(text)
                .0
                .ok_or_else(|| Reject::Format("no ```verilog block found".into()))
        })?;
        let mut before = verilog::module_names(&design.source);
        let mut after = verilog::module_names(&polished);
        before.sort();
        after.sort();
        if before == after {
            Ok(AggregatedDesign { source: polished, ..design.clone() })
        } else {
            tracing::warn!("polish pass changed the module set; keeping the unpolished design");
            Ok(design.clone())
        }
    }
}

#[cfg(test)]
mod tests;
