use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use proptest::prelude::*;
use serde_json::json;

use super::*;
use crate::llm::{ChatBackend, ChatRequest, ChatResponse, SamplingConfig};
use crate::tree::{BacktrackTree, DesignTask};
use crate::verify::{fail_outcome, pass_outcome, MockDefault, MockVerifier};

struct Scripted {
    replies: Mutex<VecDeque<String>>,
    seen: Mutex<Vec<ChatRequest>>,
}

impl Scripted {
    fn new(replies: &[&str]) -> Arc<Self> {
        Arc::new(Self {
            replies: Mutex::new(replies.iter().map(|s| s.to_string()).collect()),
            seen: Mutex::new(Vec::new()),
        })
    }
}

impl ChatBackend for Scripted {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.seen.lock().unwrap().push(request.clone());
        let text = self
            .replies
            .lock()
            .unwrap()
            .pop_front()
            .ok_or(LlmError::ReplayExhausted { records: 0 })?;
        Ok(ChatResponse { text, prompt_tokens: 10, completion_tokens: 5 })
    }
}

fn session(b: &Arc<Scripted>) -> LlmSession {
    LlmSession::new(b.clone(), SamplingConfig::default())
}

fn tree() -> BacktrackTree {
    let task = DesignTask::new("Build a 4-bit adder.", "tb", "top", Duration::from_secs(1)).unwrap();
    BacktrackTree::init(task).unwrap()
}

fn failed_root() -> BacktrackTree {
    let mut t = tree();
    let r = t.root();
    t.set_artifacts(r, "module top; endmodule\n".into(), Some("tb".into())).unwrap();
    t.transition(r, NodeStatus::EvaluatedFail).unwrap();
    t.set_diagnosis(r, Some("carry wrong".into())).unwrap();
    t
}

fn artifacts_reply(name: &str) -> String {
    format!(
        "{}{}",
        grammar::fence_verilog("design", &format!("module {name}(input a, output y);\n  assign y = a;\nendmodule\n")),
        grammar::fence_verilog(
            "testbench",
            &format!("module tb;\n  {name} dut(.a(1'b0));\n  initial $display(\"VERIBTOT_RESULT: PASS\");\nendmodule\n")
        )
    )
}

fn plan_reply(names: &[&str]) -> String {
    let children: Vec<_> = names.iter().map(|n| json!({"module_name": n, "spec": format!("{n} spec")})).collect();
    grammar::fence_json(&json!({"children": children, "rationale": "split"}))
}

#[test]
fn branch_plan_accepts_valid_plan() {
    let b = Scripted::new(&[&plan_reply(&["a_part", "b_part"])]);
    let llm = session(&b);
    let tpl = PromptTemplates::builtin();
    let ops = Operators::new(&llm, &tpl);
    let t = failed_root();
    let ctx = t.path_context(t.root()).unwrap();
    let plan = ops.branch_plan(&ctx, t.node(t.root()).unwrap(), 6, &["top".into()]).unwrap();
    assert_eq!(plan.children.len(), 2);
    assert_eq!(plan.children[1].module_name, "b_part");
    assert_eq!(llm.calls(), 1);
    let sent = &b.seen.lock().unwrap()[0];
    assert_eq!(sent.tag, tags::BRANCH);
    assert!(sent.messages[1].content.contains("carry wrong"));
}

#[test]
fn branch_fanout_gets_one_correction() {
    let b = Scripted::new(&[&plan_reply(&["only"]), &plan_reply(&["x", "y", "z"])]);
    let llm = session(&b);
    let tpl = PromptTemplates::builtin();
    let ops = Operators::new(&llm, &tpl);
    let t = failed_root();
    let ctx = t.path_context(t.root()).unwrap();
    let plan = ops.branch_plan(&ctx, t.node(t.root()).unwrap(), 6, &[]).unwrap();
    assert_eq!(plan.children.len(), 3);
    let seen = b.seen.lock().unwrap();
    assert_eq!(seen[1].messages.len(), 4);
    assert!(seen[1].messages[3].content.contains("between 2 and 6"));
}

#[test]
fn branch_fanout_fails_after_second_violation() {
    let seven: Vec<String> = (0..7).map(|i| format!("m{i}")).collect();
    let seven: Vec<&str> = seven.iter().map(String::as_str).collect();
    let b = Scripted::new(&[&plan_reply(&["only"]), &plan_reply(&seven)]);
    let llm = session(&b);
    let tpl = PromptTemplates::builtin();
    let ops = Operators::new(&llm, &tpl);
    let t = failed_root();
    let ctx = t.path_context(t.root()).unwrap();
    let err = ops.branch_plan(&ctx, t.node(t.root()).unwrap(), 6, &[]).unwrap_err();
    assert!(matches!(err, OperatorError::Fanout { got: 7, max: 6 }));
}

#[test]
fn malformed_reply_gets_one_reminder() {
    let b = Scripted::new(&["I think we should split it.", "still no json"]);
    let llm = session(&b);
    let tpl = PromptTemplates::builtin();
    let ops = Operators::new(&llm, &tpl);
    let t = failed_root();
    let ctx = t.path_context(t.root()).unwrap();
    let err = ops.branch_plan(&ctx, t.node(t.root()).unwrap(), 6, &[]).unwrap_err();
    assert!(matches!(err, OperatorError::Parse { .. }), "{err:?}");
    assert_eq!(llm.calls(), 2);
}

#[test]
fn taken_names_are_rejected() {
    let b = Scripted::new(&[&plan_reply(&["top", "x"]), &plan_reply(&["top", "y"])]);
    let llm = session(&b);
    let tpl = PromptTemplates::builtin();
    let ops = Operators::new(&llm, &tpl);
    let t = failed_root();
    let ctx = t.path_context(t.root()).unwrap();
    let err = ops.branch_plan(&ctx, t.node(t.root()).unwrap(), 6, &["top".into()]).unwrap_err();
    assert!(matches!(err, OperatorError::NameCollision(ref v) if v == &["top".to_string()]));
}

#[test]
fn branching_requires_failed_leaf() {
    let b = Scripted::new(&[]);
    let llm = session(&b);
    let tpl = PromptTemplates::builtin();
    let ops = Operators::new(&llm, &tpl);
    let t = tree();
    let ctx = t.path_context(t.root()).unwrap();
    let err = ops.branch_plan(&ctx, t.node(t.root()).unwrap(), 6, &[]).unwrap_err();
    assert!(matches!(err, OperatorError::Precondition(_)));
    assert_eq!(llm.calls(), 0);
}

#[test]
fn materialize_checks_name_and_testbench() {
    let wrong = artifacts_reply("adder");
    let right = artifacts_reply("a_part");
    let b = Scripted::new(&[&wrong, &right]);
    let llm = session(&b);
    let tpl = PromptTemplates::builtin();
    let ops = Operators::new(&llm, &tpl);
    let t = failed_root();
    let ctx = t.path_context(t.root()).unwrap();
    let out = ops.materialize_child(&ctx, &ChildSeed::new("a_part", "spec"), true).unwrap();
    assert!(out.design.contains("module a_part"));
    assert!(out.testbench.unwrap().contains("a_part dut"));
    assert!(b.seen.lock().unwrap()[1].messages[3].content.contains("`module a_part`"));

    let b = Scripted::new(&[&wrong, &wrong]);
    let llm = session(&b);
    let ops = Operators::new(&llm, &tpl);
    let err = ops.materialize_child(&ctx, &ChildSeed::new("a_part", "spec"), true).unwrap_err();
    assert!(matches!(err, OperatorError::NameMismatch { ref expected, .. } if expected == "a_part"));
}

#[test]
fn materialize_without_sentinel_is_a_format_error() {
    let no_sentinel = grammar::fence_verilog("design", "module a; endmodule")
        + &grammar::fence_verilog("testbench", "module tb; a u(); endmodule");
    let b = Scripted::new(&[&no_sentinel, &artifacts_reply("a")]);
    let llm = session(&b);
    let tpl = PromptTemplates::builtin();
    let ops = Operators::new(&llm, &tpl);
    let t = failed_root();
    let ctx = t.path_context(t.root()).unwrap();
    assert!(ops.materialize_child(&ctx, &ChildSeed::new("a", "s"), true).is_ok());
    assert!(b.seen.lock().unwrap()[1].messages[3].content.contains("VERIBTOT_RESULT"));
}

#[test]
fn design_only_materialize_ignores_testbench() {
    let b = Scripted::new(&[&grammar::fence_verilog("design", "module a; endmodule")]);
    let llm = session(&b);
    let tpl = PromptTemplates::builtin();
    let ops = Operators::new(&llm, &tpl);
    let t = failed_root();
    let ctx = t.path_context(t.root()).unwrap();
    let out = ops.materialize_child(&ctx, &ChildSeed::new("a", "s"), false).unwrap();
    assert_eq!(out.testbench, None);
    assert_eq!(b.seen.lock().unwrap()[0].hint("with_testbench"), Some("false"));
}

fn evaluated_node(tb: Option<&str>) -> ThoughtNode {
    let mut t = tree();
    let r = t.root();
    t.set_artifacts(r, "module top; endmodule\n".into(), tb.map(String::from)).unwrap();
    t.node(r).unwrap().clone()
}

#[test]
fn simulator_verdict_uses_sentinel() {
    let node = evaluated_node(Some("tb"));
    let sources = vec![node.design.clone().unwrap()];
    let verifier = MockVerifier::new(MockDefault::Pass).script(&sources, Some("tb"), fail_outcome(Some(3)));
    let complexity = grammar::fence_json(&json!({"complexity": "complex"}));
    let b = Scripted::new(&[&complexity]);
    let llm = session(&b);
    let tpl = PromptTemplates::builtin();
    let ops = Operators::new(&llm, &tpl);
    let v = ops.evaluate(&verifier, &node, &sources, EvalMode::Simulator, None).unwrap();
    assert!(!v.passed);
    assert_eq!(v.complexity, Complexity::Complex);
    assert_eq!(v.source, EvalSource::Simulator);
    assert!(v.diagnosis.contains("mismatches=3"), "{}", v.diagnosis);
    assert_eq!(b.seen.lock().unwrap()[0].tag, tags::COMPLEXITY);
}

#[test]
fn hybrid_falls_back_to_judge_on_compile_failure() {
    let node = evaluated_node(Some("tb"));
    let sources = vec![node.design.clone().unwrap()];
    let mut broken = pass_outcome();
    broken.syntax_ok = false;
    broken.functional_pass = None;
    let verifier = MockVerifier::new(MockDefault::Pass).script(&sources, Some("tb"), broken);
    let judge = grammar::fence_json(&json!({"passed": false, "complexity": "simple", "diagnosis": "syntax"}));
    let b = Scripted::new(&[&judge]);
    let llm = session(&b);
    let tpl = PromptTemplates::builtin();
    let ops = Operators::new(&llm, &tpl);
    let v = ops.evaluate(&verifier, &node, &sources, EvalMode::Hybrid, None).unwrap();
    assert_eq!(v.source, EvalSource::LlmJudge);
    assert_eq!(v.diagnosis, "syntax");
}

#[test]
fn judge_requires_diagnosis_on_failure() {
    let node = evaluated_node(None);
    let sources = vec![node.design.clone().unwrap()];
    let bad = grammar::fence_json(&json!({"passed": false, "complexity": "simple"}));
    let good = grammar::fence_json(&json!({"passed": true, "complexity": "SIMPLE", "diagnosis": "fine"}));
    let b = Scripted::new(&[&bad, &good]);
    let llm = session(&b);
    let tpl = PromptTemplates::builtin();
    let ops = Operators::new(&llm, &tpl);
    let v = ops
        .evaluate(&MockVerifier::new(MockDefault::Pass), &node, &sources, EvalMode::LlmJudge, None)
        .unwrap();
    assert!(v.passed);
    assert_eq!(v.diagnosis, "");
    assert_eq!(v.source, EvalSource::LlmJudge);
}

#[test]
fn simulator_mode_without_testbench_is_rejected() {
    let node = evaluated_node(None);
    let b = Scripted::new(&[]);
    let llm = session(&b);
    let tpl = PromptTemplates::builtin();
    let ops = Operators::new(&llm, &tpl);
    let err = ops
        .evaluate(&MockVerifier::new(MockDefault::Pass), &node, &[], EvalMode::Simulator, None)
        .unwrap_err();
    assert!(matches!(err, OperatorError::Precondition(_)));
}

fn branched_root() -> (BacktrackTree, Vec<(String, String)>) {
    let mut t = failed_root();
    let r = t.root();
    let kids = t
        .attach_children(r, &[ChildSeed::new("ctl", "c"), ChildSeed::new("rca", "r")])
        .unwrap();
    let mut verified = Vec::new();
    for (k, n) in kids.iter().zip(["ctl", "rca"]) {
        let d = format!("module {n}(input a);\nendmodule\n");
        t.set_artifacts(*k, d.clone(), Some("tb".into())).unwrap();
        t.transition(*k, NodeStatus::EvaluatedPass).unwrap();
        verified.push((n.to_string(), d));
    }
    (t, verified)
}

#[test]
fn integration_must_instantiate_children() {
    let (t, verified) = branched_root();
    let only_ctl = grammar::fence_verilog("design", "module top(input a);\n  ctl u0(.a(a));\nendmodule")
        + &grammar::fence_verilog("testbench", "module tb; top d(); initial $display(\"VERIBTOT_RESULT: PASS\"); endmodule");
    let b = Scripted::new(&[&only_ctl, &only_ctl]);
    let llm = session(&b);
    let tpl = PromptTemplates::builtin();
    let ops = Operators::new(&llm, &tpl);
    let ctx = t.path_context(t.root()).unwrap();
    let err = ops.rethink(&ctx, t.node(t.root()).unwrap(), &verified, true).unwrap_err();
    assert!(matches!(err, OperatorError::MissingInstantiation { ref missing } if missing == &["rca".to_string()]));
    let seen = b.seen.lock().unwrap();
    assert!(seen[0].messages[1].content.contains("module rca"));
    assert_eq!(seen[0].hint("children"), Some("ctl,rca"));
}

#[test]
fn integration_success() {
    let (t, verified) = branched_root();
    let good = grammar::fence_verilog(
        "design",
        "module top(input a);\n  ctl u0(.a(a));\n  rca u1(.a(a));\nendmodule",
    ) + &grammar::fence_verilog("testbench", "module tb; top d(); initial $display(\"VERIBTOT_RESULT: PASS\"); endmodule");
    let b = Scripted::new(&[&good]);
    let llm = session(&b);
    let tpl = PromptTemplates::builtin();
    let ops = Operators::new(&llm, &tpl);
    let ctx = t.path_context(t.root()).unwrap();
    let out = ops.rethink(&ctx, t.node(t.root()).unwrap(), &verified, true).unwrap();
    assert!(out.design.contains("rca u1"));
}

#[test]
fn leaf_rethink_uses_diagnosis() {
    let t = failed_root();
    let b = Scripted::new(&[&artifacts_reply("top")]);
    let llm = session(&b);
    let tpl = PromptTemplates::builtin();
    let ops = Operators::new(&llm, &tpl);
    let ctx = t.path_context(t.root()).unwrap();
    ops.rethink(&ctx, t.node(t.root()).unwrap(), &[], true).unwrap();
    assert!(b.seen.lock().unwrap()[0].messages[1].content.contains("carry wrong"));
    assert!(ops.rethink(&ctx, t.node(t.root()).unwrap(), &[("x".into(), "y".into())], true).is_err());
}

#[test]
fn backtrack_parses_actions() {
    let t = failed_root();
    let ctx = t.path_context(t.root()).unwrap();
    let node = t.node(t.root()).unwrap();
    let tpl = PromptTemplates::builtin();
    for (raw, want) in [
        ("rebranch_here", BacktrackAction::RebranchHere),
        ("Rebranch-Here", BacktrackAction::RebranchHere),
        ("ascend", BacktrackAction::Ascend),
    ] {
        let b = Scripted::new(&[&grammar::fence_json(&json!({"action": raw, "rationale": "r"}))]);
        let llm = session(&b);
        let ops = Operators::new(&llm, &tpl);
        let d = ops.backtrack(&ctx, node, &[], &["carry wrong".into()]).unwrap();
        assert_eq!(d.action, want);
    }
    let b = Scripted::new(&[
        &grammar::fence_json(&json!({"action": "retry"})),
        &grammar::fence_json(&json!({"action": "sideways"})),
    ]);
    let llm = session(&b);
    let ops = Operators::new(&llm, &tpl);
    assert!(matches!(ops.backtrack(&ctx, node, &[], &[]), Err(OperatorError::Parse { .. })));
}

#[test]
fn polish_keeps_module_set() {
    let agg = AggregatedDesign {
        source: "module a; endmodule\nmodule top; a u(); endmodule\n".into(),
        module_order: vec!["a".into(), "top".into()],
        top_module: "top".into(),
    };
    let tpl = PromptTemplates::builtin();
    let renamed = grammar::fence_verilog("design", "module b; endmodule\nmodule top; b u(); endmodule");
    let b = Scripted::new(&[&renamed]);
    let llm = session(&b);
    assert_eq!(Operators::new(&llm, &tpl).polish(&agg).unwrap(), agg);

    let tidy = grammar::fence_verilog("design", "module a;\nendmodule\n\nmodule top;\n  a u();\nendmodule");
    let b = Scripted::new(&[&tidy]);
    let llm = session(&b);
    let out = Operators::new(&llm, &tpl).polish(&agg).unwrap();
    assert!(out.source.contains("  a u();"));
}

#[test]
fn budget_exhaustion_surfaces_as_llm_error() {
    let b = Scripted::new(&[&plan_reply(&["a", "b"])]);
    let llm = session(&b).with_call_budget(0);
    let tpl = PromptTemplates::builtin();
    let ops = Operators::new(&llm, &tpl);
    let t = failed_root();
    let ctx = t.path_context(t.root()).unwrap();
    let err = ops.branch_plan(&ctx, t.node(t.root()).unwrap(), 6, &[]).unwrap_err();
    assert!(matches!(err, OperatorError::Llm(LlmError::BudgetExhausted { .. })));
}

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,10}".prop_filter("keyword", |s| crate::verilog::is_identifier(s))
}

proptest! {
    #[test]
    fn branch_plan_round_trips(
        names in prop::collection::btree_set(ident(), 2..=6),
        specs in prop::collection::vec("[ -~]{1,40}", 6),
        rationale in "[ -~\n]{0,60}",
    ) {
        let children: Vec<ChildSeed> = names
            .iter()
            .zip(&specs)
            .map(|(n, s)| ChildSeed::new(n.clone(), format!("x{s}")))
            .collect();
        let plan = BranchPlan { children, rationale };
        let text = grammar::fence_json(&plan.to_json());
        let back = BranchPlan::from_json(&grammar::json_block(&text).unwrap()).unwrap();
        prop_assert_eq!(back, plan);
    }
}
