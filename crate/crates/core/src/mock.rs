//! Offline chat backends: a fixed response queue and a seeded fuzzer that
//! emits grammatical but arbitrary operator replies.

use std::collections::VecDeque;
use std::sync::Mutex;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;

use crate::controller::baseline_tags;
use crate::llm::{ChatBackend, ChatRequest, ChatResponse, LlmError};
use crate::operators::{grammar, tags};

/// Rough usage figures so offline runs still exercise token accounting.
fn usage(request: &ChatRequest, text: &str) -> ChatResponse {
    let prompt: usize = request.messages.iter().map(|m| m.content.len()).sum();
    ChatResponse {
        text: text.to_string(),
        prompt_tokens: prompt.div_ceil(4) as u64,
        completion_tokens: text.len().div_ceil(4) as u64,
    }
}

/// Answers requests with queued texts in order.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    replies: Mutex<VecDeque<String>>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Requests received so far.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().expect("mock poisoned").clone()
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().expect("mock poisoned").len()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.requests.lock().expect("mock poisoned").push(request.clone());
        let text = self
            .replies
            .lock()
            .expect("mock poisoned")
            .pop_front()
            .ok_or(LlmError::ReplayExhausted { records: 0 })?;
        Ok(usage(request, &text))
    }
}

/// Seeded random replies for every operator and baseline. Replies are
/// mostly well-formed; a small fraction is garbage or breaks a content rule
/// so the retry paths are exercised too.
pub struct FuzzBackend {
    rng: Mutex<StdRng>,
    counter: Mutex<u64>,
}

impl FuzzBackend {
    pub fn new(seed: u64) -> Self {
        Self { rng: Mutex::new(StdRng::seed_from_u64(seed)), counter: Mutex::new(0) }
    }

    fn fresh_name(&self) -> String {
        let mut c = self.counter.lock().expect("mock poisoned");
        *c += 1;
        format!("fz_mod_{c}")
    }

    fn reply(&self, request: &ChatRequest, rng: &mut StdRng) -> String {
        if rng.random_bool(0.05) {
            return "Let me think about this differently.".into();
        }
        let name = request.hint("module_name").unwrap_or("top").to_string();
        let with_tb = request.hint("with_testbench") != Some("false");
        match request.tag.as_str() {
            tags::BRANCH => {
                let max: usize = request.hint("max_fanout").and_then(|m| m.parse().ok()).unwrap_or(6);
                let n = if rng.random_bool(0.1) { 1 } else { rng.random_range(2..=max.max(2)) };
                let taken: Vec<&str> = request.hint("taken_names").unwrap_or("").split(',').collect();
                let children: Vec<_> = (0..n)
                    .map(|i| {
                        let module_name = if i == 0 && rng.random_bool(0.1) && !taken[0].is_empty() {
                            taken[0].to_string()
                        } else {
                            self.fresh_name()
                        };
                        json!({"module_name": module_name, "spec": format!("part {i} of {name}")})
                    })
                    .collect();
                grammar::fence_json(&json!({"children": children, "rationale": "fuzz"}))
            }
            tags::MATERIALIZE | tags::RETHINK | tags::POLISH => {
                let declared = if rng.random_bool(0.05) { "wrong_name".to_string() } else { name.clone() };
                let kids: Vec<&str> =
                    request.hint("children").unwrap_or("").split(',').filter(|s| !s.is_empty()).collect();
                let mut body = String::new();
                for (i, k) in kids.iter().enumerate() {
                    if !rng.random_bool(0.05) {
                        body.push_str(&format!("  {k} u{i}(.a(a), .y());\n"));
                    }
                }
                let design = format!("module {declared}(input a, output y);\n{body}  assign y = a;\nendmodule\n");
                let mut text = grammar::fence_verilog("design", &design);
                if with_tb && request.tag != tags::POLISH {
                    text += &grammar::fence_verilog(
                        "testbench",
                        &format!(
                            "module tb;\n  reg a; wire y;\n  {name} dut(.a(a), .y(y));\n  initial begin\n    $display(\"VERIBTOT_RESULT: PASS\");\n    $finish;\n  end\nendmodule\n"
                        ),
                    );
                }
                text
            }
            tags::EVALUATE => {
                let passed = rng.random_bool(0.5);
                let complexity = if rng.random_bool(0.5) { "simple" } else { "complex" };
                grammar::fence_json(&json!({
                    "passed": passed,
                    "complexity": complexity,
                    "diagnosis": if passed { "" } else { "output mismatch" },
                }))
            }
            tags::COMPLEXITY => {
                let c = if rng.random_bool(0.5) { "simple" } else { "complex" };
                grammar::fence_json(&json!({ "complexity": c }))
            }
            tags::BACKTRACK => {
                let a = if rng.random_bool(0.5) { "rebranch_here" } else { "ascend" };
                grammar::fence_json(&json!({ "action": a, "rationale": "fuzz" }))
            }
            baseline_tags::VOTE => grammar::fence_json(&json!({ "choice": rng.random_range(0..4) })),
            baseline_tags::TOT_SCORE => grammar::fence_json(&json!({ "score": rng.random_range(0..=10) })),
            _ => grammar::fence_verilog("", "module top(input a, output y);\n  assign y = a;\nendmodule\n"),
        }
    }
}

impl ChatBackend for FuzzBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut rng = self.rng.lock().expect("mock poisoned");
        let text = self.reply(request, &mut rng);
        Ok(usage(request, &text))
    }
}
