//! Minimal canonical baselines: IO, CoT, CoT-SC and ToT prompting.

use std::time::Instant;

use serde_json::Value;

use super::{finish, Outcome, Paradigm, RunConfig, RunEnv, RunResult, TerminatedBy};
use crate::llm::{ChatMessage, LlmError, LlmSession};
use crate::operators::{grammar, PromptTemplates};
use crate::tree::DesignTask;

pub mod tags {
    pub const IO: &str = "baseline_io";
    pub const COT: &str = "baseline_cot";
    pub const VOTE: &str = "baseline_vote";
    pub const TOT_EXPAND: &str = "baseline_tot_expand";
    pub const TOT_SCORE: &str = "baseline_tot_score";
}

struct Baseline<'a> {
    llm: &'a LlmSession,
    templates: &'a PromptTemplates,
    task: &'a DesignTask,
}

#[derive(Debug)]
enum BaselineError {
    Llm(LlmError),
    Template(String),
}

impl From<LlmError> for BaselineError {
    fn from(e: LlmError) -> Self {
        BaselineError::Llm(e)
    }
}

impl From<crate::operators::OperatorError> for BaselineError {
    fn from(e: crate::operators::OperatorError) -> Self {
        BaselineError::Template(e.to_string())
    }
}

/// First Verilog block of a response, trimmed to end in one newline.
fn extract_code(text: &str) -> Option<String> {
    grammar::design_and_testbench(text).0
}

fn normalized(code: &str) -> String {
    code.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl<'a> Baseline<'a> {
    fn ask(&self, tag: &str, template: &str, values: &[(&str, &str)]) -> Result<String, BaselineError> {
        let prompt = self.templates.render(template, values)?;
        let messages = vec![ChatMessage::system(self.templates.render("system", &[])?), ChatMessage::user(prompt)];
        let req = self.llm.request(tag, messages);
        Ok(self.llm.chat(&req)?.text)
    }

    fn base_values(&self) -> [(&'a str, &'a str); 2] {
        [("task", self.task.description.as_str()), ("top_module", self.task.top_module_name.as_str())]
    }

    fn io(&self) -> Result<Option<String>, BaselineError> {
        Ok(extract_code(&self.ask(tags::IO, "baseline_io", &self.base_values())?))
    }

    fn cot(&self) -> Result<Option<String>, BaselineError> {
        Ok(extract_code(&self.ask(tags::COT, "baseline_cot", &self.base_values())?))
    }

    /// `chains` CoT samples, then one vote over the candidates that produced
    /// code. An unusable vote falls back to the most frequent candidate.
    fn cot_sc(&self, chains: u32) -> Result<Option<String>, BaselineError> {
        let mut candidates = Vec::new();
        for _ in 0..chains {
            if let Some(code) = self.cot()? {
                candidates.push(code);
            }
        }
        match candidates.len() {
            0 => return Ok(None),
            1 => return Ok(candidates.pop()),
            _ => {}
        }
        let listing = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| format!("Candidate {i}:\n{}", grammar::fence_verilog("", c)))
            .collect::<Vec<_>>()
            .join("\n");
        let count = candidates.len().to_string();
        let [task, top] = self.base_values();
        let reply = self.ask(
            tags::VOTE,
            "baseline_vote",
            &[task, top, ("count", &count), ("candidates", &listing)],
        )?;
        let choice = grammar::json_block(&reply)
            .ok()
            .and_then(|v| v.get("choice").and_then(Value::as_u64))
            .and_then(|i| usize::try_from(i).ok())
            .filter(|i| *i < candidates.len());
        let pick = choice.unwrap_or_else(|| majority(&candidates));
        Ok(Some(candidates.swap_remove(pick)))
    }

    /// Full `width`-ary expansion to `depth` levels; every state is scored
    /// and the best-scoring leaf with code wins.
    fn tot(&self, width: u32, depth: u32) -> Result<Option<String>, BaselineError> {
        struct State {
            text: String,
            score: f64,
        }
        let depth_str = depth.to_string();
        let [task, top] = self.base_values();
        let mut frontier = vec![State { text: "(none yet)".into(), score: 0.0 }];
        for level in 1..=depth {
            let level_str = level.to_string();
            let mut next = Vec::new();
            for parent in &frontier {
                for _ in 0..width {
                    let text = self.ask(
                        tags::TOT_EXPAND,
                        "baseline_tot_expand",
                        &[task, top, ("level", &level_str), ("depth", &depth_str), ("thought", &parent.text)],
                    )?;
                    let reply = self.ask(tags::TOT_SCORE, "baseline_tot_score", &[task, top, ("candidate", &text)])?;
                    let score = grammar::json_block(&reply)
                        .ok()
                        .and_then(|v| v.get("score").and_then(Value::as_f64))
                        .filter(|s| s.is_finite())
                        .unwrap_or(0.0);
                    next.push(State { text, score: score + parent.score });
                }
            }
            frontier = next;
        }
        let mut best: Option<(f64, String)> = None;
        for s in &frontier {
            if let Some(code) = extract_code(&s.text) {
                if best.as_ref().is_none_or(|(b, _)| s.score > *b) {
                    best = Some((s.score, code));
                }
            }
        }
        Ok(best.map(|(_, c)| c))
    }
}

/// Index of the first candidate among the most frequent ones, comparing
/// whitespace-normalized text.
fn majority(candidates: &[String]) -> usize {
    let keys: Vec<String> = candidates.iter().map(|c| normalized(c)).collect();
    let mut best = (0, 0);
    for (i, k) in keys.iter().enumerate() {
        let n = keys.iter().filter(|o| *o == k).count();
        if n > best.1 {
            best = (i, n);
        }
    }
    best.0
}

/// Runs one of the IO, CoT, CoT-SC or ToT baselines.
pub fn run_baseline(task: &DesignTask, env: &RunEnv<'_>, cfg: &RunConfig) -> RunResult {
    let started = Instant::now();
    let llm = cfg.session(env.backend.clone());
    let b = Baseline { llm: &llm, templates: env.templates, task };
    let produced = match cfg.validate() {
        Err(e) => Err(BaselineError::Template(e.to_string())),
        Ok(()) => match cfg.paradigm {
            Paradigm::IO => b.io(),
            Paradigm::CoT => b.cot(),
            Paradigm::CoTSC => b.cot_sc(cfg.cotsc_chains),
            Paradigm::ToT => b.tot(cfg.tot_width, cfg.tot_depth),
            p => Err(BaselineError::Template(format!("{p} is not a baseline paradigm"))),
        },
    };
    let outcome = match produced {
        Ok(Some(code)) => Outcome {
            final_source: Some(code),
            terminated_by: TerminatedBy::Success,
            error: None,
            tree_snapshot: None,
            root_accepted: false,
        },
        Ok(None) => Outcome {
            final_source: None,
            terminated_by: TerminatedBy::OperatorFailure,
            error: Some("no Verilog block in the response".into()),
            tree_snapshot: None,
            root_accepted: false,
        },
        Err(e) => {
            let (terminated_by, msg) = match e {
                BaselineError::Llm(e @ LlmError::BudgetExhausted { .. }) => {
                    (TerminatedBy::BudgetExhausted, e.to_string())
                }
                BaselineError::Llm(e) => (TerminatedBy::OperatorFailure, e.to_string()),
                BaselineError::Template(m) => (TerminatedBy::OperatorFailure, m),
            };
            Outcome { final_source: None, terminated_by, error: Some(msg), tree_snapshot: None, root_accepted: false }
        }
    };
    finish(task, env, cfg, &llm, started, outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_prefers_most_frequent_then_first() {
        let c = |s: &str| s.to_string();
        assert_eq!(majority(&[c("a"), c("b"), c("b")]), 1);
        assert_eq!(majority(&[c("a"), c("b")]), 0);
        assert_eq!(majority(&[c("x  y"), c("z"), c("x y")]), 0);
    }
}
