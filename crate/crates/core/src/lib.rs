//! Backtracking tree-of-thought search for Verilog generation: the thought
//! tree, its five operators, the LLM gateway, simulator-backed verification,
//! the DFS controller with its baselines, and the benchmark harness.

pub mod controller;
pub mod harness;
pub mod llm;
pub mod mock;
pub mod operators;
pub mod tree;
pub mod verify;
pub mod verilog;

pub use controller::{run, Paradigm, RunConfig, RunEnv, RunResult, TerminatedBy};
pub use harness::{BenchCase, TrialKey, TrialRecord};
pub use llm::{ChatBackend, LlmSession};
pub use operators::{EvalMode, PromptTemplates};
pub use tree::{BacktrackTree, DesignTask, NodeId, NodeStatus, ThoughtNode, TreeSnapshot};
pub use verify::{SimOutcome, Verifier};
