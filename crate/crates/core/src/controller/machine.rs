//! The depth-first backtrack-tree machine shared by VeriBToT and its
//! reflection-only ablation.

use std::time::Instant;

use serde::Serialize;

use super::{finish, Outcome, OracleTbPolicy, RunConfig, RunEnv, RunResult, TerminatedBy};
use crate::llm::LlmError;
use crate::operators::{
    aggregate, aggregate_best_effort, subtree_source, BacktrackAction, Complexity, EvalMode,
    OperatorError, Operators,
};
use crate::tree::{BacktrackTree, ChildSeed, DesignTask, NodeId, NodeStatus, TreeError};

/// Observable steps of a run, reported to an observer after the tree has
/// been updated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum TreeEvent {
    Initialized { root: NodeId },
    Evaluated { id: NodeId, passed: bool },
    Rethought { id: NodeId },
    Integrated { id: NodeId },
    Branched { id: NodeId, children: Vec<NodeId> },
    Materialized { id: NodeId },
    Pruned { id: NodeId, removed: usize },
    Ascended { from: NodeId, to: NodeId },
    Finalized,
}

enum Stop {
    Budget(String),
    Failure(String),
}

impl From<OperatorError> for Stop {
    fn from(e: OperatorError) -> Self {
        match e {
            OperatorError::Llm(LlmError::BudgetExhausted { .. }) => Stop::Budget(e.to_string()),
            other => Stop::Failure(other.to_string()),
        }
    }
}

impl From<TreeError> for Stop {
    fn from(e: TreeError) -> Self {
        Stop::Failure(e.to_string())
    }
}

type Observer<'o> = &'o mut dyn FnMut(&TreeEvent, &BacktrackTree);

struct Machine<'a, 'o> {
    tree: BacktrackTree,
    ops: Operators<'a>,
    env: &'a RunEnv<'a>,
    cfg: &'a RunConfig,
    with_tb: bool,
    mode: EvalMode,
    backtracks_left: u32,
    observer: Observer<'o>,
}

/// Full VeriBToT: every node carries its own testbench.
pub fn run_veribtot(task: &DesignTask, env: &RunEnv<'_>, cfg: &RunConfig) -> RunResult {
    run_veribtot_observed(task, env, cfg, &mut |_, _| {})
}

/// Reflection-only ablation: nodes carry no testbench and every
/// intermediate verdict comes from the LLM judge. Finality is unchanged.
pub fn run_veribtot_minus(task: &DesignTask, env: &RunEnv<'_>, cfg: &RunConfig) -> RunResult {
    run_tree(task, env, cfg, false, &mut |_, _| {})
}

/// [`run_veribtot`] reporting every tree mutation to `observer`.
pub fn run_veribtot_observed(
    task: &DesignTask,
    env: &RunEnv<'_>,
    cfg: &RunConfig,
    observer: &mut dyn FnMut(&TreeEvent, &BacktrackTree),
) -> RunResult {
    let with_tb = cfg.paradigm != super::Paradigm::VeriBToTMinus;
    run_tree(task, env, cfg, with_tb, observer)
}

fn run_tree(
    task: &DesignTask,
    env: &RunEnv<'_>,
    cfg: &RunConfig,
    with_tb: bool,
    observer: &mut dyn FnMut(&TreeEvent, &BacktrackTree),
) -> RunResult {
    let started = Instant::now();
    let llm = cfg.session(env.backend.clone());
    let fail = |msg: String| Outcome {
        final_source: None,
        terminated_by: TerminatedBy::OperatorFailure,
        error: Some(msg),
        tree_snapshot: None,
        root_accepted: false,
    };
    if let Err(e) = cfg.validate() {
        return finish(task, env, cfg, &llm, started, fail(e.to_string()));
    }
    let tree = match BacktrackTree::init(task.clone()) {
        Ok(t) if with_tb => t,
        Ok(t) => t.without_node_testbenches(),
        Err(e) => return finish(task, env, cfg, &llm, started, fail(e.to_string())),
    };
    let ops = Operators::new(&llm, env.templates);
    let mut m = Machine {
        tree,
        ops,
        env,
        cfg,
        with_tb,
        mode: if with_tb { cfg.eval_mode } else { EvalMode::LlmJudge },
        backtracks_left: cfg.backtrack_budget,
        observer,
    };
    let stop = m.drive().err();
    let outcome = m.conclude(stop);
    drop(m);
    finish(task, env, cfg, &llm, started, outcome)
}

impl<'a, 'o> Machine<'a, 'o> {
    fn emit(&mut self, event: TreeEvent) {
        (self.observer)(&event, &self.tree);
    }

    fn step_limit(&self) -> usize {
        (self.cfg.llm_call_budget as usize + 1) * (self.cfg.max_fanout as usize + 2) * 4
    }

    fn drive(&mut self) -> Result<(), Stop> {
        self.initialize()?;
        for _ in 0..self.step_limit() {
            if let Some(id) = self.integrable() {
                self.integrate(id)?;
                self.settle(id)?;
            } else if let Some(id) = self.tree.deepest_fresh_leaf() {
                self.settle(id)?;
            } else if self.tree.node(self.tree.root())?.status == NodeStatus::EvaluatedPass {
                return Ok(());
            } else {
                return Err(Stop::Failure("no node left to explore".into()));
            }
        }
        Err(Stop::Budget("step limit reached".into()))
    }

    fn conclude(&mut self, stop: Option<Stop>) -> Outcome {
        let root_accepted = stop.is_none();
        let (agg, terminated_by, error) = match stop {
            None => match aggregate(&self.tree) {
                Ok(a) => (Some(a), TerminatedBy::Success, None),
                Err(e) => (None, TerminatedBy::OperatorFailure, Some(e.to_string())),
            },
            Some(Stop::Budget(msg)) => {
                (aggregate_best_effort(&self.tree), TerminatedBy::BudgetExhausted, Some(msg))
            }
            Some(Stop::Failure(msg)) => {
                (aggregate_best_effort(&self.tree), TerminatedBy::OperatorFailure, Some(msg))
            }
        };
        let agg = match agg {
            Some(a) if self.cfg.polish && terminated_by == TerminatedBy::Success => {
                match self.ops.polish(&a) {
                    Ok(p) => Some(p),
                    Err(e) => {
                        tracing::warn!("polish failed, keeping aggregated design: {e}");
                        Some(a)
                    }
                }
            }
            other => other,
        };
        self.emit(TreeEvent::Finalized);
        Outcome {
            final_source: agg.map(|a| a.source),
            terminated_by,
            error,
            tree_snapshot: Some(self.tree.snapshot()),
            root_accepted,
        }
    }

    fn inloop_oracle(&self) -> bool {
        self.with_tb && self.cfg.oracle_tb_policy == OracleTbPolicy::InLoop
    }

    fn initialize(&mut self) -> Result<(), Stop> {
        let root = self.tree.root();
        let node = self.tree.node(root)?;
        let seed = ChildSeed::new(node.module_name.clone(), node.spec.clone());
        let ctx = self.tree.path_context(root)?;
        let inloop = self.inloop_oracle();
        let arts = self.ops.materialize_child(&ctx, &seed, self.with_tb && !inloop)?;
        let tb = if inloop { Some(self.tree.task().oracle_testbench.clone()) } else { arts.testbench };
        self.tree.set_artifacts(root, arts.design, tb)?;
        self.emit(TreeEvent::Initialized { root });
        Ok(())
    }

    /// First branched node, in post-order, whose children have all passed.
    fn integrable(&self) -> Option<NodeId> {
        self.tree.postorder().into_iter().find(|id| {
            self.tree.get(*id).is_some_and(|n| n.status == NodeStatus::Branched)
                && self.tree.children_all_passed(*id)
        })
    }

    fn verified_children(&self, id: NodeId) -> Result<Vec<(String, String)>, Stop> {
        let node = self.tree.node(id)?;
        Ok(node
            .children
            .iter()
            .filter_map(|c| self.tree.get(*c))
            .map(|c| (c.module_name.clone(), c.design.clone().unwrap_or_default()))
            .collect())
    }

    /// The root keeps the oracle testbench under the in-loop policy.
    fn keep_oracle(&self, id: NodeId, tb: Option<String>) -> Option<String> {
        if id == self.tree.root() && self.inloop_oracle() {
            Some(self.tree.task().oracle_testbench.clone())
        } else {
            tb
        }
    }

    fn node_wants_tb(&self, id: NodeId) -> bool {
        self.with_tb && !(id == self.tree.root() && self.inloop_oracle())
    }

    fn integrate(&mut self, id: NodeId) -> Result<(), Stop> {
        let ctx = self.tree.path_context(id)?;
        let children = self.verified_children(id)?;
        let out = self.ops.rethink(&ctx, self.tree.node(id)?, &children, self.node_wants_tb(id))?;
        let tb = self.keep_oracle(id, out.testbench);
        self.tree.apply_integration(id, out.design, tb)?;
        self.emit(TreeEvent::Integrated { id });
        Ok(())
    }

    /// Evaluates `id` and follows the failure path until the node passes,
    /// branches, or a backtrack hands control elsewhere.
    fn settle(&mut self, id: NodeId) -> Result<(), Stop> {
        loop {
            let source = subtree_source(&self.tree, id);
            let verdict = self.ops.evaluate(
                self.env.verifier,
                self.tree.node(id)?,
                &[source],
                self.mode,
                Some(self.tree.task().timeout),
            )?;
            if verdict.passed {
                self.tree.transition(id, NodeStatus::EvaluatedPass)?;
                self.tree.set_diagnosis(id, None)?;
                self.emit(TreeEvent::Evaluated { id, passed: true });
                return Ok(());
            }
            self.tree.transition(id, NodeStatus::EvaluatedFail)?;
            self.tree.set_diagnosis(id, Some(verdict.diagnosis.clone()))?;
            self.emit(TreeEvent::Evaluated { id, passed: false });

            let node = self.tree.node(id)?;
            if node.rethink_count < self.cfg.rethink_budget {
                let ctx = self.tree.path_context(id)?;
                let children = if node.is_leaf() { Vec::new() } else { self.verified_children(id)? };
                let out = self.ops.rethink(&ctx, node, &children, self.node_wants_tb(id))?;
                let tb = self.keep_oracle(id, out.testbench);
                self.tree.apply_rethink(id, out.design, tb)?;
                self.emit(TreeEvent::Rethought { id });
                continue;
            }
            let can_deepen = (self.tree.node_depth(id)? as u32) < self.cfg.max_depth;
            if node.is_leaf() && verdict.complexity == Complexity::Complex && can_deepen {
                return self.branch(id);
            }
            return self.backtrack(id);
        }
    }

    fn branch(&mut self, id: NodeId) -> Result<(), Stop> {
        let taken: Vec<String> = self.tree.nodes().map(|n| n.module_name.clone()).collect();
        let ctx = self.tree.path_context(id)?;
        let plan = self.ops.branch_plan(&ctx, self.tree.node(id)?, self.cfg.max_fanout as usize, &taken)?;
        let kids = self.tree.attach_children(id, &plan.children)?;
        self.emit(TreeEvent::Branched { id, children: kids.clone() });
        for (kid, seed) in kids.into_iter().zip(&plan.children) {
            let ctx = self.tree.path_context(kid)?;
            let arts = self.ops.materialize_child(&ctx, seed, self.with_tb)?;
            self.tree.set_artifacts(kid, arts.design, arts.testbench)?;
            self.emit(TreeEvent::Materialized { id: kid });
        }
        Ok(())
    }

    fn failure_history(&self, id: NodeId) -> Vec<String> {
        let mut history: Vec<String> = self
            .tree
            .audit_log()
            .iter()
            .filter(|e| e.snapshot.parent == Some(id))
            .map(|e| {
                let why = e.snapshot.diagnosis.as_deref().unwrap_or("discarded");
                format!("earlier submodule `{}`: {why}", e.snapshot.module_name)
            })
            .collect();
        if let Some(d) = self.tree.get(id).and_then(|n| n.diagnosis.as_deref()) {
            history.push(format!("`{}`: {d}", self.tree.get(id).map_or("", |n| &n.module_name)));
        }
        history
    }

    fn backtrack(&mut self, mut at: NodeId) -> Result<(), Stop> {
        loop {
            if self.backtracks_left == 0 {
                return Err(Stop::Budget(format!(
                    "backtrack budget of {} exhausted",
                    self.cfg.backtrack_budget
                )));
            }
            let node = self.tree.node(at)?;
            let ctx = self.tree.path_context(at)?;
            let child_names: Vec<String> = node
                .children
                .iter()
                .filter_map(|c| self.tree.get(*c))
                .map(|c| c.module_name.clone())
                .collect();
            let history = self.failure_history(at);
            let decision = self.ops.backtrack(&ctx, node, &child_names, &history)?;
            self.backtracks_left -= 1;

            let is_root = at == self.tree.root();
            let can_rebranch = (self.tree.node_depth(at)? as u32) < self.cfg.max_depth;
            let action = match decision.action {
                BacktrackAction::Ascend if is_root => BacktrackAction::RebranchHere,
                BacktrackAction::RebranchHere if !can_rebranch => BacktrackAction::Ascend,
                a => a,
            };
            match action {
                BacktrackAction::RebranchHere => {
                    let removed = self.tree.prune_children(at)?;
                    self.emit(TreeEvent::Pruned { id: at, removed });
                    return self.branch(at);
                }
                BacktrackAction::Ascend => {
                    let parent = self.tree.remove_with_siblings(at)?;
                    self.emit(TreeEvent::Ascended { from: at, to: parent });
                    at = parent;
                }
            }
        }
    }
}
