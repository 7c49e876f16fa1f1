//! The backtrack tree: thought nodes, their lifecycle, and the structural
//! mutations used by branching and both backtracking modes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::verilog;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("invalid design task: {0}")]
    InvalidTask(String),
    #[error("unknown or discarded node {0}")]
    UnknownNode(NodeId),
    #[error("structural error: {0}")]
    Structural(String),
    #[error("illegal status transition on {id}: {from:?} -> {to:?}")]
    IllegalTransition {
        id: NodeId,
        from: NodeStatus,
        to: NodeStatus,
    },
}

/// A design problem: natural-language requirement plus the oracle testbench
/// reserved for the final functional check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignTask {
    pub description: String,
    pub oracle_testbench: String,
    pub top_module_name: String,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
}

impl DesignTask {
    pub fn new(
        description: impl Into<String>,
        oracle_testbench: impl Into<String>,
        top_module_name: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, TreeError> {
        let task = Self {
            description: description.into(),
            oracle_testbench: oracle_testbench.into(),
            top_module_name: top_module_name.into(),
            timeout,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        if self.description.trim().is_empty() {
            return Err(TreeError::InvalidTask("empty description".into()));
        }
        if !verilog::is_identifier(&self.top_module_name) {
            return Err(TreeError::InvalidTask(format!(
                "`{}` is not a valid Verilog identifier",
                self.top_module_name
            )));
        }
        if self.timeout.is_zero() {
            return Err(TreeError::InvalidTask("timeout must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeStatus {
    Fresh,
    EvaluatedPass,
    EvaluatedFail,
    Rethought,
    Branched,
    Discarded,
}

impl NodeStatus {
    /// The lifecycle relation enforced by [`BacktrackTree::transition`].
    /// `Discarded` is reachable from any live status but only the structural
    /// removal operations use it.
    pub fn can_transition_to(self, next: NodeStatus) -> bool {
        use NodeStatus::*;
        match (self, next) {
            (Discarded, _) => false,
            (_, Discarded) => true,
            (Fresh, EvaluatedPass | EvaluatedFail) => true,
            (EvaluatedFail, Rethought | Branched) => true,
            (Rethought, EvaluatedPass | EvaluatedFail) => true,
            (Branched, EvaluatedPass | EvaluatedFail) => true,
            _ => false,
        }
    }
}

/// One thought step: the spec, design and testbench of a single module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThoughtNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub module_name: String,
    pub spec: String,
    pub design: Option<String>,
    pub testbench: Option<String>,
    pub status: NodeStatus,
    pub rethink_count: u32,
    pub diagnosis: Option<String>,
}

impl ThoughtNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    /// Cleared by a rebranch at an ancestor.
    Pruned,
    /// Removed together with its siblings when backtracking ascended.
    SiblingGroupRemoved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub id: NodeId,
    pub reason: RemovalReason,
    /// The node whose backtrack caused the removal.
    pub trigger: NodeId,
    pub snapshot: ThoughtNode,
}

/// Serialized path state handed to the operators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PathContext {
    pub task_description: String,
    pub ancestor_chain: Vec<AncestorSummary>,
    pub verified_sibling_summaries: Vec<SiblingSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AncestorSummary {
    pub module_name: String,
    pub spec: String,
    pub design: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SiblingSummary {
    pub module_name: String,
    pub spec: String,
}

/// Module name plus requirement for a child about to be attached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChildSeed {
    pub module_name: String,
    pub spec: String,
}

impl ChildSeed {
    pub fn new(module_name: impl Into<String>, spec: impl Into<String>) -> Self {
        Self {
            module_name: module_name.into(),
            spec: spec.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktrackTree {
    root: NodeId,
    nodes: BTreeMap<NodeId, ThoughtNode>,
    task: DesignTask,
    next_id: u64,
    audit: Vec<AuditEntry>,
    self_testbench: bool,
}

impl BacktrackTree {
    /// Creates a tree holding only the root, which carries the task itself.
    pub fn init(task: DesignTask) -> Result<Self, TreeError> {
        task.validate()?;
        let root = NodeId(0);
        let node = ThoughtNode {
            id: root,
            parent: None,
            children: Vec::new(),
            module_name: task.top_module_name.clone(),
            spec: task.description.clone(),
            design: None,
            testbench: None,
            status: NodeStatus::Fresh,
            rethink_count: 0,
            diagnosis: None,
        };
        Ok(Self {
            root,
            nodes: BTreeMap::from([(root, node)]),
            task,
            next_id: 1,
            audit: Vec::new(),
            self_testbench: true,
        })
    }

    /// Trees built for reflection-only runs carry no node testbenches, so the
    /// "passed implies testbench present" invariant is relaxed.
    pub fn without_node_testbenches(mut self) -> Self {
        self.self_testbench = false;
        self
    }

    pub fn has_node_testbenches(&self) -> bool {
        self.self_testbench
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn task(&self) -> &DesignTask {
        &self.task
    }

    pub fn get(&self, id: NodeId) -> Option<&ThoughtNode> {
        self.nodes.get(&id)
    }

    pub fn node(&self, id: NodeId) -> Result<&ThoughtNode, TreeError> {
        self.nodes.get(&id).ok_or(TreeError::UnknownNode(id))
    }

    fn node_mut(&mut self, id: NodeId) -> Result<&mut ThoughtNode, TreeError> {
        self.nodes.get_mut(&id).ok_or(TreeError::UnknownNode(id))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ThoughtNode> {
        self.nodes.values()
    }

    pub fn audit_log(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    /// Depth of a node; the root sits at 0.
    pub fn node_depth(&self, id: NodeId) -> Result<usize, TreeError> {
        let mut depth = 0;
        let mut cur = self.node(id)?;
        while let Some(p) = cur.parent {
            depth += 1;
            cur = self.node(p)?;
        }
        Ok(depth)
    }

    /// Depth of the deepest live node.
    pub fn depth(&self) -> usize {
        let mut max = 0;
        let mut stack = vec![(self.root, 0usize)];
        while let Some((id, d)) = stack.pop() {
            max = max.max(d);
            if let Some(n) = self.nodes.get(&id) {
                stack.extend(n.children.iter().map(|c| (*c, d + 1)));
            }
        }
        max
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes.get(&id).is_some_and(ThoughtNode::is_leaf)
    }

    /// True when the node has at least one child and every child passed.
    pub fn children_all_passed(&self, id: NodeId) -> bool {
        self.nodes.get(&id).is_some_and(|n| {
            !n.children.is_empty()
                && n.children
                    .iter()
                    .all(|c| self.nodes[c].status == NodeStatus::EvaluatedPass)
        })
    }

    /// Live nodes in pre-order, children in generation order.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            out.push(id);
            if let Some(n) = self.nodes.get(&id) {
                stack.extend(n.children.iter().rev());
            }
        }
        out
    }

    /// Descendants of `id` (itself included) in post-order.
    pub fn postorder_from(&self, id: NodeId) -> Vec<NodeId> {
        fn walk(tree: &BacktrackTree, id: NodeId, out: &mut Vec<NodeId>) {
            if let Some(n) = tree.nodes.get(&id) {
                for c in &n.children {
                    walk(tree, *c, out);
                }
                out.push(id);
            }
        }
        let mut out = Vec::new();
        walk(self, id, &mut out);
        out
    }

    pub fn postorder(&self) -> Vec<NodeId> {
        self.postorder_from(self.root)
    }

    /// First Fresh leaf met by a pre-order walk, i.e. the DFS frontier.
    pub fn deepest_fresh_leaf(&self) -> Option<NodeId> {
        self.preorder().into_iter().find(|id| {
            let n = &self.nodes[id];
            n.status == NodeStatus::Fresh && n.is_leaf()
        })
    }

    /// Moves a node along the lifecycle relation.
    pub fn transition(&mut self, id: NodeId, to: NodeStatus) -> Result<(), TreeError> {
        let node = self.node_mut(id)?;
        if to == NodeStatus::Discarded || !node.status.can_transition_to(to) {
            return Err(TreeError::IllegalTransition {
                id,
                from: node.status,
                to,
            });
        }
        node.status = to;
        Ok(())
    }

    /// Replaces the design/testbench artifacts of a node without touching
    /// its status.
    pub fn set_artifacts(
        &mut self,
        id: NodeId,
        design: String,
        testbench: Option<String>,
    ) -> Result<(), TreeError> {
        let node = self.node_mut(id)?;
        node.design = Some(design);
        node.testbench = testbench;
        Ok(())
    }

    pub fn set_diagnosis(&mut self, id: NodeId, diagnosis: Option<String>) -> Result<(), TreeError> {
        self.node_mut(id)?.diagnosis = diagnosis;
        Ok(())
    }

    /// Installs a repaired design on a failed node: `EvaluatedFail -> Rethought`
    /// and one more rethink charged to the node.
    pub fn apply_rethink(
        &mut self,
        id: NodeId,
        design: String,
        testbench: Option<String>,
    ) -> Result<(), TreeError> {
        self.transition(id, NodeStatus::Rethought)?;
        let node = self.node_mut(id)?;
        node.rethink_count += 1;
        node.design = Some(design);
        node.testbench = testbench;
        Ok(())
    }

    /// Installs the integration design on a branched node whose children all
    /// passed. Status stays `Branched` until evaluated; the rethink counter
    /// restarts because the node now carries a new design.
    pub fn apply_integration(
        &mut self,
        id: NodeId,
        design: String,
        testbench: Option<String>,
    ) -> Result<(), TreeError> {
        let node = self.node(id)?;
        if node.status != NodeStatus::Branched {
            return Err(TreeError::Structural(format!(
                "integration requires a branched node, {id} is {:?}",
                node.status
            )));
        }
        if !self.children_all_passed(id) {
            return Err(TreeError::Structural(format!(
                "integration of {id} requires every child to have passed"
            )));
        }
        let node = self.node_mut(id)?;
        node.rethink_count = 0;
        node.design = Some(design);
        node.testbench = testbench;
        Ok(())
    }

    /// Decomposes a failed leaf into fresh children, one per seed.
    pub fn attach_children(
        &mut self,
        parent: NodeId,
        seeds: &[ChildSeed],
    ) -> Result<Vec<NodeId>, TreeError> {
        let p = self.node(parent)?;
        if !p.is_leaf() {
            return Err(TreeError::Structural(format!("{parent} is not a leaf")));
        }
        if p.status != NodeStatus::EvaluatedFail {
            return Err(TreeError::Structural(format!(
                "{parent} must be EvaluatedFail to branch, found {:?}",
                p.status
            )));
        }
        if seeds.len() < 2 {
            return Err(TreeError::Structural(format!(
                "decomposition needs at least 2 children, got {}",
                seeds.len()
            )));
        }
        let live: HashSet<&str> = self.nodes.values().map(|n| n.module_name.as_str()).collect();
        let mut seen = HashSet::new();
        for seed in seeds {
            if !verilog::is_identifier(&seed.module_name) {
                return Err(TreeError::Structural(format!(
                    "`{}` is not a valid module name",
                    seed.module_name
                )));
            }
            if seed.spec.trim().is_empty() {
                return Err(TreeError::Structural(format!(
                    "empty spec for `{}`",
                    seed.module_name
                )));
            }
            if live.contains(seed.module_name.as_str()) || !seen.insert(seed.module_name.as_str()) {
                return Err(TreeError::Structural(format!(
                    "duplicate module name `{}`",
                    seed.module_name
                )));
            }
        }

        let mut ids = Vec::with_capacity(seeds.len());
        for seed in seeds {
            let id = NodeId(self.next_id);
            self.next_id += 1;
            self.nodes.insert(
                id,
                ThoughtNode {
                    id,
                    parent: Some(parent),
                    children: Vec::new(),
                    module_name: seed.module_name.clone(),
                    spec: seed.spec.clone(),
                    design: None,
                    testbench: None,
                    status: NodeStatus::Fresh,
                    rethink_count: 0,
                    diagnosis: None,
                },
            );
            ids.push(id);
        }
        let p = self.node_mut(parent)?;
        p.children = ids.clone();
        p.status = NodeStatus::Branched;
        Ok(ids)
    }

    fn discard_subtree(&mut self, id: NodeId, reason: RemovalReason, trigger: NodeId) -> usize {
        let doomed = self.postorder_from(id);
        let count = doomed.len();
        // Audit entries go in pre-order so logs read top-down.
        for victim in doomed.into_iter().rev() {
            if let Some(mut node) = self.nodes.remove(&victim) {
                node.status = NodeStatus::Discarded;
                self.audit.push(AuditEntry {
                    id: victim,
                    reason,
                    trigger,
                    snapshot: node,
                });
            }
        }
        count
    }

    /// Clears every strict descendant of `id`; the node becomes a failed leaf.
    /// Returns the number of removed nodes.
    pub fn prune_children(&mut self, id: NodeId) -> Result<usize, TreeError> {
        let children = std::mem::take(&mut self.node_mut(id)?.children);
        if children.is_empty() {
            return Ok(0);
        }
        let removed = children
            .into_iter()
            .map(|c| self.discard_subtree(c, RemovalReason::Pruned, id))
            .sum();
        self.node_mut(id)?.status = NodeStatus::EvaluatedFail;
        Ok(removed)
    }

    /// Removes `id` together with its siblings and all their descendants, and
    /// returns the parent, now a childless failed leaf.
    pub fn remove_with_siblings(&mut self, id: NodeId) -> Result<NodeId, TreeError> {
        let node = self.node(id)?;
        let parent = node.parent.ok_or_else(|| {
            TreeError::Structural("cannot remove the root with its siblings".into())
        })?;
        let group = std::mem::take(&mut self.node_mut(parent)?.children);
        for member in group {
            self.discard_subtree(member, RemovalReason::SiblingGroupRemoved, id);
        }
        self.node_mut(parent)?.status = NodeStatus::EvaluatedFail;
        Ok(parent)
    }

    /// The root-to-parent chain of `id` plus summaries of siblings that
    /// already passed verification.
    pub fn path_context(&self, id: NodeId) -> Result<PathContext, TreeError> {
        let node = self.node(id)?;
        let mut chain = Vec::new();
        let mut cur = node.parent;
        while let Some(p) = cur {
            let pn = self.node(p)?;
            chain.push(AncestorSummary {
                module_name: pn.module_name.clone(),
                spec: pn.spec.clone(),
                design: pn.design.clone(),
            });
            cur = pn.parent;
        }
        chain.reverse();

        let siblings = match node.parent {
            Some(p) => self
                .node(p)?
                .children
                .iter()
                .filter(|c| **c != id)
                .map(|c| &self.nodes[c])
                .filter(|s| s.status == NodeStatus::EvaluatedPass)
                .map(|s| SiblingSummary {
                    module_name: s.module_name.clone(),
                    spec: s.spec.clone(),
                })
                .collect(),
            None => Vec::new(),
        };

        Ok(PathContext {
            task_description: self.task.description.clone(),
            ancestor_chain: chain,
            verified_sibling_summaries: siblings,
        })
    }

    /// Checks every structural invariant; returns a description of the first
    /// violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let root = self
            .nodes
            .get(&self.root)
            .ok_or_else(|| format!("root {} missing", self.root))?;
        if root.parent.is_some() {
            return Err("root has a parent".into());
        }
        let mut names = HashSet::new();
        for (id, node) in &self.nodes {
            if node.id != *id {
                return Err(format!("node keyed {id} carries id {}", node.id));
            }
            if node.status == NodeStatus::Discarded {
                return Err(format!("{id} is Discarded but live"));
            }
            if *id != self.root && node.parent.is_none() {
                return Err(format!("{id} is a second root"));
            }
            if let Some(p) = node.parent {
                let pn = self
                    .nodes
                    .get(&p)
                    .ok_or_else(|| format!("{id} has missing parent {p}"))?;
                if pn.children.iter().filter(|c| **c == *id).count() != 1 {
                    return Err(format!("{p} does not list child {id} exactly once"));
                }
            }
            for c in &node.children {
                let cn = self
                    .nodes
                    .get(c)
                    .ok_or_else(|| format!("{id} lists missing child {c}"))?;
                if cn.parent != Some(*id) {
                    return Err(format!("{c} does not point back to {id}"));
                }
            }
            if node.status == NodeStatus::Branched && node.children.len() < 2 {
                return Err(format!("{id} is Branched with {} children", node.children.len()));
            }
            if node.status == NodeStatus::EvaluatedPass
                && (node.design.is_none() || (self.self_testbench && node.testbench.is_none()))
            {
                return Err(format!("{id} passed without design/testbench"));
            }
            if !names.insert(node.module_name.as_str()) {
                return Err(format!("duplicate live module name `{}`", node.module_name));
            }
        }
        let reachable = self.preorder();
        if reachable.len() != self.nodes.len() {
            return Err(format!(
                "{} nodes reachable from root, {} in map",
                reachable.len(),
                self.nodes.len()
            ));
        }
        Ok(())
    }

    pub fn snapshot(&self) -> TreeSnapshot {
        TreeSnapshot {
            schema_version: TreeSnapshot::SCHEMA_VERSION,
            task: self.task.clone(),
            root: self.root,
            next_id: self.next_id,
            node_testbenches: self.self_testbench,
            nodes: self.preorder().into_iter().map(|id| self.nodes[&id].clone()).collect(),
            audit: self.audit.clone(),
        }
    }

    pub fn from_snapshot(snapshot: TreeSnapshot) -> Result<Self, TreeError> {
        if snapshot.schema_version != TreeSnapshot::SCHEMA_VERSION {
            return Err(TreeError::Structural(format!(
                "unsupported snapshot schema {}",
                snapshot.schema_version
            )));
        }
        let tree = Self {
            root: snapshot.root,
            nodes: snapshot.nodes.into_iter().map(|n| (n.id, n)).collect(),
            task: snapshot.task,
            next_id: snapshot.next_id,
            audit: snapshot.audit,
            self_testbench: snapshot.node_testbenches,
        };
        tree.check_invariants().map_err(TreeError::Structural)?;
        Ok(tree)
    }
}

/// JSON shape used by `--dump-tree` and golden-file tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub schema_version: u32,
    pub task: DesignTask,
    pub root: NodeId,
    pub next_id: u64,
    pub node_testbenches: bool,
    /// Live nodes in pre-order.
    pub nodes: Vec<ThoughtNode>,
    pub audit: Vec<AuditEntry>,
}

impl TreeSnapshot {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn live_count(&self) -> usize {
        self.nodes.len()
    }
}
