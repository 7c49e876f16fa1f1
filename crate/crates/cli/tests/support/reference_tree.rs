//! A deliberately naive model of the backtrack tree: one flat list of every
//! node ever created, children recovered by rescanning parent links. Random
//! operation sequences are applied to both implementations and compared
//! after every step.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use veribtot_core::tree::{BacktrackTree, ChildSeed, DesignTask, NodeId, NodeStatus};

#[derive(Debug, Clone)]
struct RefNode {
    parent: Option<u64>,
    name: String,
    status: NodeStatus,
    design: bool,
    testbench: bool,
    live: bool,
}

#[derive(Debug, Clone)]
pub struct RefTree {
    nodes: Vec<RefNode>,
}

const ALLOWED: [(NodeStatus, NodeStatus); 8] = [
    (NodeStatus::Fresh, NodeStatus::EvaluatedPass),
    (NodeStatus::Fresh, NodeStatus::EvaluatedFail),
    (NodeStatus::EvaluatedFail, NodeStatus::Rethought),
    (NodeStatus::EvaluatedFail, NodeStatus::Branched),
    (NodeStatus::Rethought, NodeStatus::EvaluatedPass),
    (NodeStatus::Rethought, NodeStatus::EvaluatedFail),
    (NodeStatus::Branched, NodeStatus::EvaluatedPass),
    (NodeStatus::Branched, NodeStatus::EvaluatedFail),
];

fn allowed(from: NodeStatus, to: NodeStatus) -> bool {
    ALLOWED.contains(&(from, to))
}

fn valid_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$')
}

impl RefTree {
    pub fn new(root_name: &str) -> Self {
        Self {
            nodes: vec![RefNode {
                parent: None,
                name: root_name.into(),
                status: NodeStatus::Fresh,
                design: false,
                testbench: false,
                live: true,
            }],
        }
    }

    fn live(&self, id: u64) -> bool {
        self.nodes.get(id as usize).is_some_and(|n| n.live)
    }

    pub fn live_ids(&self) -> Vec<u64> {
        (0..self.nodes.len() as u64).filter(|i| self.live(*i)).collect()
    }

    pub fn children(&self, id: u64) -> Vec<u64> {
        self.live_ids().into_iter().filter(|c| self.nodes[*c as usize].parent == Some(id)).collect()
    }

    fn preorder(&self, id: u64, out: &mut Vec<u64>) {
        out.push(id);
        for c in self.children(id) {
            self.preorder(c, out);
        }
    }

    pub fn frontier(&self) -> Option<u64> {
        let mut order = Vec::new();
        self.preorder(0, &mut order);
        order
            .into_iter()
            .find(|id| self.nodes[*id as usize].status == NodeStatus::Fresh && self.children(*id).is_empty())
    }

    fn discard_below(&mut self, id: u64) -> usize {
        let mut removed = 0;
        for c in self.children(id) {
            removed += self.discard_below(c) + 1;
            self.nodes[c as usize].live = false;
            self.nodes[c as usize].status = NodeStatus::Discarded;
        }
        removed
    }

    pub fn transition(&mut self, id: u64, to: NodeStatus) -> Result<(), ()> {
        if !self.live(id) || to == NodeStatus::Discarded || !allowed(self.nodes[id as usize].status, to) {
            return Err(());
        }
        self.nodes[id as usize].status = to;
        Ok(())
    }

    pub fn set_artifacts(&mut self, id: u64, testbench: bool) -> Result<(), ()> {
        if !self.live(id) {
            return Err(());
        }
        let n = &mut self.nodes[id as usize];
        n.design = true;
        n.testbench = testbench;
        Ok(())
    }

    pub fn attach(&mut self, parent: u64, names: &[String]) -> Result<Vec<u64>, ()> {
        if !self.live(parent)
            || !self.children(parent).is_empty()
            || self.nodes[parent as usize].status != NodeStatus::EvaluatedFail
            || names.len() < 2
        {
            return Err(());
        }
        for (i, name) in names.iter().enumerate() {
            let clash = self.live_ids().iter().any(|l| self.nodes[*l as usize].name == *name)
                || names[..i].contains(name);
            if !valid_identifier(name) || clash {
                return Err(());
            }
        }
        let first = self.nodes.len() as u64;
        for name in names {
            self.nodes.push(RefNode {
                parent: Some(parent),
                name: name.clone(),
                status: NodeStatus::Fresh,
                design: false,
                testbench: false,
                live: true,
            });
        }
        self.nodes[parent as usize].status = NodeStatus::Branched;
        Ok((first..first + names.len() as u64).collect())
    }

    pub fn prune(&mut self, id: u64) -> Result<usize, ()> {
        if !self.live(id) {
            return Err(());
        }
        let removed = self.discard_below(id);
        if removed > 0 {
            self.nodes[id as usize].status = NodeStatus::EvaluatedFail;
        }
        Ok(removed)
    }

    pub fn remove_with_siblings(&mut self, id: u64) -> Result<u64, ()> {
        if !self.live(id) {
            return Err(());
        }
        let parent = self.nodes[id as usize].parent.ok_or(())?;
        self.discard_below(parent);
        self.nodes[parent as usize].status = NodeStatus::EvaluatedFail;
        Ok(parent)
    }

    pub fn discarded(&self) -> usize {
        self.nodes.iter().filter(|n| !n.live).count()
    }
}

const STATUSES: [NodeStatus; 6] = [
    NodeStatus::Fresh,
    NodeStatus::EvaluatedPass,
    NodeStatus::EvaluatedFail,
    NodeStatus::Rethought,
    NodeStatus::Branched,
    NodeStatus::Discarded,
];

pub const MAX_NODES: usize = 50;

/// Compares every observable of the two trees; returns the first difference.
pub fn compare(real: &BacktrackTree, model: &RefTree) -> Result<(), String> {
    let mut real_ids: Vec<u64> = real.nodes().map(|n| n.id.0).collect();
    real_ids.sort_unstable();
    let model_ids = model.live_ids();
    if real_ids != model_ids {
        return Err(format!("live sets differ: {real_ids:?} vs {model_ids:?}"));
    }
    for id in &model_ids {
        let r = real.node(NodeId(*id)).unwrap();
        let m = &model.nodes[*id as usize];
        if r.status != m.status || r.parent.map(|p| p.0) != m.parent || r.module_name != m.name {
            return Err(format!("n{id}: {:?}/{:?} vs {:?}/{:?}", r.status, r.parent, m.status, m.parent));
        }
        if r.design.is_some() != m.design || r.testbench.is_some() != m.testbench {
            return Err(format!("n{id}: artifacts differ"));
        }
        let kids: Vec<u64> = r.children.iter().map(|c| c.0).collect();
        if kids != model.children(*id) {
            return Err(format!("n{id}: children {kids:?} vs {:?}", model.children(*id)));
        }
    }
    let (rf, mf) = (real.deepest_fresh_leaf().map(|n| n.0), model.frontier());
    if rf != mf {
        return Err(format!("frontier {rf:?} vs {mf:?}"));
    }
    if real.audit_log().len() != model.discarded() {
        return Err(format!("audit {} vs {} discards", real.audit_log().len(), model.discarded()));
    }
    Ok(())
}

fn pick_target(rng: &mut StdRng, model: &RefTree) -> u64 {
    let live = model.live_ids();
    if rng.random_bool(0.1) {
        rng.random_range(0..model.nodes.len() as u64 + 2)
    } else {
        live[rng.random_range(0..live.len())]
    }
}

fn pick_names(rng: &mut StdRng, model: &RefTree, counter: &mut u32) -> Vec<String> {
    let k = rng.random_range(0..5);
    (0..k)
        .map(|_| match rng.random_range(0..20) {
            0 => "9bad".to_string(),
            1 => {
                let live = model.live_ids();
                model.nodes[live[rng.random_range(0..live.len())] as usize].name.clone()
            }
            2 => format!("m{}", *counter),
            _ => {
                *counter += 1;
                format!("m{}", *counter)
            }
        })
        .collect()
}

/// Applies `steps` random operations to both trees, comparing after each.
pub fn run_sequence(seed: u64, steps: usize) -> Result<usize, String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let task = DesignTask::new("reference", "module tb; endmodule", "top", std::time::Duration::from_secs(1)).unwrap();
    let mut real = BacktrackTree::init(task).unwrap();
    let mut model = RefTree::new("top");
    let mut counter = 0u32;
    let mut max_live = 1;
    for step in 0..steps {
        let target = pick_target(&mut rng, &model);
        let ctx = |what: &str| format!("seed {seed} step {step}: {what}");
        match rng.random_range(0..10) {
            0..=3 => {
                let to = if rng.random_bool(0.5) {
                    NodeStatus::EvaluatedFail
                } else {
                    STATUSES[rng.random_range(0..STATUSES.len())]
                };
                let r = real.transition(NodeId(target), to).is_ok();
                let m = model.transition(target, to).is_ok();
                if r != m {
                    return Err(ctx(&format!("transition n{target} -> {to:?}: {r} vs {m}")));
                }
            }
            4 => {
                let tb = rng.random_bool(0.7);
                let r = real.set_artifacts(NodeId(target), "module x; endmodule".into(), tb.then(|| "tb".into()));
                if r.is_ok() != model.set_artifacts(target, tb).is_ok() {
                    return Err(ctx("set_artifacts"));
                }
            }
            5..=7 => {
                let names = pick_names(&mut rng, &model, &mut counter);
                if model.live_ids().len() + names.len() > MAX_NODES {
                    continue;
                }
                let seeds: Vec<ChildSeed> = names.iter().map(|n| ChildSeed::new(n.clone(), "spec")).collect();
                let r = real.attach_children(NodeId(target), &seeds).map(|v| v.iter().map(|i| i.0).collect());
                if r.ok() != model.attach(target, &names).ok() {
                    return Err(ctx(&format!("attach {names:?} under n{target}")));
                }
            }
            8 => {
                let r = real.prune_children(NodeId(target)).ok();
                if r != model.prune(target).ok() {
                    return Err(ctx(&format!("prune n{target}")));
                }
            }
            _ => {
                let r = real.remove_with_siblings(NodeId(target)).ok().map(|p| p.0);
                if r != model.remove_with_siblings(target).ok() {
                    return Err(ctx(&format!("remove_with_siblings n{target}")));
                }
            }
        }
        compare(&real, &model).map_err(|e| ctx(&e))?;
        max_live = max_live.max(model.live_ids().len());
    }
    Ok(max_live)
}
