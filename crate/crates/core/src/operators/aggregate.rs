use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::OperatorError;
use crate::tree::{BacktrackTree, NodeId, NodeStatus};
use crate::verilog;

/// The assembled design: every verified module, children before parents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatedDesign {
    pub source: String,
    pub module_order: Vec<String>,
    pub top_module: String,
}

/// Assembles the final design from a fully verified tree. Pure: identical
/// trees give byte-identical output.
pub fn aggregate(tree: &BacktrackTree) -> Result<AggregatedDesign, OperatorError> {
    let offending: Vec<_> = tree
        .postorder()
        .into_iter()
        .filter_map(|id| {
            let n = tree.get(id)?;
            (n.status != NodeStatus::EvaluatedPass || n.design.is_none())
                .then(|| (id, n.module_name.clone()))
        })
        .collect();
    if !offending.is_empty() {
        return Err(OperatorError::Aggregation(offending));
    }
    Ok(assemble(tree, tree.root()))
}

/// Like [`aggregate`] but takes whatever designs the live nodes carry,
/// regardless of status. Used when a budget trips before the root passes.
pub fn aggregate_best_effort(tree: &BacktrackTree) -> Option<AggregatedDesign> {
    let root = tree.get(tree.root())?;
    root.design.as_ref()?;
    Some(assemble(tree, tree.root()))
}

/// Compilable source for the subtree under `id`, assembled by the same rules
/// as the final design. Used to simulate intermediate nodes.
pub fn subtree_source(tree: &BacktrackTree, id: NodeId) -> String {
    assemble(tree, id).source
}

fn assemble(tree: &BacktrackTree, top: NodeId) -> AggregatedDesign {
    let owned: HashSet<&str> = tree.nodes().map(|n| n.module_name.as_str()).collect();
    let mut emitted: HashSet<String> = HashSet::new();
    let mut pieces: Vec<String> = Vec::new();
    let mut order = Vec::new();

    for id in tree.postorder_from(top) {
        let node = match tree.get(id) {
            Some(n) => n,
            None => continue,
        };
        let Some(design) = node.design.as_deref() else {
            continue;
        };
        // Drop copies of modules owned by other nodes and anything already
        // emitted; keep the node's own module and any private helpers.
        let mut cuts = Vec::new();
        let mut own_seen = false;
        for block in verilog::module_blocks(design) {
            let foreign = block.name != node.module_name && owned.contains(block.name.as_str());
            let duplicate = emitted.contains(&block.name)
                || (block.name == node.module_name && own_seen);
            if foreign || duplicate {
                cuts.push((block.start, block.end));
            } else if block.name == node.module_name {
                own_seen = true;
            }
        }
        let text = if cuts.is_empty() {
            design.to_string()
        } else {
            let mut kept = String::with_capacity(design.len());
            let mut at = 0;
            for (s, e) in cuts {
                kept.push_str(&design[at..s]);
                at = e;
            }
            kept.push_str(&design[at..]);
            tidy_blank_lines(&kept)
        };
        for name in verilog::module_names(&text) {
            emitted.insert(name);
        }
        order.push(node.module_name.clone());
        pieces.push(text);
    }

    let source = if pieces.len() == 1 {
        pieces.pop().unwrap_or_default()
    } else {
        pieces
            .iter()
            .map(|p| p.trim_end_matches('\n'))
            .collect::<Vec<_>>()
            .join("\n\n")
            + "\n"
    };
    AggregatedDesign {
        source,
        module_order: order,
        top_module: tree.get(top).map(|n| n.module_name.clone()).unwrap_or_default(),
    }
}

fn tidy_blank_lines(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut blank_run = 0;
    for line in s.lines() {
        if line.trim().is_empty() {
            blank_run += 1;
            if blank_run > 1 {
                continue;
            }
        } else {
            blank_run = 0;
        }
        out.push_str(line);
        out.push('\n');
    }
    out.trim_start_matches('\n').to_string()
}
