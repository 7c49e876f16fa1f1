//! Inputs shared by the criterion benches.

use std::path::PathBuf;
use std::time::Duration;

use veribtot_core::tree::ChildSeed;
use veribtot_core::{BacktrackTree, DesignTask, NodeId, NodeStatus};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn leaf_design(name: &str) -> String {
    format!("module {name}(input clk, input [7:0] a, output reg [7:0] y);\n  always @(posedge clk) y <= a + 8'd1;\nendmodule\n")
}

fn parent_design(name: &str, children: &[String]) -> String {
    let mut s = format!("module {name}(input clk, input [7:0] a, output [7:0] y);\n");
    for c in children {
        s += &format!("  wire [7:0] y_{c};\n  {c} u_{c}(.clk(clk), .a(a), .y(y_{c}));\n");
    }
    s += "  assign y = a;\nendmodule\n";
    s
}

fn grow(tree: &mut BacktrackTree, id: NodeId, depth: usize, fanout: usize, next: &mut usize) {
    let name = tree.node(id).unwrap().module_name.clone();
    if depth == 0 {
        tree.set_artifacts(id, leaf_design(&name), Some("module tb; endmodule".into())).unwrap();
        tree.transition(id, NodeStatus::EvaluatedPass).unwrap();
        return;
    }
    tree.set_artifacts(id, leaf_design(&name), Some("module tb; endmodule".into())).unwrap();
    tree.transition(id, NodeStatus::EvaluatedFail).unwrap();
    let seeds: Vec<ChildSeed> = (0..fanout)
        .map(|_| {
            *next += 1;
            ChildSeed::new(format!("m{next}"), "submodule")
        })
        .collect();
    let kids = tree.attach_children(id, &seeds).unwrap();
    for k in &kids {
        grow(tree, *k, depth - 1, fanout, next);
    }
    let names: Vec<String> = seeds.into_iter().map(|s| s.module_name).collect();
    tree.apply_integration(id, parent_design(&name, &names), Some("module tb; endmodule".into())).unwrap();
    tree.transition(id, NodeStatus::EvaluatedPass).unwrap();
}

/// A fully verified tree with `fanout` children per internal node.
pub fn verified_tree(depth: usize, fanout: usize) -> BacktrackTree {
    let task = DesignTask::new("benchmark top", "module tb; endmodule", "top", Duration::from_secs(1)).unwrap();
    let mut tree = BacktrackTree::init(task).unwrap();
    let root = tree.root();
    grow(&mut tree, root, depth, fanout, &mut 0);
    tree
}
