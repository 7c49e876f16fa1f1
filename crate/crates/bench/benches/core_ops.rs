use std::hint::black_box;
use std::sync::Arc;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use serde_json::json;
use veribtot_bench::{fixtures_dir, verified_tree};
use veribtot_core::harness::{load_case_dir, pass_at_k};
use veribtot_core::llm::{ReplayBackend, Transcript};
use veribtot_core::operators::{aggregate, grammar};
use veribtot_core::tree::ChildSeed;
use veribtot_core::verify::{classify_log, MockScript, MockVerifier};
use veribtot_core::{run, BacktrackTree, DesignTask, NodeStatus, PromptTemplates, RunConfig, RunEnv};

fn metrics(c: &mut Criterion) {
    c.bench_function("pass_at_k n=5 all (c,k)", |b| {
        b.iter(|| {
            let mut s = 0.0;
            for c in 0..=5 {
                for k in 1..=5 {
                    s += pass_at_k(black_box(5), c, k).unwrap();
                }
            }
            s
        })
    });
    c.bench_function("pass_at_k n=200 k=50", |b| b.iter(|| pass_at_k(black_box(200), 37, 50).unwrap()));
}

fn tree_ops(c: &mut Criterion) {
    let wide = verified_tree(3, 4);
    c.bench_function("check_invariants 85 nodes", |b| b.iter(|| black_box(&wide).check_invariants().unwrap()));
    c.bench_function("aggregate 85 nodes", |b| b.iter(|| aggregate(black_box(&wide)).unwrap()));

    let base = {
        let task = DesignTask::new("bench", "module tb; endmodule", "top", Duration::from_secs(1)).unwrap();
        let mut t = BacktrackTree::init(task).unwrap();
        let root = t.root();
        t.set_artifacts(root, "module top; endmodule".into(), None).unwrap();
        t.transition(root, NodeStatus::EvaluatedFail).unwrap();
        t
    };
    let seeds: Vec<ChildSeed> = (0..6).map(|i| ChildSeed::new(format!("c{i}"), "part")).collect();
    c.bench_function("attach then prune 6 children", |b| {
        b.iter_batched(
            || base.clone(),
            |mut t| {
                let root = t.root();
                t.attach_children(root, &seeds).unwrap();
                t.prune_children(root).unwrap()
            },
            criterion::BatchSize::SmallInput,
        )
    });
}

fn parsing(c: &mut Criterion) {
    let plan = grammar::fence_json(&json!({
        "children": (0..6).map(|i| json!({"module_name": format!("stage_{i}"), "spec": "one pipeline stage"})).collect::<Vec<_>>(),
        "rationale": "split by pipeline stage",
    }));
    let reply = format!("Here is the plan.\n\n{plan}\nDone.");
    c.bench_function("json_block branch plan", |b| b.iter(|| grammar::json_block(black_box(&reply)).unwrap()));

    let artifacts = format!(
        "{}\n{}",
        grammar::fence_verilog("design", &"  assign y = a;\n".repeat(200)),
        grammar::fence_verilog("testbench", &"  #1 a = a + 1;\n".repeat(200))
    );
    c.bench_function("design_and_testbench", |b| b.iter(|| grammar::design_and_testbench(black_box(&artifacts))));

    let log = "VCD info: dumpfile\n".repeat(500) + "VERIBTOT_RESULT: FAIL mismatches=12\n";
    c.bench_function("classify_log 500 lines", |b| b.iter(|| classify_log(black_box(&log))));
}

fn pipe_adder_replay(c: &mut Criterion) {
    let dir = fixtures_dir().join("pipe_adder");
    let case = load_case_dir(&dir.join("case")).unwrap();
    let transcript = Transcript::load(&dir.join("transcript.jsonl")).unwrap();
    let verifier = MockVerifier::from_script(MockScript::load(&dir.join("mock_verifier.json")).unwrap()).unwrap();
    let templates = PromptTemplates::builtin();
    let cfg = RunConfig { rethink_budget: 0, backtrack_budget: 3, llm_call_budget: 30, ..RunConfig::default() };
    let task = case.task();
    c.bench_function("pipe_adder replay end to end", |b| {
        b.iter(|| {
            let env = RunEnv::new(Arc::new(ReplayBackend::new(transcript.clone())), &verifier, &templates);
            let r = run(&task, &env, &cfg);
            assert!(r.functional_ok);
            r.llm_calls
        })
    });
}

criterion_group!(benches, metrics, tree_ops, parsing, pipe_adder_replay);
criterion_main!(benches);
