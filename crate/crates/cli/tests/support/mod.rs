//! Fixture generation shared by the integration tests. Transcripts and
//! mock-verifier scripts under `fixtures/` are produced here and checked
//! for staleness by the `fixtures` test target.

#![allow(dead_code)]

pub mod reference_tree;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::json;
use veribtot_cli::config::CliConfig;
use veribtot_core::controller::{self, Paradigm, RunEnv, RunResult};
use veribtot_core::harness::{self, load_case_dir, load_suite, transcript_path, SuiteEnv, SuiteOptions, TrialKey};
use veribtot_core::llm::{ChatBackend, LlmError, RecordingBackend};
use veribtot_core::mock::ScriptedBackend;
use veribtot_core::operators::{grammar, PromptTemplates};
use veribtot_core::verify::{
    fail_outcome, pass_outcome, sources_digest, MockDefault, MockEntry, MockScript, SimOutcome, Verifier, VerifyError,
};

pub fn fixtures_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn arts(design: &str, tb: &str) -> String {
    grammar::fence_verilog("design", design) + &grammar::fence_verilog("testbench", tb)
}

pub fn design_only(design: &str) -> String {
    grammar::fence_verilog("design", design)
}

pub fn js(v: serde_json::Value) -> String {
    grammar::fence_json(&v)
}

pub fn plan(children: &[(&str, &str)], rationale: &str) -> String {
    let children: Vec<_> = children.iter().map(|(n, s)| json!({"module_name": n, "spec": s})).collect();
    js(json!({"children": children, "rationale": rationale}))
}

/// Fails any request whose sources contain one of the `bad` snippets and
/// passes everything else, remembering each answer so it can be frozen
/// into a mock-verifier script.
pub struct RuleVerifier {
    bad: Vec<(&'static str, u64)>,
    seen: Mutex<BTreeMap<String, MockEntry>>,
}

impl RuleVerifier {
    pub fn new(bad: Vec<(&'static str, u64)>) -> Self {
        Self { bad, seen: Mutex::new(BTreeMap::new()) }
    }

    fn answer(&self, sources: &[String], tb: Option<&str>, label: &str) -> SimOutcome {
        let hit = self.bad.iter().find(|(s, _)| sources.iter().any(|src| src.contains(s)));
        let outcome = match (hit, tb) {
            (_, None) => SimOutcome::syntax_only(true, String::new(), Duration::ZERO),
            (Some((_, n)), Some(_)) => fail_outcome(Some(*n)),
            (None, Some(_)) => pass_outcome(),
        };
        let digest = sources_digest(sources, tb);
        self.seen.lock().unwrap().entry(digest.clone()).or_insert(MockEntry {
            digest,
            label: Some(label.to_string()),
            outcome: outcome.clone(),
        });
        outcome
    }

    pub fn script(&self) -> MockScript {
        MockScript { default: MockDefault::Fail, entries: self.seen.lock().unwrap().values().cloned().collect() }
    }
}

fn label_of(sources: &[String], tb: Option<&str>) -> String {
    let names: Vec<String> =
        sources.iter().flat_map(|s| veribtot_core::verilog::module_names(s)).collect();
    let tb_name = tb.and_then(|t| veribtot_core::verilog::module_names(t).into_iter().next());
    match tb_name {
        Some(t) => format!("{} with {t}", names.join("+")),
        None => format!("{} (syntax)", names.join("+")),
    }
}

impl Verifier for RuleVerifier {
    fn syntax_check(&self, sources: &[String]) -> Result<SimOutcome, VerifyError> {
        Ok(self.answer(sources, None, &label_of(sources, None)))
    }

    fn run_testbench(&self, sources: &[String], tb: &str, _t: Option<Duration>) -> Result<SimOutcome, VerifyError> {
        Ok(self.answer(sources, Some(tb), &label_of(sources, Some(tb))))
    }
}

pub fn script_json(script: &MockScript) -> String {
    serde_json::to_string_pretty(script).unwrap() + "\n"
}

// ---------------------------------------------------------------- golden adder

/// Bit-level model of `adder4.v` (`golden = true`) or `adder4_buggy.v`.
pub fn adder4_model(a: u8, b: u8, golden: bool) -> u8 {
    let bit = |x: u8, i: u8| (x >> i) & 1;
    let mut c = 0u8;
    let mut sum = 0u8;
    for i in 0..4 {
        let (ai, bi) = (bit(a, i), bit(b, i));
        sum |= (ai ^ bi ^ c) << i;
        c = if i == 2 && !golden { ai & bi } else { (ai & bi) | (c & (ai ^ bi)) };
    }
    sum | (c << 4)
}

/// Mismatches the exhaustive testbench reports for one adder variant.
pub fn adder4_mismatches(golden: bool) -> u64 {
    (0u8..16)
        .flat_map(|a| (0u8..16).map(move |b| (a, b)))
        .filter(|&(a, b)| adder4_model(a, b, golden) != a + b)
        .count() as u64
}

pub struct GoldenAdder {
    pub good: PathBuf,
    pub buggy: PathBuf,
    pub testbench: PathBuf,
    pub script: PathBuf,
}

pub fn golden_adder() -> GoldenAdder {
    let dir = fixtures_root().join("golden_adder");
    GoldenAdder {
        good: dir.join("adder4.v"),
        buggy: dir.join("adder4_buggy.v"),
        testbench: dir.join("tb_adder4.v"),
        script: dir.join("mock_verifier.json"),
    }
}

pub fn golden_adder_script() -> String {
    let g = golden_adder();
    let tb = read(&g.testbench);
    let mut script = MockScript { default: MockDefault::Fail, entries: Vec::new() };
    for (path, golden, label) in [(&g.good, true, "adder4 golden"), (&g.buggy, false, "adder4 buggy")] {
        let src = vec![read(path)];
        script.add(&format!("{label} (syntax)"), &src, None, SimOutcome::syntax_only(true, String::new(), Duration::ZERO));
        let n = adder4_mismatches(golden);
        let outcome = if n == 0 { pass_outcome() } else { fail_outcome(Some(n)) };
        script.add(label, &src, Some(&tb), outcome);
    }
    script_json(&script)
}

// ---------------------------------------------------------------- pipelined adder scenario

pub struct PipeAdder {
    pub dir: PathBuf,
    pub case_dir: PathBuf,
    pub config: PathBuf,
    pub transcript: PathBuf,
    pub script: PathBuf,
}

pub fn pipe_adder() -> PipeAdder {
    let dir = fixtures_root().join("pipe_adder");
    PipeAdder {
        case_dir: dir.join("case"),
        config: dir.join("config.toml"),
        transcript: dir.join("transcript.jsonl"),
        script: dir.join("mock_verifier.json"),
        dir,
    }
}

fn pipe_adder_design(name: &str) -> String {
    read(&pipe_adder().dir.join("designs").join(name))
}

pub fn pipe_adder_replies() -> Vec<String> {
    let d = pipe_adder_design;
    let root_tb = d("root_tb.v");
    vec![
        arts(&d("root_v0.v"), &root_tb),
        js(json!({"complexity": "complex", "rationale": "pipelining, carry chaining and valid tracking interact"})),
        plan(
            &[
                ("control_logic", "Delay the input valid `i_en` to `o_en` so it lines up with the adder output."),
                ("multi_stage_adder", "Four pipeline stages, each adding 16 bits and registering the carry."),
            ],
            "separate control from datapath",
        ),
        arts(&d("control_logic.v"), &d("control_logic_tb.v")),
        arts(&d("multi_stage_adder.v"), &d("multi_stage_adder_tb.v")),
        arts(&d("integrate_v1.v"), &root_tb),
        js(json!({"complexity": "complex"})),
        js(json!({
            "action": "rebranch_here",
            "rationale": "valid and data paths disagree on latency; split into a stage controller and a reusable 16-bit adder"
        })),
        plan(
            &[
                ("controller", "Shift the input valid through four stage-enable bits `stage_en[3:0]`."),
                ("ripple_carry_adder", "Combinational 16-bit ripple-carry adder with carry in and carry out."),
            ],
            "one controller, four adder instances with pipeline registers in the top",
        ),
        arts(&d("controller.v"), &d("controller_tb.v")),
        arts(&d("ripple_carry_adder.v"), &d("ripple_carry_adder_tb.v")),
        arts(&d("integrate_v2.v"), &root_tb),
    ]
}

pub fn pipe_adder_rules() -> RuleVerifier {
    RuleVerifier::new(vec![("result <= adda + addb;", 40), ("control_logic u_ctrl", 40)])
}

/// Runs the pipelined adder scenario live, recording the transcript and verifier
/// script into `out`. Returns the run result.
pub fn generate_pipe_adder(out: &Path) -> RunResult {
    let f = pipe_adder();
    let cfg = CliConfig::load(&f.config).unwrap();
    let case = load_case_dir(&f.case_dir).unwrap();
    let scripted: Arc<dyn ChatBackend> = Arc::new(ScriptedBackend::new(pipe_adder_replies()));
    let backend = Arc::new(RecordingBackend::create(scripted, &out.join("transcript.jsonl")).unwrap());
    let verifier = pipe_adder_rules();
    let templates = PromptTemplates::builtin();
    let env = RunEnv::new(backend, &verifier, &templates);
    let result = controller::run(&case.task(), &env, &cfg.run);
    std::fs::write(out.join("mock_verifier.json"), script_json(&verifier.script())).unwrap();
    result
}

// ---------------------------------------------------------------- mini suite

pub struct MiniReplay {
    pub suite: PathBuf,
    pub dir: PathBuf,
    pub config: PathBuf,
    pub transcripts: PathBuf,
    pub script: PathBuf,
}

pub fn mini() -> MiniReplay {
    let dir = fixtures_root().join("mini_suite_replay");
    MiniReplay {
        suite: fixtures_root().join("mini_suite"),
        config: dir.join("bench.toml"),
        transcripts: dir.join("transcripts"),
        script: dir.join("mock_verifier.json"),
        dir,
    }
}

pub const MINI_PARADIGMS: [Paradigm; 2] = [Paradigm::IO, Paradigm::VeriBToT];
pub const MINI_TRIALS: u32 = 2;

fn mini_design(name: &str) -> String {
    read(&mini().dir.join("designs").join(name))
}

/// Trial 0 answers correctly at once; trial 1 starts from the buggy
/// variant, which IO keeps and VeriBToT repairs after its own testbench
/// catches it. The mux is solved by every trial.
pub fn mini_replies(key: &TrialKey) -> Vec<String> {
    let case = key.case_name.as_str();
    let good = mini_design(&format!("{case}.v"));
    let buggy = mini_design(&format!("{case}_buggy.v"));
    let tb = mini_design(&format!("{case}_tb.v"));
    let wrong_first = key.trial_index == 1 && case != "mux2to1";
    match (key.paradigm, wrong_first) {
        (Paradigm::IO, false) => vec![format!("Here is the module.\n\n{}", design_only(&good))],
        (Paradigm::IO, true) => vec![format!("Here is the module.\n\n{}", design_only(&buggy))],
        (_, false) => vec![arts(&good, &tb)],
        (_, true) => vec![
            arts(&buggy, &tb),
            js(json!({"complexity": "simple"})),
            arts(&good, &tb),
        ],
    }
}

pub fn mini_rules() -> RuleVerifier {
    RuleVerifier::new(vec![("sel ? a : b", 4), ("else     q <= q + 4'd1;", 7), ("^data[6:0]", 128)])
}

/// Runs the mini-suite live through the harness, recording one transcript
/// per trial under `out/transcripts` and the verifier script beside it.
pub fn generate_mini(out: &Path) -> Vec<harness::TrialRecord> {
    let m = mini();
    let cfg = CliConfig::load(&m.config).unwrap();
    let suite = load_suite(&m.suite).unwrap();
    let root = out.join("transcripts");
    let factory = move |key: &TrialKey| -> Result<Arc<dyn ChatBackend>, LlmError> {
        let scripted: Arc<dyn ChatBackend> = Arc::new(ScriptedBackend::new(mini_replies(key)));
        Ok(Arc::new(RecordingBackend::create(scripted, &transcript_path(&root, key))?))
    };
    let verifier = mini_rules();
    let templates = PromptTemplates::builtin();
    let env = SuiteEnv { factory: &factory, verifier: &verifier, templates: &templates };
    let opts = SuiteOptions { n_trials: MINI_TRIALS, ..SuiteOptions::default() };
    let records = harness::run_suite(&suite, &MINI_PARADIGMS, &cfg.run, &opts, &env).unwrap();
    std::fs::write(out.join("mock_verifier.json"), script_json(&verifier.script())).unwrap();
    records
}

/// Relative paths of every file below `dir`, sorted.
pub fn files_under(dir: &Path) -> Vec<PathBuf> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.push(p.strip_prefix(base).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    if dir.is_dir() {
        walk(dir, dir, &mut out);
    }
    out.sort();
    out
}
