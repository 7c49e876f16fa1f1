//! Command-line front end: single runs, suite benchmarks, reports and
//! standalone verification.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use veribtot_core::controller::{self, Paradigm, RunEnv};
use veribtot_core::harness::{
    self, emit_report, hard_cases, load_case_dir, load_suite, read_records, summarize, BackendFactory, RecordDir,
    ReplayDir, ReportFormat, Shared, SuiteEnv, SuiteOptions,
};
use veribtot_core::llm::{ChatBackend, HttpBackend, RecordingBackend, ReplayBackend};
use veribtot_core::operators::PromptTemplates;
use veribtot_core::verify::{SimOutcome, VerifyError};

use config::CliConfig;

#[derive(Debug, Parser)]
#[command(name = "veribtot", version, about = "Backtracking tree-of-thought Verilog generation")]
pub struct Cli {
    /// Log verbosity; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one paradigm on one case.
    Run(RunArgs),
    /// Run several paradigms over a suite, several trials each.
    Bench(BenchArgs),
    /// Summarize a records file.
    Report(ReportArgs),
    /// Simulate a design against a testbench.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Http,
    Replay,
    Record,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML file with `[run]`, `[http]` and `[verifier]` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "http")]
    pub backend: BackendKind,
    /// Transcript file for `run`, transcript directory for `bench`.
    #[arg(long)]
    pub replay_file: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep simulator working directories.
    #[arg(long)]
    pub keep_artifacts: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Case directory holding spec.md, testbench.v and meta.json.
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long, default_value = "VeriBToT")]
    pub paradigm: Paradigm,
    #[command(flatten)]
    pub common: Common,
    /// Result JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the final tree snapshot here.
    #[arg(long)]
    pub dump_tree: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub suite: PathBuf,
    /// Comma-separated paradigm list.
    #[arg(long = "paradigms", alias = "paradigm", value_delimiter = ',', default_value = "IO,VeriBToT")]
    pub paradigms: Vec<Paradigm>,
    #[arg(long, default_value_t = 5)]
    pub trials: u32,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
    #[command(flatten)]
    pub common: Common,
    /// Records file (JSON Lines); completed trials already in it are skipped.
    #[arg(long, default_value = "records.jsonl")]
    pub out: PathBuf,
    /// Directory receiving one tree snapshot per tree-paradigm trial.
    #[arg(long)]
    pub dump_tree: Option<PathBuf>,
    /// Restrict the suite to cases that a paradigm never solved in this
    /// earlier records file.
    #[arg(long)]
    pub hard_from: Option<PathBuf>,
    /// Paradigm used with `--hard-from`.
    #[arg(long, default_value = "IO")]
    pub hard_paradigm: Paradigm,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "markdown")]
    pub format: ReportFormat,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// List the cases this paradigm never solved instead of a table.
    #[arg(long)]
    pub hard_cases: Option<Paradigm>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Design source; repeat for several files.
    #[arg(long, required = true)]
    pub design: Vec<PathBuf>,
    #[arg(long)]
    pub testbench: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use the mock verifier with this script.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Simulation timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub keep_artifacts: bool,
}

pub const EXIT_FAIL: u8 = 1;
pub const EXIT_ERROR: u8 = 2;

/// Parses `args` and runs the command. Usage errors print clap's message.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { 0 });
        }
    };
    init_logging(cli.verbose);
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

pub fn execute(command: Command) -> Result<u8> {
    match command {
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Report(a) => cmd_report(a),
        Command::Verify(a) => cmd_verify(a),
    }
}

fn load_config(common: &Common) -> Result<CliConfig> {
    let mut cfg = CliConfig::load_or_default(common.config.as_deref())?;
    if common.seed.is_some() {
        cfg.run.seed = common.seed;
    }
    cfg.verifier.toolchain.keep_artifacts |= common.keep_artifacts;
    cfg.run.validate()?;
    Ok(cfg)
}

fn http_backend(cfg: &CliConfig) -> Result<Arc<dyn ChatBackend>> {
    Ok(Arc::new(HttpBackend::new(&cfg.http)?))
}

fn require_replay(common: &Common) -> Result<&Path> {
    match &common.replay_file {
        Some(p) => Ok(p),
        None => bail!("--backend {:?} needs --replay-file", common.backend),
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_run(a: RunArgs) -> Result<u8> {
    let mut cfg = load_config(&a.common)?;
    cfg.run.paradigm = a.paradigm;
    let case = load_case_dir(&a.case)?;
    let backend: Arc<dyn ChatBackend> = match a.common.backend {
        BackendKind::Http => http_backend(&cfg)?,
        BackendKind::Replay => Arc::new(ReplayBackend::from_file(require_replay(&a.common)?)?),
        BackendKind::Record => {
            Arc::new(RecordingBackend::create(http_backend(&cfg)?, require_replay(&a.common)?)?)
        }
    };
    let verifier = cfg.verifier()?;
    let templates = PromptTemplates::builtin();
    let env = RunEnv::new(backend, verifier.as_ref(), &templates);
    let result = controller::run(&case.task(), &env, &cfg.run);
    if let (Some(path), Some(snap)) = (&a.dump_tree, &result.tree_snapshot) {
        write_output(Some(path), &(serde_json::to_string_pretty(snap)? + "\n"))?;
    }
    write_output(a.out.as_deref(), &(serde_json::to_string_pretty(&result)? + "\n"))?;
    eprintln!(
        "{} {}: {:?}, functional_ok={}, llm_calls={}, tokens={}",
        case.name,
        a.paradigm,
        result.terminated_by,
        result.functional_ok,
        result.llm_calls,
        result.totals.prompt + result.totals.completion
    );
    Ok(0)
}

fn cmd_bench(a: BenchArgs) -> Result<u8> {
    let cfg = load_config(&a.common)?;
    let mut suite = load_suite(&a.suite)?;
    if let Some(prior) = &a.hard_from {
        let hard = hard_cases(&read_records(prior)?, a.hard_paradigm);
        suite.retain(|c| hard.contains(&c.name));
        if suite.is_empty() {
            bail!("no hard cases for {} in {}", a.hard_paradigm, prior.display());
        }
    }
    let factory: Box<dyn BackendFactory> = match a.common.backend {
        BackendKind::Http => Box::new(Shared(http_backend(&cfg)?)),
        BackendKind::Replay => {
            Box::new(ReplayDir { root: require_replay(&a.common)?.to_path_buf(), strict: false })
        }
        BackendKind::Record => Box::new(RecordDir {
            root: require_replay(&a.common)?.to_path_buf(),
            inner: http_backend(&cfg)?,
        }),
    };
    let verifier = cfg.verifier()?;
    let templates = PromptTemplates::builtin();
    let env = SuiteEnv { factory: factory.as_ref(), verifier: verifier.as_ref(), templates: &templates };
    let opts = SuiteOptions {
        n_trials: a.trials,
        parallelism: a.parallelism,
        records_path: Some(a.out.clone()),
        tree_dir: a.dump_tree.clone(),
    };
    let records = harness::run_suite(&suite, &a.paradigms, &cfg.run, &opts, &env)?;
    let passed = records.iter().filter(|r| r.functional_ok).count();
    eprintln!("{} trials, {passed} functional passes, records in {}", records.len(), a.out.display());
    Ok(0)
}

fn cmd_report(a: ReportArgs) -> Result<u8> {
    let records = read_records(&a.input)?;
    let text = match a.hard_cases {
        Some(p) => hard_cases(&records, p).into_iter().map(|c| c + "\n").collect(),
        None => emit_report(&summarize(&records), a.format),
    };
    write_output(a.out.as_deref(), &text)?;
    Ok(0)
}

/// One status line: `PASS`, `FAIL mismatches=<n>`, `FAIL` or `SYNTAX_ERROR`.
pub fn verdict_line(o: &SimOutcome) -> String {
    if !o.syntax_ok {
        return "SYNTAX_ERROR".into();
    }
    if o.timed_out {
        return "FAIL timeout".into();
    }
    match (o.functional_pass, o.mismatch_count) {
        (Some(true), _) => "PASS".into(),
        (Some(false), Some(n)) => format!("FAIL mismatches={n}"),
        (Some(false), None) => "FAIL".into(),
        (None, _) => "FAIL no-sentinel".into(),
    }
}

fn cmd_verify(a: VerifyArgs) -> Result<u8> {
    let mut cfg = CliConfig::load_or_default(a.config.as_deref())?;
    if let Some(script) = a.mock_script {
        cfg.verifier.kind = config::VerifierKind::Mock;
        cfg.verifier.mock_script = Some(script);
    }
    cfg.verifier.toolchain.keep_artifacts |= a.keep_artifacts;
    let read = |p: &Path| fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    let designs = a.design.iter().map(|p| read(p)).collect::<Result<Vec<_>>>()?;
    let testbench = read(&a.testbench)?;
    let verifier = cfg.verifier()?;
    let timeout = a.timeout.map(std::time::Duration::from_secs_f64);
    match verifier.run_testbench(&designs, &testbench, timeout) {
        Ok(o) => {
            println!("{}", verdict_line(&o));
            if o.passed() {
                Ok(0)
            } else {
                eprintln!("{}", o.failure_summary());
                Ok(EXIT_FAIL)
            }
        }
        Err(e @ VerifyError::ToolchainUnavailable(_)) => {
            eprintln!("error: {e}");
            Ok(EXIT_ERROR)
        }
        Err(e) => Err(e.into()),
    }
}
