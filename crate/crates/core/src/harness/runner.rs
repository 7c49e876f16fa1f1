use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::records::{RecordSink, RecordsError, TrialKey, TrialRecord};
use super::suite::BenchCase;
use crate::controller::{self, Paradigm, RunConfig, RunEnv, RunResult};
use crate::llm::{ChatBackend, LlmError, RecordingBackend, ReplayBackend};
use crate::operators::PromptTemplates;
use crate::verify::Verifier;

/// Supplies the chat backend for one trial.
pub trait BackendFactory: Send + Sync {
    fn backend(&self, key: &TrialKey) -> Result<Arc<dyn ChatBackend>, LlmError>;
}

impl<F> BackendFactory for F
where
    F: Fn(&TrialKey) -> Result<Arc<dyn ChatBackend>, LlmError> + Send + Sync,
{
    fn backend(&self, key: &TrialKey) -> Result<Arc<dyn ChatBackend>, LlmError> {
        self(key)
    }
}

/// `<root>/<case>/<paradigm>/trial_<i>.jsonl`
pub fn transcript_path(root: &Path, key: &TrialKey) -> PathBuf {
    root.join(&key.case_name)
        .join(key.paradigm.slug())
        .join(format!("trial_{}.jsonl", key.trial_index))
}

/// One replay transcript per trial, laid out by [`transcript_path`].
pub struct ReplayDir {
    pub root: PathBuf,
    pub strict: bool,
}

impl BackendFactory for ReplayDir {
    fn backend(&self, key: &TrialKey) -> Result<Arc<dyn ChatBackend>, LlmError> {
        let b = ReplayBackend::from_file(&transcript_path(&self.root, key))?.strict(self.strict);
        Ok(Arc::new(b))
    }
}

/// Wraps a live backend and records each trial to its own transcript.
pub struct RecordDir {
    pub root: PathBuf,
    pub inner: Arc<dyn ChatBackend>,
}

impl BackendFactory for RecordDir {
    fn backend(&self, key: &TrialKey) -> Result<Arc<dyn ChatBackend>, LlmError> {
        let b = RecordingBackend::create(self.inner.clone(), &transcript_path(&self.root, key))?;
        Ok(Arc::new(b))
    }
}

/// The same backend for every trial.
pub struct Shared(pub Arc<dyn ChatBackend>);

impl BackendFactory for Shared {
    fn backend(&self, _key: &TrialKey) -> Result<Arc<dyn ChatBackend>, LlmError> {
        Ok(self.0.clone())
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub n_trials: u32,
    pub parallelism: usize,
    /// JSONL sink; trials already present are skipped.
    pub records_path: Option<PathBuf>,
    /// Directory receiving one tree snapshot per tree-paradigm trial.
    pub tree_dir: Option<PathBuf>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { n_trials: 5, parallelism: 1, records_path: None, tree_dir: None }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("nothing to run: {0}")]
    Empty(String),
    #[error(transparent)]
    Records(#[from] RecordsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub struct SuiteEnv<'a> {
    pub factory: &'a dyn BackendFactory,
    pub verifier: &'a dyn Verifier,
    pub templates: &'a PromptTemplates,
}

fn run_trial(case: &BenchCase, key: &TrialKey, env: &SuiteEnv<'_>, cfg: &RunConfig) -> Result<RunResult, String> {
    let backend = env.factory.backend(key).map_err(|e| format!("backend: {e}"))?;
    let cfg = RunConfig {
        paradigm: key.paradigm,
        seed: cfg.seed.map(|s| s.wrapping_add(u64::from(key.trial_index))),
        ..cfg.clone()
    };
    let run_env = RunEnv::new(backend, env.verifier, env.templates);
    Ok(controller::run(&case.task(), &run_env, &cfg))
}

fn dump_tree(dir: &Path, key: &TrialKey, r: &RunResult) -> Result<(), HarnessError> {
    let Some(snap) = &r.tree_snapshot else { return Ok(()) };
    let path = transcript_path(dir, key).with_extension("tree.json");
    let io_err = |source| HarnessError::Io { path: path.clone(), source };
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(io_err)?;
    }
    let text = serde_json::to_string_pretty(snap).expect("snapshots serialize");
    fs::write(&path, text + "\n").map_err(io_err)
}

/// Runs `n_trials` of every paradigm on every case. Per-trial failures
/// become records; only sink and IO problems are errors. Records come back
/// ordered by case, then paradigm, then trial, whatever the parallelism.
pub fn run_suite(
    suite: &[BenchCase],
    paradigms: &[Paradigm],
    cfg: &RunConfig,
    opts: &SuiteOptions,
    env: &SuiteEnv<'_>,
) -> Result<Vec<TrialRecord>, HarnessError> {
    if suite.is_empty() {
        return Err(HarnessError::Empty("suite has no cases".into()));
    }
    if paradigms.is_empty() || opts.n_trials == 0 {
        return Err(HarnessError::Empty("need at least one paradigm and one trial".into()));
    }
    let sink = opts.records_path.as_deref().map(RecordSink::open).transpose()?;

    let mut jobs = Vec::new();
    for case in suite {
        for &paradigm in paradigms {
            for trial_index in 0..opts.n_trials {
                jobs.push((case, TrialKey { case_name: case.name.clone(), paradigm, trial_index }));
            }
        }
    }
    let order: HashMap<TrialKey, usize> = jobs.iter().enumerate().map(|(i, (_, k))| (k.clone(), i)).collect();
    let pending: Vec<usize> = (0..jobs.len())
        .filter(|i| !sink.as_ref().is_some_and(|s| s.is_done(&jobs[*i].1)))
        .collect();

    let results: Mutex<Vec<Option<TrialRecord>>> = Mutex::new(vec![None; jobs.len()]);
    let first_error: Mutex<Option<HarnessError>> = Mutex::new(None);
    let next = AtomicUsize::new(0);
    let workers = opts.parallelism.clamp(1, pending.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let slot = next.fetch_add(1, Ordering::SeqCst);
                let Some(&job) = pending.get(slot) else { break };
                let (case, key) = &jobs[job];
                let record = match run_trial(case, key, env, cfg) {
                    Ok(r) => {
                        if let Some(dir) = &opts.tree_dir {
                            if let Err(e) = dump_tree(dir, key, &r) {
                                first_error.lock().expect("poisoned").get_or_insert(e);
                            }
                        }
                        TrialRecord::from_result(key, &r)
                    }
                    Err(msg) => TrialRecord::failed(key, msg),
                };
                tracing::info!(
                    case = %key.case_name,
                    paradigm = %key.paradigm,
                    trial = key.trial_index,
                    functional_ok = record.functional_ok,
                    "trial finished"
                );
                if let Some(s) = &sink {
                    if let Err(e) = s.append(&record) {
                        first_error.lock().expect("poisoned").get_or_insert(e.into());
                    }
                }
                results.lock().expect("poisoned")[job] = Some(record);
            });
        }
    });
    if let Some(e) = first_error.into_inner().expect("poisoned") {
        return Err(e);
    }

    let mut slots = results.into_inner().expect("poisoned");
    if let Some(s) = &sink {
        for r in s.existing() {
            if let Some(&i) = order.get(&r.key()) {
                slots[i].get_or_insert_with(|| r.clone());
            }
        }
    }
    let records: Vec<TrialRecord> = slots.into_iter().flatten().collect();
    if let Some(s) = &sink {
        // Keep records from earlier runs that fall outside this invocation.
        let extra: Vec<TrialRecord> =
            s.existing().iter().filter(|r| !order.contains_key(&r.key())).cloned().collect();
        let mut all = extra;
        all.extend(records.iter().cloned());
        s.rewrite(&all)?;
    }
    Ok(records)
}
