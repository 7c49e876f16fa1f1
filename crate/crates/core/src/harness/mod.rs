//! Benchmark harness: suites, multi-trial execution, pass@k and token
//! metrics, and report emission.

mod metrics;
mod records;
mod report;
mod runner;
mod suite;

pub use metrics::{pass_at_k, PassAtKError};
pub use records::{
    canonical_jsonl, read_records, to_jsonl, RecordSink, RecordsError, TrialKey, TrialRecord,
    RECORD_SCHEMA_VERSION,
};
pub use report::{
    emit_report, format_thousands, hard_cases, summarize, CaseSummary, ParadigmSummary,
    ReportFormat, SummaryTable,
};
pub use runner::{
    run_suite, transcript_path, BackendFactory, HarnessError, RecordDir, ReplayDir, Shared,
    SuiteEnv, SuiteOptions,
};
pub use suite::{load_case_dir, load_suite, write_suite, BenchCase, SuiteFormatError, DEFAULT_CASE_TIMEOUT_SECS};
