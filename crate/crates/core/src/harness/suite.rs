//! Benchmark suites on disk.
//!
//! ```text
//! suite/
//!   manifest.json        optional: {"cases": ["case_a", "case_b"]}
//!   case_a/
//!     spec.md            natural-language task
//!     testbench.v        oracle testbench printing the result sentinel
//!     meta.json          {"name": "case_a", "top_module": "top", "timeout_secs": 10}
//! ```
//!
//! Without a manifest every subdirectory is a case, in lexicographic order.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::DesignTask;
use crate::verilog;

pub const DEFAULT_CASE_TIMEOUT_SECS: f64 = 10.0;

#[derive(Debug, Error)]
pub enum SuiteFormatError {
    #[error("suite {path}: {detail}")]
    Suite { path: PathBuf, detail: String },
    #[error("case `{case}`: {detail}")]
    Case { case: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    pub name: String,
    pub spec: String,
    pub oracle_testbench: String,
    pub top_module: String,
    #[serde(with = "crate::tree::duration_secs")]
    pub timeout: Duration,
}

impl BenchCase {
    pub fn task(&self) -> DesignTask {
        DesignTask {
            description: self.spec.clone(),
            oracle_testbench: self.oracle_testbench.clone(),
            top_module_name: self.top_module.clone(),
            timeout: self.timeout,
        }
    }

    fn validate(&self) -> Result<(), SuiteFormatError> {
        let bad = |detail: &str| SuiteFormatError::Case { case: self.name.clone(), detail: detail.into() };
        if self.name.trim().is_empty() {
            return Err(bad("empty name"));
        }
        if self.spec.trim().is_empty() {
            return Err(bad("empty spec.md"));
        }
        if self.oracle_testbench.trim().is_empty() {
            return Err(bad("empty testbench.v"));
        }
        if !verilog::is_identifier(&self.top_module) {
            return Err(bad("top_module is not a Verilog identifier"));
        }
        if self.timeout.is_zero() {
            return Err(bad("timeout must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    name: Option<String>,
    top_module: String,
    timeout_secs: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Manifest {
    Object { cases: Vec<String> },
    List(Vec<String>),
}

fn load_case(dir: &Path, dir_name: &str) -> Result<BenchCase, SuiteFormatError> {
    let err = |detail: String| SuiteFormatError::Case { case: dir_name.to_string(), detail };
    let read = |file: &str| {
        let p = dir.join(file);
        fs::read_to_string(&p).map_err(|e| err(format!("cannot read {file}: {e}")))
    };
    let meta: Meta = serde_json::from_str(&read("meta.json")?).map_err(|e| err(format!("meta.json: {e}")))?;
    let timeout_secs = meta.timeout_secs.unwrap_or(DEFAULT_CASE_TIMEOUT_SECS);
    if !(timeout_secs.is_finite() && timeout_secs > 0.0) {
        return Err(err("meta.json: timeout_secs must be positive".into()));
    }
    let case = BenchCase {
        name: meta.name.unwrap_or_else(|| dir_name.to_string()),
        spec: read("spec.md")?,
        oracle_testbench: read("testbench.v")?,
        top_module: meta.top_module,
        timeout: Duration::from_secs_f64(timeout_secs),
    };
    case.validate()?;
    Ok(case)
}

/// Loads one case directory.
pub fn load_case_dir(dir: &Path) -> Result<BenchCase, SuiteFormatError> {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string());
    load_case(dir, &name)
}

/// Loads and validates every case of the suite at `path`.
pub fn load_suite(path: &Path) -> Result<Vec<BenchCase>, SuiteFormatError> {
    let suite_err = |detail: String| SuiteFormatError::Suite { path: path.to_path_buf(), detail };
    let manifest = path.join("manifest.json");
    let dirs: Vec<String> = if manifest.is_file() {
        let text = fs::read_to_string(&manifest).map_err(|e| suite_err(format!("manifest.json: {e}")))?;
        match serde_json::from_str(&text).map_err(|e| suite_err(format!("manifest.json: {e}")))? {
            Manifest::Object { cases } | Manifest::List(cases) => cases,
        }
    } else {
        let entries = fs::read_dir(path).map_err(|e| suite_err(e.to_string()))?;
        let mut names = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| suite_err(e.to_string()))?;
            if entry.path().is_dir() {
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        names.sort();
        names
    };
    if dirs.is_empty() {
        return Err(suite_err("no cases found".into()));
    }
    let mut seen = HashSet::new();
    let mut cases = Vec::with_capacity(dirs.len());
    for d in &dirs {
        let case = load_case(&path.join(d), d)?;
        if !seen.insert(case.name.clone()) {
            return Err(SuiteFormatError::Case { case: case.name, detail: "duplicate case name".into() });
        }
        cases.push(case);
    }
    Ok(cases)
}

/// Writes `cases` in the layout [`load_suite`] reads, with a manifest
/// preserving their order.
pub fn write_suite(path: &Path, cases: &[BenchCase]) -> std::io::Result<()> {
    fs::create_dir_all(path)?;
    for c in cases {
        let dir = path.join(&c.name);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("spec.md"), &c.spec)?;
        fs::write(dir.join("testbench.v"), &c.oracle_testbench)?;
        let meta = serde_json::json!({
            "name": c.name,
            "top_module": c.top_module,
            "timeout_secs": c.timeout.as_secs_f64(),
        });
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    }
    let names: Vec<&str> = cases.iter().map(|c| c.name.as_str()).collect();
    let manifest = serde_json::to_string_pretty(&serde_json::json!({ "cases": names }))?;
    fs::write(path.join("manifest.json"), manifest + "\n")
}
