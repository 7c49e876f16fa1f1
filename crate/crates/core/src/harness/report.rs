use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::pass_at_k;
use super::records::TrialRecord;
use crate::controller::Paradigm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case_name: String,
    pub paradigm: Paradigm,
    pub n_trials: u32,
    pub n_syntax_pass: u32,
    /// #pass@5 when five trials were run.
    pub n_functional_pass: u32,
    pub pass_at_1: f64,
    /// Absent when fewer than five trials were observed.
    pub pass_at_5: Option<f64>,
    pub mean_prompt_tokens: f64,
    pub mean_completion_tokens: f64,
    pub mean_tokens_thousands: f64,
    pub verdict_disagreements: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParadigmSummary {
    pub paradigm: Paradigm,
    pub n_cases: u32,
    pub mean_pass_at_1: f64,
    /// Mean over the cases that have a pass@5 value.
    pub mean_pass_at_5: Option<f64>,
    pub mean_tokens_thousands: f64,
    pub mean_prompt_thousands: f64,
    pub mean_completion_thousands: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    /// Case order of first appearance, paradigms in their canonical order.
    pub cases: Vec<CaseSummary>,
    pub paradigms: Vec<ParadigmSummary>,
    /// True when cases were run with differing trial counts.
    pub mixed_trial_counts: bool,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0u32), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / f64::from(n))
}

/// Aggregates records per (case, paradigm) and per paradigm. Pure.
pub fn summarize(records: &[TrialRecord]) -> SummaryTable {
    let mut case_order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<(usize, Paradigm), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        let idx = match case_order.iter().position(|c| *c == r.case_name) {
            Some(i) => i,
            None => {
                case_order.push(&r.case_name);
                case_order.len() - 1
            }
        };
        groups.entry((idx, r.paradigm)).or_default().push(r);
    }

    let cases: Vec<CaseSummary> = groups
        .iter()
        .map(|((idx, paradigm), rs)| {
            let n = rs.len() as u32;
            let c = rs.iter().filter(|r| r.functional_ok).count() as u32;
            let tokens = |f: fn(&TrialRecord) -> u64| rs.iter().map(|r| f(r) as f64).sum::<f64>() / f64::from(n);
            let prompt = tokens(|r| r.prompt_tokens);
            let completion = tokens(|r| r.completion_tokens);
            CaseSummary {
                case_name: case_order[*idx].to_string(),
                paradigm: *paradigm,
                n_trials: n,
                n_syntax_pass: rs.iter().filter(|r| r.syntax_ok).count() as u32,
                n_functional_pass: c,
                pass_at_1: pass_at_k(n, c, 1).expect("n >= 1"),
                pass_at_5: pass_at_k(n, c, 5).ok(),
                mean_prompt_tokens: prompt,
                mean_completion_tokens: completion,
                mean_tokens_thousands: (prompt + completion) / 1000.0,
                verdict_disagreements: rs.iter().filter(|r| r.verdict_disagreement).count() as u32,
            }
        })
        .collect();

    let mut paradigms: Vec<Paradigm> = cases.iter().map(|c| c.paradigm).collect();
    paradigms.sort();
    paradigms.dedup();
    let paradigms = paradigms
        .into_iter()
        .map(|p| {
            let rows: Vec<&CaseSummary> = cases.iter().filter(|c| c.paradigm == p).collect();
            ParadigmSummary {
                paradigm: p,
                n_cases: rows.len() as u32,
                mean_pass_at_1: mean(rows.iter().map(|r| r.pass_at_1)).unwrap_or(0.0),
                mean_pass_at_5: mean(rows.iter().filter_map(|r| r.pass_at_5)),
                mean_tokens_thousands: mean(rows.iter().map(|r| r.mean_tokens_thousands)).unwrap_or(0.0),
                mean_prompt_thousands: mean(rows.iter().map(|r| r.mean_prompt_tokens / 1000.0)).unwrap_or(0.0),
                mean_completion_thousands: mean(rows.iter().map(|r| r.mean_completion_tokens / 1000.0))
                    .unwrap_or(0.0),
            }
        })
        .collect();

    let mixed = cases.windows(2).any(|w| w[0].n_trials != w[1].n_trials);
    SummaryTable { cases, paradigms, mixed_trial_counts: mixed }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(format!("unknown report format `{other}` (json, csv, markdown)")),
        }
    }
}

/// Thousands with two decimals, the unit of the Tok. columns.
pub fn format_thousands(k: f64) -> String {
    format!("{k:.2}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

/// Renders the table. Pure: identical tables give identical text.
pub fn emit_report(table: &SummaryTable, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(table).expect("tables serialize") + "\n",
        ReportFormat::Csv => emit_csv(table),
        ReportFormat::Markdown => emit_markdown(table),
    }
}

fn emit_csv(table: &SummaryTable) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "case",
        "paradigm",
        "n_trials",
        "syn",
        "fun",
        "pass_at_1",
        "pass_at_5",
        "tok_k",
        "prompt_tokens_mean",
        "completion_tokens_mean",
        "verdict_disagreements",
    ])
    .expect("in-memory csv");
    for c in &table.cases {
        w.write_record([
            c.case_name.clone(),
            c.paradigm.label().to_string(),
            c.n_trials.to_string(),
            c.n_syntax_pass.to_string(),
            c.n_functional_pass.to_string(),
            format!("{:.6}", c.pass_at_1),
            c.pass_at_5.map_or_else(String::new, |p| format!("{p:.6}")),
            format_thousands(c.mean_tokens_thousands),
            format!("{:.1}", c.mean_prompt_tokens),
            format!("{:.1}", c.mean_completion_tokens),
            c.verdict_disagreements.to_string(),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

fn emit_markdown(table: &SummaryTable) -> String {
    let paradigms: Vec<Paradigm> = table.paradigms.iter().map(|p| p.paradigm).collect();
    let mut cases: Vec<&str> = Vec::new();
    for c in &table.cases {
        if !cases.contains(&c.case_name.as_str()) {
            cases.push(&c.case_name);
        }
    }
    let mut out = String::new();
    let n_values: Vec<u32> = table.cases.iter().map(|c| c.n_trials).collect();
    match (n_values.iter().min(), table.mixed_trial_counts) {
        (Some(n), false) => {
            let _ = writeln!(out, "Syn./Fun.: successful trials out of {n}; Tok.: mean tokens per trial, thousands.\n");
        }
        (Some(_), true) => {
            let _ = writeln!(
                out,
                "Syn./Fun.: successful trials out of n (n differs between cases, see the CSV/JSON report); Tok.: mean tokens per trial, thousands.\n"
            );
        }
        (None, _) => {}
    }

    let mut header = String::from("| Design |");
    let mut rule = String::from("|---|");
    for p in &paradigms {
        let _ = write!(header, " {0} Syn. | {0} Fun. | {0} Tok. |", p.label());
        rule.push_str("---:|---:|---:|");
    }
    let _ = writeln!(out, "{header}\n{rule}");
    for case in &cases {
        let mut row = format!("| {case} |");
        for p in &paradigms {
            match table.cases.iter().find(|c| c.case_name == *case && c.paradigm == *p) {
                Some(c) => {
                    let _ = write!(
                        row,
                        " {} | {} | {} |",
                        c.n_syntax_pass,
                        c.n_functional_pass,
                        format_thousands(c.mean_tokens_thousands)
                    );
                }
                None => row.push_str(" - | - | - |"),
            }
        }
        let _ = writeln!(out, "{row}");
    }

    let _ = writeln!(out, "\n| Paradigm | pass@1 | pass@5 | Tok. | Prompt Tok. | Completion Tok. |");
    let _ = writeln!(out, "|---|---:|---:|---:|---:|---:|");
    for p in &table.paradigms {
        let _ = writeln!(
            out,
            "| {} | {:.3} | {} | {} | {} | {} |",
            p.paradigm.label(),
            p.mean_pass_at_1,
            fmt_opt(p.mean_pass_at_5),
            format_thousands(p.mean_tokens_thousands),
            format_thousands(p.mean_prompt_thousands),
            format_thousands(p.mean_completion_thousands),
        );
    }
    out
}

/// Cases on which `paradigm` never passed functionally, e.g. the IO-hard
/// subset of an earlier run.
pub fn hard_cases(records: &[TrialRecord], paradigm: Paradigm) -> Vec<String> {
    summarize(records)
        .cases
        .into_iter()
        .filter(|c| c.paradigm == paradigm && c.n_functional_pass == 0)
        .map(|c| c.case_name)
        .collect()
}
