//! Response grammar: one fenced ```json block for structured fields and
//! fenced blocks whose info string starts with `verilog` for sources.

use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fence {
    /// Full info string after the opening backticks, trimmed.
    pub info: String,
    pub body: String,
}

impl Fence {
    fn lang(&self) -> &str {
        self.info.split_whitespace().next().unwrap_or("")
    }

    /// Second word of the info string, e.g. `design` in ```` ```verilog design ````.
    pub fn role(&self) -> Option<&str> {
        self.info.split_whitespace().nth(1)
    }
}

/// All fenced blocks in order of appearance. An unterminated fence runs to
/// the end of the text.
pub fn fenced_blocks(text: &str) -> Vec<Fence> {
    let mut out = Vec::new();
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let trimmed = line.trim_start();
        let Some(rest) = trimmed.strip_prefix("```") else {
            continue;
        };
        let info = rest.trim().to_string();
        let mut body = Vec::new();
        for inner in lines.by_ref() {
            if inner.trim_start().starts_with("```") && inner.trim() == "```" {
                break;
            }
            body.push(inner);
        }
        let mut body = body.join("\n");
        if !body.is_empty() {
            body.push('\n');
        }
        out.push(Fence { info, body });
    }
    out
}

/// The single structured block: a ```json fence, or failing that a bare
/// fence whose body is a JSON object.
pub fn json_block(text: &str) -> Result<Value, String> {
    let fences = fenced_blocks(text);
    let json: Vec<&Fence> = fences
        .iter()
        .filter(|f| f.lang().eq_ignore_ascii_case("json"))
        .collect();
    let candidate = match json.len() {
        1 => json[0],
        0 => fences
            .iter()
            .find(|f| f.lang().is_empty() && f.body.trim_start().starts_with('{'))
            .ok_or_else(|| "no ```json block found".to_string())?,
        n => return Err(format!("expected one ```json block, found {n}")),
    };
    serde_json::from_str(candidate.body.trim()).map_err(|e| format!("invalid JSON: {e}"))
}

fn is_verilog(f: &Fence) -> bool {
    matches!(
        f.lang().to_ascii_lowercase().as_str(),
        "verilog" | "systemverilog" | "v" | "sv"
    )
}

pub fn verilog_blocks(text: &str) -> Vec<Fence> {
    fenced_blocks(text).into_iter().filter(is_verilog).collect()
}

/// Design and testbench sources from a response. Role labels take priority;
/// unlabelled blocks fill the design slot first, then the testbench slot.
pub fn design_and_testbench(text: &str) -> (Option<String>, Option<String>) {
    let blocks = verilog_blocks(text);
    let mut design = None;
    let mut testbench = None;
    for b in &blocks {
        match b.role().map(|r| r.to_ascii_lowercase()) {
            Some(r) if r.starts_with("design") || r == "rtl" => {
                design.get_or_insert_with(|| b.body.clone());
            }
            Some(r) if r.starts_with("testbench") || r == "tb" => {
                testbench.get_or_insert_with(|| b.body.clone());
            }
            _ => {}
        }
    }
    for b in blocks.iter().filter(|b| b.role().is_none()) {
        if design.is_none() {
            design = Some(b.body.clone());
        } else if testbench.is_none() {
            testbench = Some(b.body.clone());
        }
    }
    let keep = |s: Option<String>| s.filter(|s| !s.trim().is_empty());
    (keep(design), keep(testbench))
}

/// Renders a JSON value as the fenced block operators expect.
pub fn fence_json(value: &Value) -> String {
    format!(
        "```json\n{}\n```\n",
        serde_json::to_string_pretty(value).expect("JSON values serialize")
    )
}

pub fn fence_verilog(role: &str, body: &str) -> String {
    let body = body.strip_suffix('\n').unwrap_or(body);
    format!("```verilog {role}\n{body}\n```\n")
}
