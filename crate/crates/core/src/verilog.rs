//! Lightweight lexical scans over Verilog source.
//!
//! Nothing here elaborates or parses Verilog properly. The scans only find
//! module headers, module blocks and instantiations, which is all the
//! operators need to police LLM output.

use std::sync::LazyLock;

use regex::Regex;

static IDENT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[A-Za-z_][A-Za-z0-9_$]*$").expect("valid regex"));

static MODULE_HEADER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?m)^[ \t]*(?:macro)?module\s+([A-Za-z_][A-Za-z0-9_$]*)").expect("valid regex")
});

static ENDMODULE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\bendmodule\b").expect("valid regex"));

const KEYWORDS: &[&str] = &[
    "always", "and", "assign", "begin", "buf", "case", "casex", "casez", "default", "else",
    "end", "endcase", "endfunction", "endmodule", "endtask", "for", "forever", "function",
    "if", "initial", "inout", "input", "integer", "localparam", "module", "nand", "negedge",
    "nor", "not", "or", "output", "parameter", "posedge", "reg", "repeat", "task", "while",
    "wire", "xor", "xnor", "logic", "generate", "endgenerate", "genvar",
];

/// True for a plain (non-escaped) Verilog identifier that is not a keyword.
pub fn is_identifier(s: &str) -> bool {
    IDENT.is_match(s) && !KEYWORDS.contains(&s)
}

/// Replaces `//` and `/* */` comments with spaces, preserving byte offsets
/// and newlines so that positions in the result map back onto the input.
pub fn blank_comments(src: &str) -> String {
    let bytes = src.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    let mut in_string = false;
    while i < bytes.len() {
        let b = bytes[i];
        if in_string {
            out.push(b);
            if b == b'\\' && i + 1 < bytes.len() {
                out.push(bytes[i + 1]);
                i += 2;
                continue;
            }
            if b == b'"' {
                in_string = false;
            }
            i += 1;
        } else if b == b'"' {
            in_string = true;
            out.push(b);
            i += 1;
        } else if b == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                out.push(b' ');
                i += 1;
            }
        } else if b == b'/' && bytes.get(i + 1) == Some(&b'*') {
            out.extend_from_slice(b"  ");
            i += 2;
            while i < bytes.len() && !(bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/')) {
                out.push(if bytes[i] == b'\n' { b'\n' } else { b' ' });
                i += 1;
            }
            if i < bytes.len() {
                out.extend_from_slice(b"  ");
                i += 2;
            }
        } else {
            out.push(b);
            i += 1;
        }
    }
    // Only ASCII bytes were substituted, and whole multi-byte sequences are
    // either copied verbatim or blanked byte-for-byte inside comments.
    String::from_utf8(out).unwrap_or_else(|e| String::from_utf8_lossy(e.as_bytes()).into_owned())
}

/// Names of all modules declared in `src`, in source order.
pub fn module_names(src: &str) -> Vec<String> {
    let clean = blank_comments(src);
    MODULE_HEADER
        .captures_iter(&clean)
        .map(|c| c[1].to_string())
        .collect()
}

/// One `module ... endmodule` span in a source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleBlock {
    pub name: String,
    /// Byte range into the original source, `endmodule` included.
    pub start: usize,
    pub end: usize,
}

/// Locates every module block. A header with no matching `endmodule` runs
/// to the end of the text.
pub fn module_blocks(src: &str) -> Vec<ModuleBlock> {
    let clean = blank_comments(src);
    let mut blocks = Vec::new();
    for cap in MODULE_HEADER.captures_iter(&clean) {
        let whole = cap.get(0).expect("group 0");
        let name = cap[1].to_string();
        let start = clean[..whole.start()]
            .rfind('\n')
            .map(|p| p + 1)
            .unwrap_or(0);
        let end = ENDMODULE
            .find_at(&clean, whole.end())
            .map(|m| m.end())
            .unwrap_or(clean.len());
        blocks.push(ModuleBlock { name, start, end });
    }
    blocks
}

/// True when `src` appears to instantiate a module called `name`
/// (`name [#(...)] inst (`), ignoring the module's own declaration.
pub fn instantiates(src: &str, name: &str) -> bool {
    let clean = blank_comments(src);
    let pattern = format!(
        r"(?s)(^|[^A-Za-z0-9_$])({})\s*(#\s*\(.*?\)\s*)?[A-Za-z_][A-Za-z0-9_$]*\s*(\[[^\]]*\]\s*)?\(",
        regex::escape(name)
    );
    let re = match Regex::new(&pattern) {
        Ok(re) => re,
        Err(_) => return false,
    };
    let found = re.captures_iter(&clean).any(|c| {
        let at = c.get(2).expect("group 2").start();
        let before = clean[..at].trim_end();
        !before.ends_with("module")
    });
    found
}
