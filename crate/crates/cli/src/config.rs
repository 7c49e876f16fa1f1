//! TOML configuration for the command-line tool.
//!
//! ```toml
//! [run]
//! max_depth = 3
//! eval_mode = "Hybrid"
//!
//! [http]
//! endpoint = "https://api.openai.com/v1"
//! model = "gpt-4"
//! api_key_env = "OPENAI_API_KEY"
//!
//! [verifier]
//! kind = "toolchain"
//!
//! [verifier.toolchain]
//! compile_cmd = "iverilog -g2012 -o {out} {inputs}"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;
use veribtot_core::controller::RunConfig;
use veribtot_core::llm::HttpConfig;
use veribtot_core::verify::{MockScript, MockVerifier, ToolchainConfig, ToolchainVerifier, Verifier};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifierKind {
    #[default]
    Toolchain,
    Mock,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifierConfig {
    pub kind: VerifierKind,
    /// Script for the mock verifier.
    pub mock_script: Option<PathBuf>,
    pub toolchain: ToolchainConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub run: RunConfig,
    pub http: HttpConfig,
    pub verifier: VerifierConfig,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: CliConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = &cfg.verifier.mock_script {
            if p.is_relative() {
                cfg.verifier.mock_script = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn verifier(&self) -> Result<Box<dyn Verifier>> {
        match self.verifier.kind {
            VerifierKind::Toolchain => Ok(Box::new(ToolchainVerifier::new(self.verifier.toolchain.clone())?)),
            VerifierKind::Mock => {
                let script = match &self.verifier.mock_script {
                    Some(p) => MockScript::load(p)?,
                    None => MockScript::default(),
                };
                Ok(Box::new(MockVerifier::from_script(script)?))
            }
        }
    }
}
