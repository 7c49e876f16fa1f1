//! Prompt templates with `{{placeholder}}` substitution.
//!
//! Defaults are compiled in from `prompts/`; a directory with files of the
//! same names overrides any subset of them at run time.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;

use super::OperatorError;

macro_rules! builtin {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../prompts/", $name, ".txt")))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin!(
    "system",
    "artifact_rules_tb",
    "artifact_rules_design_only",
    "materialize",
    "branch_plan",
    "judge",
    "complexity",
    "rethink_leaf",
    "rethink_integrate",
    "backtrack",
    "format_reminder",
    "polish",
    "baseline_io",
    "baseline_cot",
    "baseline_vote",
    "baseline_tot_expand",
    "baseline_tot_score",
);

const BUILTIN_VERSION: &str = include_str!("../../prompts/VERSION");

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").expect("valid regex"));

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    version: String,
    templates: BTreeMap<String, String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        Self {
            version: BUILTIN_VERSION.trim().to_string(),
            templates: BUILTIN
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Builtins overlaid with every `<name>.txt` found in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, OperatorError> {
        let mut t = Self::builtin();
        let entries = std::fs::read_dir(dir)
            .map_err(|e| OperatorError::Template(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry
                .map_err(|e| OperatorError::Template(e.to_string()))?
                .path();
            let text = |p: &Path| {
                std::fs::read_to_string(p)
                    .map_err(|e| OperatorError::Template(format!("{}: {e}", p.display())))
            };
            if path.file_name().is_some_and(|n| n == "VERSION") {
                t.version = text(&path)?.trim().to_string();
            } else if path.extension().is_some_and(|e| e == "txt") {
                let name = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| OperatorError::Template(format!("bad name {}", path.display())))?
                    .to_string();
                t.templates.insert(name, text(&path)?);
            }
        }
        Ok(t)
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn raw(&self, name: &str) -> Option<&str> {
        self.templates.get(name).map(String::as_str)
    }

    /// Placeholders used by a template, in first-use order.
    pub fn placeholders(&self, name: &str) -> Vec<String> {
        let mut seen = Vec::new();
        if let Some(t) = self.templates.get(name) {
            for c in PLACEHOLDER.captures_iter(t) {
                if !seen.iter().any(|s| s == &c[1]) {
                    seen.push(c[1].to_string());
                }
            }
        }
        seen
    }

    /// Substitutes every placeholder. A placeholder without a value is an
    /// error; unused values are ignored. Substituted text is not rescanned.
    pub fn render(&self, name: &str, values: &[(&str, &str)]) -> Result<String, OperatorError> {
        let template = self
            .templates
            .get(name)
            .ok_or_else(|| OperatorError::Template(format!("no template named `{name}`")))?;
        let mut missing = None;
        let out = PLACEHOLDER.replace_all(template, |c: &regex::Captures| {
            match values.iter().find(|(k, _)| *k == &c[1]) {
                Some((_, v)) => v.to_string(),
                None => {
                    missing.get_or_insert_with(|| c[1].to_string());
                    String::new()
                }
            }
        });
        match missing {
            Some(m) => Err(OperatorError::Template(format!(
                "template `{name}` needs a value for `{m}`"
            ))),
            None => Ok(out.into_owned()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_present() {
        let t = PromptTemplates::builtin();
        assert_eq!(t.version(), "1");
        for name in ["system", "branch_plan", "materialize", "judge", "backtrack", "baseline_io"] {
            assert!(t.raw(name).is_some(), "{name}");
        }
        assert_eq!(
            t.placeholders("artifact_rules_tb"),
            vec!["module_name".to_string()]
        );
    }

    #[test]
    fn render_substitutes_without_rescanning() {
        let t = PromptTemplates::builtin();
        let out = t
            .render("format_reminder", &[("problem", "saw {{problem}} literally")])
            .unwrap();
        assert!(out.contains("saw {{problem}} literally"));
    }

    #[test]
    fn render_reports_missing_values() {
        let t = PromptTemplates::builtin();
        let err = t.render("format_reminder", &[]).unwrap_err();
        assert!(err.to_string().contains("problem"));
        assert!(t.render("nope", &[]).is_err());
    }

    #[test]
    fn directory_overrides_subset() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("baseline_io.txt"), "Just write {{top_module}}.").unwrap();
        std::fs::write(dir.path().join("VERSION"), "2-local\n").unwrap();
        let t = PromptTemplates::load_dir(dir.path()).unwrap();
        assert_eq!(t.version(), "2-local");
        assert_eq!(
            t.render("baseline_io", &[("top_module", "m"), ("task", "ignored")]).unwrap(),
            "Just write m."
        );
        assert_eq!(t.raw("system"), PromptTemplates::builtin().raw("system"));
    }
}
