//! Versioned prompt templates with `{{name}}` placeholders.
//!
//! Dynamic content sits inside `<<<NAME` / `NAME>>>` delimited sections so
//! any consumer, including the mock backend, can recover it with [`section`].

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::GatewayError;
use crate::text::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Template {
    Coder,
    CoderRepair,
    Relation,
    Subthemes,
    Themes,
    ThemeRepair,
    Reviewer,
    Deductive,
    JudgeFitness,
    JudgeCoverage,
}

impl Template {
    pub const ALL: [Template; 10] = [
        Template::Coder,
        Template::CoderRepair,
        Template::Relation,
        Template::Subthemes,
        Template::Themes,
        Template::ThemeRepair,
        Template::Reviewer,
        Template::Deductive,
        Template::JudgeFitness,
        Template::JudgeCoverage,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Template::Coder => "coder.v1.txt",
            Template::CoderRepair => "coder_repair.v1.txt",
            Template::Relation => "relation.v1.txt",
            Template::Subthemes => "subthemes.v1.txt",
            Template::Themes => "themes.v1.txt",
            Template::ThemeRepair => "theme_repair.v1.txt",
            Template::Reviewer => "reviewer.v1.txt",
            Template::Deductive => "deductive.v1.txt",
            Template::JudgeFitness => "judge_fitness.v1.txt",
            Template::JudgeCoverage => "judge_coverage.v1.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            Template::Coder => include_str!("../../prompts/coder.v1.txt"),
            Template::CoderRepair => include_str!("../../prompts/coder_repair.v1.txt"),
            Template::Relation => include_str!("../../prompts/relation.v1.txt"),
            Template::Subthemes => include_str!("../../prompts/subthemes.v1.txt"),
            Template::Themes => include_str!("../../prompts/themes.v1.txt"),
            Template::ThemeRepair => include_str!("../../prompts/theme_repair.v1.txt"),
            Template::Reviewer => include_str!("../../prompts/reviewer.v1.txt"),
            Template::Deductive => include_str!("../../prompts/deductive.v1.txt"),
            Template::JudgeFitness => include_str!("../../prompts/judge_fitness.v1.txt"),
            Template::JudgeCoverage => include_str!("../../prompts/judge_coverage.v1.txt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    texts: BTreeMap<Template, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        Self { texts: Template::ALL.iter().map(|&t| (t, t.builtin().to_string())).collect() }
    }

    /// Built-in set with any same-named files in `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::builtin();
        for t in Template::ALL {
            let p = dir.join(t.file_name());
            if p.is_file() {
                set.texts.insert(t, std::fs::read_to_string(p)?);
            }
        }
        Ok(set)
    }

    pub fn text(&self, t: Template) -> &str {
        &self.texts[&t]
    }

    /// File name to sha256 of the template text.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.texts.iter().map(|(t, s)| (t.file_name().to_string(), sha256_hex(s))).collect()
    }

    pub fn render(&self, t: Template, vars: &[(&str, &str)]) -> Result<String, GatewayError> {
        render(self.text(t), vars)
    }
}

/// Single-pass substitution, so placeholder-like text inside values is left alone.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String, GatewayError> {
    let mut out = String::with_capacity(template.len() + vars.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        let Some(close) = rest[open + 2..].find("}}") else { break };
        let name = &rest[open + 2..open + 2 + close];
        out.push_str(&rest[..open]);
        if name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && !name.is_empty() {
            let value = vars
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| GatewayError::InvalidRequest(format!("template variable `{name}` not supplied")))?;
            out.push_str(value);
        } else {
            out.push_str(&rest[open..open + 4 + close]);
        }
        rest = &rest[open + 4 + close..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Body of the `<<<NAME ...` / `NAME>>>` section, and the text after the
/// opening marker on its line (e.g. a chunk id).
pub fn section<'a>(prompt: &'a str, name: &str) -> Option<(&'a str, &'a str)> {
    let open = format!("<<<{name}");
    let close = format!("\n{name}>>>");
    let start = prompt.find(&open)? + open.len();
    let line_end = start + prompt[start..].find('\n')?;
    let header = prompt[start..line_end].trim();
    let body_start = line_end + 1;
    let end = body_start + prompt[body_start..].find(&close).unwrap_or(prompt.len() - body_start);
    Some((header, &prompt[body_start..end.max(body_start)]))
}
