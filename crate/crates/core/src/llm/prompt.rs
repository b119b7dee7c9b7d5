//! Prompt templates with `{placeholder}` substitution.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ChatMessage, ChatRequest};
use crate::ledger::Purpose;

/// Every placeholder a template may use.
pub const PLACEHOLDERS: [&str; 8] = [
    "schema",
    "hints",
    "question",
    "evidence",
    "failed_sql",
    "error",
    "history",
    "target_count",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    HintCuration,
    HintRepair,
    Generation,
    SqlRepair,
}

impl TemplateName {
    pub const ALL: [TemplateName; 4] = [
        TemplateName::HintCuration,
        TemplateName::HintRepair,
        TemplateName::Generation,
        TemplateName::SqlRepair,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::HintCuration => "hint_curation",
            TemplateName::HintRepair => "hint_repair",
            TemplateName::Generation => "generation",
            TemplateName::SqlRepair => "sql_repair",
        }
    }

    pub fn purpose(self) -> Purpose {
        match self {
            TemplateName::HintCuration => Purpose::HintCuration,
            TemplateName::HintRepair => Purpose::HintRepair,
            TemplateName::Generation => Purpose::Generation,
            TemplateName::SqlRepair => Purpose::Repair,
        }
    }

    /// Placeholders that must be bound when rendering. Others render empty.
    pub fn required(self) -> &'static [&'static str] {
        match self {
            TemplateName::HintCuration => &["schema", "history", "target_count"],
            TemplateName::HintRepair => &["schema", "question", "failed_sql", "error"],
            TemplateName::Generation => &["schema", "hints", "question"],
            TemplateName::SqlRepair => &["schema", "question", "failed_sql", "error"],
        }
    }

    fn default_text(self) -> &'static str {
        match self {
            TemplateName::HintCuration => include_str!("../../templates/hint_curation.txt"),
            TemplateName::HintRepair => include_str!("../../templates/hint_repair.txt"),
            TemplateName::Generation => include_str!("../../templates/generation.txt"),
            TemplateName::SqlRepair => include_str!("../../templates/sql_repair.txt"),
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {template} needs a value for {{{placeholder}}}")]
    MissingPlaceholder {
        template: TemplateName,
        placeholder: &'static str,
    },
    #[error("template {template} does not use required placeholder {{{placeholder}}}")]
    IncompleteTemplate {
        template: TemplateName,
        placeholder: &'static str,
    },
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Bindings = BTreeMap<&'static str, String>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: TemplateName,
    text: String,
}

impl PromptTemplate {
    pub fn new(name: TemplateName, text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        let used = placeholders_in(&text);
        if let Some(missing) = name.required().iter().find(|p| !used.contains(p)) {
            return Err(PromptError::IncompleteTemplate {
                template: name,
                placeholder: missing,
            });
        }
        Ok(Self { name, text })
    }

    pub fn builtin(name: TemplateName) -> Self {
        Self {
            name,
            text: name.default_text().to_string(),
        }
    }

    pub fn name(&self) -> TemplateName {
        self.name
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// Yields `(start, end, name)` for every known placeholder occurrence.
fn scan(text: &str) -> Vec<(usize, usize, &'static str)> {
    let mut found = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(len) = text[i + 1..].find('}') {
                let ident = &text[i + 1..i + 1 + len];
                if let Some(p) = PLACEHOLDERS.iter().find(|p| **p == ident) {
                    found.push((i, i + len + 2, *p));
                    i += len + 2;
                    continue;
                }
            }
        }
        i += 1;
    }
    found
}

fn placeholders_in(text: &str) -> Vec<&'static str> {
    scan(text).into_iter().map(|(_, _, p)| p).collect()
}

/// Substitutes placeholders in a single pass, so bound values that happen
/// to contain `{question}` and the like are copied verbatim.
fn substitute(template: &PromptTemplate, bindings: &Bindings) -> Result<String, PromptError> {
    for p in template.name.required() {
        if !bindings.contains_key(p) {
            return Err(PromptError::MissingPlaceholder {
                template: template.name,
                placeholder: p,
            });
        }
    }
    let text = &template.text;
    let mut out = String::with_capacity(text.len() + bindings.values().map(String::len).sum::<usize>());
    let mut last = 0;
    for (start, end, name) in scan(text) {
        out.push_str(&text[last..start]);
        if let Some(v) = bindings.get(name) {
            out.push_str(v);
        }
        last = end;
    }
    out.push_str(&text[last..]);
    Ok(out)
}

/// Renders `template` into a single-user-message request.
pub fn render_prompt(
    template: &PromptTemplate,
    bindings: &Bindings,
    temperature: f64,
    model: &str,
) -> Result<ChatRequest, PromptError> {
    let text = substitute(template, bindings)?;
    Ok(ChatRequest {
        messages: vec![ChatMessage::user(text)],
        temperature,
        model: model.to_string(),
        purpose: template.name.purpose(),
    })
}

/// Optional evidence block; empty when there is nothing to show.
pub fn evidence_section(evidence: Option<&str>) -> String {
    match evidence.map(str::trim).filter(|e| !e.is_empty()) {
        Some(e) => format!("### Evidence\n{e}\n\n"),
        None => String::new(),
    }
}

/// The four templates used by the pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub hint_curation: PromptTemplate,
    pub hint_repair: PromptTemplate,
    pub generation: PromptTemplate,
    pub sql_repair: PromptTemplate,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            hint_curation: PromptTemplate::builtin(TemplateName::HintCuration),
            hint_repair: PromptTemplate::builtin(TemplateName::HintRepair),
            generation: PromptTemplate::builtin(TemplateName::Generation),
            sql_repair: PromptTemplate::builtin(TemplateName::SqlRepair),
        }
    }
}

impl PromptSet {
    /// Built-in templates, overridden by any `<name>.txt` found in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::default();
        for name in TemplateName::ALL {
            let path = dir.join(format!("{}.txt", name.as_str()));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })?;
            *set.get_mut(name) = PromptTemplate::new(name, text)?;
        }
        Ok(set)
    }

    pub fn get(&self, name: TemplateName) -> &PromptTemplate {
        match name {
            TemplateName::HintCuration => &self.hint_curation,
            TemplateName::HintRepair => &self.hint_repair,
            TemplateName::Generation => &self.generation,
            TemplateName::SqlRepair => &self.sql_repair,
        }
    }

    fn get_mut(&mut self, name: TemplateName) -> &mut PromptTemplate {
        match name {
            TemplateName::HintCuration => &mut self.hint_curation,
            TemplateName::HintRepair => &mut self.hint_repair,
            TemplateName::Generation => &mut self.generation,
            TemplateName::SqlRepair => &mut self.sql_repair,
        }
    }
}
