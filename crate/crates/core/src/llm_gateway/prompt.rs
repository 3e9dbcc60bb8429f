use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::GatewayError;
use crate::domain::MemoryBank;

/// Names a template body may reference.
pub const PLACEHOLDERS: [&str; 6] = [
    "query",
    "eval_summary",
    "original_query",
    "Video_path",
    "memory_bank",
    "action_decision_reasoning",
];

/// Rendered in place of an empty memory bank.
pub const EMPTY_MEMORY: &str = "(no history)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum TemplateName {
    Eval,
    EvalReasoning,
    Action,
    Refine,
    RefineMemory,
}

impl TemplateName {
    pub const ALL: [TemplateName; 5] = [
        TemplateName::Eval,
        TemplateName::EvalReasoning,
        TemplateName::Action,
        TemplateName::Refine,
        TemplateName::RefineMemory,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateName::Eval => "eval.txt",
            TemplateName::EvalReasoning => "eval_reasoning.txt",
            TemplateName::Action => "action.txt",
            TemplateName::Refine => "refine.txt",
            TemplateName::RefineMemory => "refine_memory.txt",
        }
    }

    /// Placeholders the shipped body of this template uses.
    pub fn required(self) -> &'static [&'static str] {
        match self {
            TemplateName::Eval | TemplateName::EvalReasoning => &["query", "Video_path"],
            TemplateName::Action => &["query", "eval_summary"],
            TemplateName::Refine => &["original_query", "query"],
            TemplateName::RefineMemory => &[
                "memory_bank",
                "action_decision_reasoning",
                "original_query",
                "query",
            ],
        }
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // Identifier-only braces; JSON braces in the answer schemas never match.
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: TemplateName,
    body: String,
    placeholders: BTreeSet<String>,
}

impl PromptTemplate {
    pub fn new(name: TemplateName, body: impl Into<String>) -> Result<Self, GatewayError> {
        let body = body.into();
        let placeholders: BTreeSet<String> = placeholder_re()
            .captures_iter(&body)
            .map(|c| c[1].to_string())
            .collect();
        if let Some(bad) = placeholders
            .iter()
            .find(|p| !PLACEHOLDERS.contains(&p.as_str()))
        {
            return Err(GatewayError::UnknownPlaceholder {
                template: name,
                placeholder: bad.clone(),
            });
        }
        Ok(Self {
            name,
            body,
            placeholders,
        })
    }

    pub fn name(&self) -> TemplateName {
        self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &str> {
        self.placeholders.iter().map(String::as_str)
    }

    /// Substitutes every placeholder in one pass, so bound values containing
    /// brace syntax are never re-expanded.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, GatewayError> {
        if let Some(missing) = self
            .placeholders
            .iter()
            .find(|p| !bindings.iter().any(|(k, _)| k == p))
        {
            return Err(GatewayError::MissingPlaceholder(missing.clone()));
        }
        let out = placeholder_re().replace_all(&self.body, |c: &regex::Captures<'_>| {
            bindings
                .iter()
                .find(|(k, _)| *k == &c[1])
                .map(|(_, v)| v.to_string())
                .unwrap_or_default()
        });
        Ok(out.into_owned())
    }
}

/// The five templates, loaded from a directory of text assets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: Vec<PromptTemplate>,
}

impl PromptSet {
    /// The asset directory shipped with this crate.
    pub fn default_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("prompts")
    }

    pub fn load_default() -> Result<Self, GatewayError> {
        Self::load_dir(Self::default_dir())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let dir = dir.as_ref();
        let mut templates = Vec::with_capacity(TemplateName::ALL.len());
        for name in TemplateName::ALL {
            let path = dir.join(name.file_name());
            let body = std::fs::read_to_string(&path).map_err(|e| GatewayError::Asset {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            let template = PromptTemplate::new(name, body)?;
            if let Some(p) = name
                .required()
                .iter()
                .find(|p| !template.placeholders.contains(**p))
            {
                return Err(GatewayError::Asset {
                    path,
                    reason: format!("template lacks required placeholder {{{p}}}"),
                });
            }
            templates.push(template);
        }
        Ok(Self { templates })
    }

    pub fn get(&self, name: TemplateName) -> &PromptTemplate {
        self.templates
            .iter()
            .find(|t| t.name == name)
            .expect("a PromptSet always holds every template")
    }

    pub fn render(
        &self,
        name: TemplateName,
        bindings: &[(&str, &str)],
    ) -> Result<String, GatewayError> {
        self.get(name).render(bindings)
    }
}

/// One line per entry, oldest first:
/// `step 0: query="..." precision=0.640 window=[0,50]`.
pub fn serialize_memory(memory: &MemoryBank) -> String {
    if memory.is_empty() {
        return EMPTY_MEMORY.to_string();
    }
    let mut out = String::new();
    for (i, e) in memory.entries().iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        // JSON string quoting keeps the line injective for any query text.
        let quoted = serde_json::to_string(e.query().text()).expect("strings always serialize");
        let _ = write!(
            out,
            "step {}: query={} precision={:.3} window={}",
            e.iteration(),
            quoted,
            e.precision(),
            e.window()
        );
    }
    out
}
