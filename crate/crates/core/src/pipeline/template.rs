use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::searchspace::SearchSpace;

pub const TEMPLATE_FORMAT_VERSION: u32 = 1;
pub const QUESTION_PLACEHOLDER: &str = "{question}";
pub const DOCUMENTS_PLACEHOLDER: &str = "{retrieved documents}";

const BUILTIN: [(&str, &str); 3] = [
    ("granite.toml", include_str!("../../templates/granite.toml")),
    ("llama.toml", include_str!("../../templates/llama.toml")),
    ("mistral.toml", include_str!("../../templates/mistral.toml")),
];

/// A per-model prompt. Each retrieved chunk is wrapped in `chunk_prefix`/`chunk_suffix`
/// and the wrapped chunks are joined by `chunk_separator`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub version: u32,
    pub model: String,
    #[serde(default)]
    pub chunk_prefix: String,
    #[serde(default)]
    pub chunk_suffix: String,
    #[serde(default = "default_separator")]
    pub chunk_separator: String,
    pub body: String,
}

fn default_separator() -> String {
    "\n".to_string()
}

impl PromptTemplate {
    /// Parses a TOML template; `origin` names it in errors.
    pub fn parse(text: &str, origin: &str) -> Result<Self, PipelineError> {
        let err = |message: String| PipelineError::Template { origin: origin.to_string(), message };
        let t: PromptTemplate = toml::from_str(text).map_err(|e| err(e.to_string()))?;
        if t.version != TEMPLATE_FORMAT_VERSION {
            return Err(err(format!("unsupported version {} (expected {TEMPLATE_FORMAT_VERSION})", t.version)));
        }
        for placeholder in [QUESTION_PLACEHOLDER, DOCUMENTS_PLACEHOLDER] {
            let n = t.body.matches(placeholder).count();
            if n != 1 {
                return Err(err(format!("body must contain {placeholder} exactly once, found {n}")));
            }
        }
        Ok(t)
    }

    /// The decorated document block.
    pub fn documents_block(&self, chunks: &[&str]) -> String {
        chunks
            .iter()
            .map(|c| format!("{}{c}{}", self.chunk_prefix, self.chunk_suffix))
            .collect::<Vec<_>>()
            .join(&self.chunk_separator)
    }

    /// Fills both placeholders in one pass, so text inside the question or chunks is never re-expanded.
    ///
    /// With no chunks the whole line holding the documents placeholder is dropped.
    pub fn render(&self, question: &str, chunks: &[&str]) -> String {
        let mut body = self.body.as_str();
        let trimmed;
        if chunks.is_empty() {
            let at = body.find(DOCUMENTS_PLACEHOLDER).expect("validated placeholder");
            let line_start = body[..at].rfind('\n').map_or(0, |i| i + 1);
            let line_end = body[at..].find('\n').map_or(body.len(), |i| at + i + 1);
            trimmed = format!("{}{}", &body[..line_start], &body[line_end..]);
            body = &trimmed;
        }
        let documents = self.documents_block(chunks);
        let mut out = String::with_capacity(body.len() + question.len() + documents.len());
        let mut rest = body;
        loop {
            let q = rest.find(QUESTION_PLACEHOLDER);
            let d = rest.find(DOCUMENTS_PLACEHOLDER);
            let (at, placeholder, value) = match (q, d) {
                (Some(q), Some(d)) if d < q => (d, DOCUMENTS_PLACEHOLDER, documents.as_str()),
                (Some(q), _) => (q, QUESTION_PLACEHOLDER, question),
                (None, Some(d)) => (d, DOCUMENTS_PLACEHOLDER, documents.as_str()),
                (None, None) => break,
            };
            out.push_str(&rest[..at]);
            out.push_str(value);
            rest = &rest[at + placeholder.len()..];
        }
        out.push_str(rest);
        out
    }
}

/// Templates keyed by generative model identifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateStore {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateStore {
    /// The bundled templates.
    pub fn builtin() -> Self {
        let mut templates = BTreeMap::new();
        for (name, text) in BUILTIN {
            let t = PromptTemplate::parse(text, name).expect("bundled template is valid");
            templates.insert(t.model.clone(), t);
        }
        TemplateStore { templates }
    }

    pub fn empty() -> Self {
        TemplateStore { templates: BTreeMap::new() }
    }

    /// Adds or replaces the template for its model.
    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.model.clone(), template);
    }

    /// Loads every `*.toml` in `dir`, replacing bundled templates for the same model.
    pub fn with_dir(mut self, dir: &Path) -> Result<Self, PipelineError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        paths.retain(|p| p.extension().is_some_and(|e| e == "toml"));
        paths.sort();
        for path in paths {
            let text = std::fs::read_to_string(&path)?;
            self.insert(PromptTemplate::parse(&text, &path.display().to_string())?);
        }
        Ok(self)
    }

    pub fn get(&self, model: &str) -> Result<&PromptTemplate, PipelineError> {
        self.templates.get(model).ok_or_else(|| PipelineError::MissingTemplate(model.to_string()))
    }

    pub fn models(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// Fails on the first generative model of `space` without a template.
    pub fn check_space(&self, space: &SearchSpace) -> Result<(), PipelineError> {
        for model in space.generative_models() {
            self.get(model)?;
        }
        Ok(())
    }
}
