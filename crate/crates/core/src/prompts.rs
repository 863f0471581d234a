//! Prompt template management.
//!
//! Templates are plain text files with named `{placeholder}` slots. The
//! default set is embedded at compile time from `prompts/`; an alternate
//! directory can be loaded at runtime. The set hash pins the exact bytes
//! of every template and feeds the run's `model_config_digest`, so any
//! template edit changes the digest of the runs it produced.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Template bytes shipped with the crate, keyed by template name.
const EMBEDDED: &[(&str, &str)] = &[
    ("aggregate", include_str!("../prompts/aggregate.txt")),
    (
        "chain_of_note",
        include_str!("../prompts/chain_of_note.txt"),
    ),
    ("cot", include_str!("../prompts/cot.txt")),
    ("freshprompt", include_str!("../prompts/freshprompt.txt")),
    ("judge", include_str!("../prompts/judge.txt")),
    ("plan", include_str!("../prompts/plan.txt")),
    ("react", include_str!("../prompts/react.txt")),
    (
        "refine_context",
        include_str!("../prompts/refine_context.txt"),
    ),
    (
        "refine_internal",
        include_str!("../prompts/refine_internal.txt"),
    ),
    ("review", include_str!("../prompts/review.txt")),
    (
        "review_reprompt",
        include_str!("../prompts/review_reprompt.txt"),
    ),
    ("searchain", include_str!("../prompts/searchain.txt")),
    ("self_ask", include_str!("../prompts/self_ask.txt")),
    ("vanilla", include_str!("../prompts/vanilla.txt")),
    (
        "vanilla_context",
        include_str!("../prompts/vanilla_context.txt"),
    ),
];

/// Layout version of the template set; bumped on incompatible placeholder
/// changes.
pub const TEMPLATE_SET_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("unknown template {0:?}")]
    Unknown(String),
    #[error("template directory {0} is missing template(s): {1}")]
    MissingTemplates(String, String),
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

/// An immutable named set of templates.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
}

impl TemplateSet {
    /// The compiled-in default set.
    pub fn embedded() -> Self {
        Self {
            templates: EMBEDDED
                .iter()
                .map(|(name, text)| (name.to_string(), text.to_string()))
                .collect(),
        }
    }

    /// Load `<name>.txt` files from a directory. Every template of the
    /// default set must be present.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut templates = BTreeMap::new();
        let mut missing = Vec::new();
        for (name, _) in EMBEDDED {
            let path = dir.join(format!("{name}.txt"));
            match std::fs::read_to_string(&path) {
                Ok(text) => {
                    templates.insert(name.to_string(), text);
                }
                Err(_) => missing.push(*name),
            }
        }
        if !missing.is_empty() {
            return Err(TemplateError::MissingTemplates(
                dir.display().to_string(),
                missing.join(", "),
            ));
        }
        Ok(Self { templates })
    }

    /// Raw text of a template.
    pub fn raw(&self, name: &str) -> Result<&str, TemplateError> {
        self.templates
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| TemplateError::Unknown(name.to_string()))
    }

    /// Template names, sorted.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// Substitute the given `{placeholder}` values. Only the provided
    /// names are replaced; anything else, including the empty `{}` pair,
    /// is left untouched.
    pub fn render(&self, name: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut text = self.raw(name)?.to_string();
        for (key, value) in values {
            text = text.replace(&format!("{{{key}}}"), value);
        }
        Ok(text)
    }

    /// Hex SHA-256 over the set version and every (name, bytes) pair in
    /// name order.
    pub fn set_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(TEMPLATE_SET_VERSION.as_bytes());
        hasher.update(b"\n");
        for (name, text) in &self.templates {
            hasher.update(name.as_bytes());
            hasher.update(b"\0");
            hasher.update(text.as_bytes());
            hasher.update(b"\0");
        }
        hex::encode(hasher.finalize())
    }

    /// Hex SHA-256 of a single template's bytes.
    pub fn template_hash(&self, name: &str) -> Result<String, TemplateError> {
        let mut hasher = Sha256::new();
        hasher.update(self.raw(name)?.as_bytes());
        Ok(hex::encode(hasher.finalize()))
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::embedded()
    }
}
