//! Run-scoped facade over the model backend.
//!
//! A [`ModelSession`] bundles the backend, the model configuration, and
//! the template set for one pipeline run, and accumulates the backend
//! call log (digests only) that ends up in the trace.

use std::sync::Mutex;

use crate::backend::{
    render_messages, BackendError, ChatBackend, ChatExchange, ChatMessage, ModelConfig,
};
use crate::pipeline::{BackendCall, CallKind};
use crate::prompts::{TemplateError, TemplateSet};
use crate::retrieval::Document;

/// Backend handle for one run; every model call and retrieval goes
/// through it so the trace's call log stays complete.
pub struct ModelSession<'a> {
    backend: &'a dyn ChatBackend,
    config: &'a ModelConfig,
    templates: &'a TemplateSet,
    log: Mutex<Vec<BackendCall>>,
}

impl<'a> ModelSession<'a> {
    pub fn new(
        backend: &'a dyn ChatBackend,
        config: &'a ModelConfig,
        templates: &'a TemplateSet,
    ) -> Self {
        Self {
            backend,
            config,
            templates,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        self.config
    }

    pub fn templates(&self) -> &TemplateSet {
        self.templates
    }

    /// Render a template from the session's set.
    pub fn render(&self, name: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        self.templates.render(name, values)
    }

    /// Issue a model call and log it.
    pub fn call(&self, messages: Vec<ChatMessage>) -> Result<ChatExchange, BackendError> {
        let exchange = self.backend.complete(self.config, &messages)?;
        self.log.lock().unwrap().push(BackendCall::new(
            CallKind::Model,
            &render_messages(&messages),
            &exchange.response_text,
        ));
        Ok(exchange)
    }

    /// Convenience: single user message.
    pub fn call_user(&self, prompt: impl Into<String>) -> Result<ChatExchange, BackendError> {
        self.call(vec![ChatMessage::user(prompt)])
    }

    /// Log a retrieval invocation (the retrieval itself happens in the
    /// retrieval module; the session only records it).
    pub fn log_retrieval(&self, query: &str, documents: &[Document]) {
        let response = serde_json::to_string(
            &documents
                .iter()
                .map(|d| (d.doc_id.as_str(), d.score))
                .collect::<Vec<_>>(),
        )
        .unwrap_or_default();
        self.log
            .lock()
            .unwrap()
            .push(BackendCall::new(CallKind::Retriever, query, &response));
    }

    /// Take the accumulated call log.
    pub fn drain_log(&self) -> Vec<BackendCall> {
        std::mem::take(&mut self.log.lock().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::prompts::TemplateSet;

    #[test]
    fn calls_are_logged_in_order() {
        let backend = ScriptedBackend::transcript(["first", "second"]);
        let config = ModelConfig::default();
        let templates = TemplateSet::embedded();
        let session = ModelSession::new(&backend, &config, &templates);

        session.call_user("one").unwrap();
        session.log_retrieval("a query", &[]);
        session.call_user("two").unwrap();

        let log = session.drain_log();
        assert_eq!(log.len(), 3);
        assert_eq!(log[0].kind, CallKind::Model);
        assert_eq!(log[1].kind, CallKind::Retriever);
        assert_eq!(log[2].kind, CallKind::Model);
        assert!(session.drain_log().is_empty());
    }
}
