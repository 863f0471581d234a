//! Call-counting wrapper used by tests and the evaluation harness to
//! assert cache behavior and concurrency bounds.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{BackendError, ChatBackend, ChatExchange, ChatMessage, ModelConfig};

/// Shared counters exposed by [`InstrumentedBackend`].
#[derive(Debug, Default)]
pub struct CallCounters {
    total: AtomicU64,
    in_flight: AtomicU64,
    peak_in_flight: AtomicU64,
}

impl CallCounters {
    /// Total completed or failed calls.
    pub fn total(&self) -> u64 {
        self.total.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneously in-flight calls observed.
    pub fn peak_in_flight(&self) -> u64 {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    fn enter(&self) {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
    }

    fn exit(&self) {
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        self.total.fetch_add(1, Ordering::SeqCst);
    }
}

/// Backend wrapper counting calls and tracking peak concurrency.
pub struct InstrumentedBackend<B> {
    inner: B,
    counters: Arc<CallCounters>,
}

impl<B: ChatBackend> InstrumentedBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            counters: Arc::new(CallCounters::default()),
        }
    }

    /// Handle to the counters, usable after the backend is moved.
    pub fn counters(&self) -> Arc<CallCounters> {
        Arc::clone(&self.counters)
    }
}

impl<B: ChatBackend> ChatBackend for InstrumentedBackend<B> {
    fn complete(
        &self,
        config: &ModelConfig,
        messages: &[ChatMessage],
    ) -> Result<ChatExchange, BackendError> {
        self.counters.enter();
        let result = self.inner.complete(config, messages);
        self.counters.exit();
        result
    }
}
