//! Model access behind two interfaces: chat completion and text embedding.
//!
//! [`HttpBackend`] speaks the OpenAI-compatible wire format
//! (`/v1/chat/completions`, `/v1/embeddings`); [`MockChatBackend`] and
//! [`HashEmbeddingBackend`] are deterministic stand-ins for tests and
//! hermetic runs. Backends are shareable handles and safe to call
//! concurrently.

mod http;
mod mock;
mod ratelimit;

pub use http::{HttpBackend, HttpBackendConfig};
pub use mock::{HashEmbeddingBackend, MockChatBackend, MockRule, MockScript};
pub use ratelimit::{RateLimit, TokenBucket};

use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

/// A single chat-completion request.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub max_output_tokens: u32,
    /// Defaults to 0 so repeated requests seek identical answers.
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            max_output_tokens: 512,
            temperature: 0.0,
        }
    }

    pub fn with_max_tokens(mut self, max: u32) -> Self {
        self.max_output_tokens = max;
        self
    }

    fn validate(&self) -> Result<(), BackendError> {
        if self.system_prompt.is_empty() || self.user_prompt.is_empty() {
            return Err(BackendError::InvalidRequest(
                "prompts must be non-empty".to_string(),
            ));
        }
        Ok(())
    }
}

/// A fixed-length embedding. The dimension travels with the vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("network failure after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("api error (status {status}): {body}")]
    Api { status: u16, body: String },
    #[error("mock script has no matching rule for prompt starting `{prompt_head}`")]
    MockMiss { prompt_head: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unusable response: {0}")]
    BadResponse(String),
}

/// Chat completion. Implementations must be safe to share across threads.
pub trait ChatBackend: Send + Sync {
    fn chat_complete(&self, req: &ChatRequest) -> Result<String, BackendError>;
}

/// Text embedding. One vector per input, in input order.
pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn chat_complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        (**self).chat_complete(req)
    }
}

impl<T: EmbeddingBackend + ?Sized> EmbeddingBackend for Arc<T> {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        (**self).embed(texts)
    }
}

/// Appends one JSON line per request to a log file: kind, prompt, response,
/// latency. Used for decision-trace auditing.
pub struct RequestLogger {
    file: Mutex<std::fs::File>,
}

impl RequestLogger {
    pub fn create(path: &std::path::Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(Self {
            file: Mutex::new(file),
        })
    }

    pub fn log(&self, kind: &str, prompt: &str, response: &str, latency: Duration) {
        use std::io::Write;
        let line = serde_json::json!({
            "kind": kind,
            "prompt": prompt,
            "response": response,
            "latency_ms": latency.as_secs_f64() * 1e3,
        });
        if let Ok(mut file) = self.file.lock() {
            let _ = writeln!(file, "{line}");
        }
    }
}

/// Wraps a chat backend, logging every request/response pair.
pub struct LoggedChat<C> {
    inner: C,
    logger: Arc<RequestLogger>,
}

impl<C> LoggedChat<C> {
    pub fn new(inner: C, logger: Arc<RequestLogger>) -> Self {
        Self { inner, logger }
    }
}

impl<C: ChatBackend> ChatBackend for LoggedChat<C> {
    fn chat_complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let started = std::time::Instant::now();
        let result = self.inner.chat_complete(req);
        let latency = started.elapsed();
        match &result {
            Ok(response) => self.logger.log("chat", &req.user_prompt, response, latency),
            Err(e) => self
                .logger
                .log("chat_error", &req.user_prompt, &e.to_string(), latency),
        }
        result
    }
}

/// Wraps an embedding backend, logging batch sizes and latency.
pub struct LoggedEmbedding<E> {
    inner: E,
    logger: Arc<RequestLogger>,
}

impl<E> LoggedEmbedding<E> {
    pub fn new(inner: E, logger: Arc<RequestLogger>) -> Self {
        Self { inner, logger }
    }
}

impl<E: EmbeddingBackend> EmbeddingBackend for LoggedEmbedding<E> {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        let started = std::time::Instant::now();
        let result = self.inner.embed(texts);
        let latency = started.elapsed();
        let summary = format!("batch of {}", texts.len());
        match &result {
            Ok(vectors) => {
                self.logger
                    .log("embed", &summary, &format!("{} vectors", vectors.len()), latency)
            }
            Err(e) => self.logger.log("embed_error", &summary, &e.to_string(), latency),
        }
        result
    }
}
