//! OpenAI-compatible HTTP backend for chat completions and embeddings.

use std::time::Duration;

use serde_json::json;

use super::ratelimit::{RateLimit, TokenBucket};
use super::{BackendError, ChatBackend, ChatRequest, EmbeddingBackend, EmbeddingVector};

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    /// Service base, e.g. `https://api.openai.com`. `/v1/...` is appended.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub chat_model: String,
    pub embedding_model: String,
    pub max_attempts: u32,
    pub retry_base_delay: Duration,
    pub timeout: Duration,
    pub rate: Option<RateLimit>,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com".to_string(),
            api_key: None,
            chat_model: "gpt-3.5-turbo".to_string(),
            embedding_model: "text-embedding-3-small".to_string(),
            max_attempts: 3,
            retry_base_delay: Duration::from_millis(200),
            timeout: Duration::from_secs(60),
            rate: None,
        }
    }
}

/// Blocking HTTP client for `/v1/chat/completions` and `/v1/embeddings`.
/// Transient failures (connectivity, 429, 5xx) are retried with exponential
/// backoff up to `max_attempts`; permanent API errors surface immediately.
pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    limiter: Option<TokenBucket>,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let limiter = config.rate.map(TokenBucket::new);
        Ok(Self {
            config,
            client,
            limiter,
        })
    }

    fn post_with_retry(
        &self,
        path: &str,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, BackendError> {
        let url = format!("{}{}", self.config.endpoint.trim_end_matches('/'), path);
        let mut last_error = String::new();
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.retry_base_delay * 2u32.pow(attempt - 1));
            }
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            let mut request = self.client.post(&url).json(body);
            if let Some(key) = &self.config.api_key {
                request = request.bearer_auth(key);
            }
            match request.send() {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        return response
                            .json::<serde_json::Value>()
                            .map_err(|e| BackendError::BadResponse(e.to_string()));
                    }
                    let body_text = response.text().unwrap_or_default();
                    let retryable = status.as_u16() == 429 || status.is_server_error();
                    if !retryable {
                        return Err(BackendError::Api {
                            status: status.as_u16(),
                            body: body_text,
                        });
                    }
                    last_error = format!("status {status}: {body_text}");
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(BackendError::Network {
            attempts: self.config.max_attempts,
            message: last_error,
        })
    }
}

impl ChatBackend for HttpBackend {
    fn chat_complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        req.validate()?;
        let body = json!({
            "model": self.config.chat_model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "max_tokens": req.max_output_tokens,
            "temperature": req.temperature,
        });
        let value = self.post_with_retry("/v1/chat/completions", &body)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                BackendError::BadResponse("missing choices[0].message.content".to_string())
            })
    }
}

impl EmbeddingBackend for HttpBackend {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({
            "model": self.config.embedding_model,
            "input": texts,
        });
        let value = self.post_with_retry("/v1/embeddings", &body)?;
        let data = value["data"]
            .as_array()
            .ok_or_else(|| BackendError::BadResponse("missing data array".to_string()))?;
        if data.len() != texts.len() {
            return Err(BackendError::BadResponse(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        let mut vectors = Vec::with_capacity(data.len());
        for item in data {
            let values = item["embedding"]
                .as_array()
                .ok_or_else(|| BackendError::BadResponse("missing embedding".to_string()))?
                .iter()
                .map(|v| v.as_f64().unwrap_or(0.0))
                .collect();
            vectors.push(EmbeddingVector::new(values));
        }
        Ok(vectors)
    }
}
