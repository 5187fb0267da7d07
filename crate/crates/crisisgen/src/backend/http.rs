//! Live HTTP backend for chat-completions and embeddings endpoints.

use std::time::Duration;

use serde::Deserialize;

use super::{
    ensure_texts_non_empty, validate_batch, Backend, BackendError, ChatRequest, ChatResponse,
    EmbeddingVector, FinishReason, TokenUsage,
};

/// Retry budget for transient transport failures (connection errors,
/// timeouts, HTTP 429/5xx). Non-retryable failures stop immediately.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_retries: 0,
            initial_backoff: Duration::ZERO,
        }
    }

    fn backoff(&self, retry_index: u32) -> Duration {
        self.initial_backoff * 2u32.saturating_pow(retry_index)
    }
}

pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl HttpBackend {
    /// `base_url` is the server root (without `/v1`), e.g.
    /// `http://localhost:8000`.
    pub fn new(base_url: impl Into<String>) -> Result<Self, BackendError> {
        Self::with_timeout(base_url, Duration::from_secs(120))
    }

    pub fn with_timeout(
        base_url: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::InvalidRequest(format!("http client: {e}")))?;
        Ok(HttpBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: None,
            client,
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url, path)
    }

    /// Sends one POST, classifying failures into retryable transport errors
    /// and terminal protocol errors.
    fn post_once(
        &self,
        url: &str,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, (BackendError, bool)> {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            (
                BackendError::Transport {
                    message: e.to_string(),
                    attempts: 0,
                },
                true,
            )
        })?;
        let status = resp.status();
        if status.is_success() {
            resp.json::<serde_json::Value>().map_err(|e| {
                (
                    BackendError::Protocol(format!("response body is not JSON: {e}")),
                    false,
                )
            })
        } else {
            let retryable = status.as_u16() == 429 || status.is_server_error();
            let text = resp.text().unwrap_or_default();
            let err = if retryable {
                BackendError::Transport {
                    message: format!("HTTP {status}: {text}"),
                    attempts: 0,
                }
            } else {
                BackendError::Protocol(format!("HTTP {status}: {text}"))
            };
            Err((err, retryable))
        }
    }

    fn post_with_retry(
        &self,
        url: &str,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, BackendError> {
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.post_once(url, body) {
                Ok(v) => return Ok(v),
                Err((err, retryable)) => {
                    if !retryable || attempts > self.retry.max_retries {
                        return Err(match err {
                            BackendError::Transport { message, .. } => {
                                BackendError::Transport { message, attempts }
                            }
                            other => other,
                        });
                    }
                    std::thread::sleep(self.retry.backoff(attempts - 1));
                }
            }
        }
    }
}

#[derive(Deserialize)]
struct WireChatResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u32,
    completion_tokens: u32,
    total_tokens: u32,
}

#[derive(Deserialize)]
struct WireEmbeddingResponse {
    data: Vec<WireEmbedding>,
}

#[derive(Deserialize)]
struct WireEmbedding {
    index: Option<usize>,
    embedding: Vec<f64>,
}

fn parse_finish_reason(raw: Option<&str>) -> FinishReason {
    match raw {
        Some("length") | Some("max_tokens") => FinishReason::Length,
        Some("error") | Some("content_filter") => FinishReason::Error,
        _ => FinishReason::Stop,
    }
}

impl Backend for HttpBackend {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let body = serde_json::json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let raw = self.post_with_retry(&self.url("/v1/chat/completions"), &body)?;
        let wire: WireChatResponse = serde_json::from_value(raw)
            .map_err(|e| BackendError::Protocol(format!("chat response shape: {e}")))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("chat response has no choices".into()))?;
        let finish_reason = parse_finish_reason(choice.finish_reason.as_deref());
        let content = match choice.message.content {
            Some(c) => c,
            None if finish_reason == FinishReason::Error => String::new(),
            None => return Err(BackendError::Protocol("chat choice has no content".into())),
        };
        Ok(ChatResponse {
            content,
            finish_reason,
            usage: wire.usage.map(|u| TokenUsage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
                total_tokens: u.total_tokens,
            }),
        })
    }

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        ensure_texts_non_empty(texts)?;
        let body = serde_json::json!({
            "model": model,
            "input": texts,
        });
        let raw = self.post_with_retry(&self.url("/v1/embeddings"), &body)?;
        let wire: WireEmbeddingResponse = serde_json::from_value(raw)
            .map_err(|e| BackendError::Protocol(format!("embedding response shape: {e}")))?;
        let mut rows: Vec<(usize, Vec<f64>)> = wire
            .data
            .into_iter()
            .enumerate()
            .map(|(pos, e)| (e.index.unwrap_or(pos), e.embedding))
            .collect();
        rows.sort_by_key(|(idx, _)| *idx);
        let vectors = rows
            .into_iter()
            .map(|(_, values)| EmbeddingVector::new(values))
            .collect::<Result<Vec<_>, _>>()?;
        validate_batch(texts, vectors)
    }
}
