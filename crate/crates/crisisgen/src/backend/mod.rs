//! Uniform access to text-generation and embedding services.
//!
//! Two interchangeable backends implement [`Backend`]: [`HttpBackend`] speaks
//! the de-facto standard chat-completions / embeddings JSON-over-HTTP
//! interface, and [`ReplayBackend`] answers from a recorded fixture for
//! offline, deterministic runs. Callers cannot tell them apart except through
//! configuration.

mod http;
mod replay;

pub use http::{HttpBackend, RetryPolicy};
pub use replay::{FixtureEntry, FixtureMode, LoggedRequest, ReplayBackend, ReplayFixture};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    /// Network-level failure. Reported after the retry budget is spent.
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },

    /// The service answered but the payload violates the wire contract
    /// (bad JSON shape, mixed embedding dimensions, all-zero vectors, ...).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A request was rejected before any transport was attempted.
    #[error("invalid request: {0}")]
    InvalidRequest(String),

    /// Keyed replay fixture has no entry for this request.
    #[error("replay fixture miss for key {key} ({request})")]
    FixtureMiss { key: String, request: String },

    /// Sequence replay fixture ran out of entries.
    #[error("replay fixture exhausted after {served} response(s)")]
    FixtureExhausted { served: usize },

    #[error("fixture file {path}: {message}")]
    FixtureFile { path: String, message: String },
}

impl BackendError {
    /// Transient failures that a retry loop may re-send.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }
}

/// One call to the chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// Validates the request invariants: non-empty messages, finite
    /// non-negative temperature, positive max_tokens.
    pub fn new(
        model: impl Into<String>,
        messages: Vec<ChatMessage>,
        temperature: f64,
        max_tokens: u32,
    ) -> Result<Self, BackendError> {
        if messages.is_empty() {
            return Err(BackendError::InvalidRequest(
                "chat request needs at least one message".into(),
            ));
        }
        if !temperature.is_finite() || temperature < 0.0 {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be finite and >= 0, got {temperature}"
            )));
        }
        if max_tokens == 0 {
            return Err(BackendError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(ChatRequest {
            model: model.into(),
            messages,
            temperature,
            max_tokens,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
    pub total_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    pub usage: Option<TokenUsage>,
}

/// A finite, non-zero embedding. All-zero vectors are rejected at
/// construction so cosine similarity is always defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, BackendError> {
        if values.is_empty() {
            return Err(BackendError::Protocol("empty embedding vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::Protocol(
                "embedding vector contains non-finite values".into(),
            ));
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(BackendError::Protocol("all-zero embedding vector".into()));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cosine_similarity(&self, other: &EmbeddingVector) -> Option<f64> {
        if self.dimension() != other.dimension() {
            return None;
        }
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for (a, b) in self.values.iter().zip(other.values.iter()) {
            dot += a * b;
            na += a * a;
            nb += b * b;
        }
        Some(dot / (na.sqrt() * nb.sqrt()))
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = BackendError;

    fn try_from(values: Vec<f64>) -> Result<Self, BackendError> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Vec<f64> {
        v.values
    }
}

/// Abstraction over generation and embedding services.
///
/// Implementations are shareable across threads; each call is independent.
pub trait Backend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;

    /// One vector per input text, order-preserving, all sharing one
    /// dimension. Empty input is rejected.
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError>;
}

/// Checks the batch-level contract shared by every backend: one vector per
/// text and a single dimension across the batch.
fn validate_batch(
    texts: &[String],
    vectors: Vec<EmbeddingVector>,
) -> Result<Vec<EmbeddingVector>, BackendError> {
    if vectors.len() != texts.len() {
        return Err(BackendError::Protocol(format!(
            "expected {} embeddings, got {}",
            texts.len(),
            vectors.len()
        )));
    }
    if let Some(first) = vectors.first() {
        let dim = first.dimension();
        for v in &vectors {
            if v.dimension() != dim {
                return Err(BackendError::Protocol(format!(
                    "mixed embedding dimensions in batch: {} vs {}",
                    dim,
                    v.dimension()
                )));
            }
        }
    }
    Ok(vectors)
}

fn ensure_texts_non_empty(texts: &[String]) -> Result<(), BackendError> {
    if texts.is_empty() {
        Err(BackendError::InvalidRequest(
            "embed batch needs at least one text".into(),
        ))
    } else {
        Ok(())
    }
}

/// Stable 64-bit hash of arbitrary bytes, hex-encoded (16 chars).
pub fn stable_hash_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}

/// Replay key for a chat request: canonical JSON of
/// (model, messages, temperature rounded to 4 decimals), then the stable
/// 64-bit hash. Insensitive to field ordering, sensitive to content;
/// max_tokens is deliberately excluded.
pub fn canonical_chat_key(request: &ChatRequest) -> String {
    let messages: Vec<serde_json::Value> = request
        .messages
        .iter()
        .map(|m| {
            serde_json::json!({
                "content": m.content,
                "role": match m.role { Role::System => "system", Role::User => "user" },
            })
        })
        .collect();
    let canonical = serde_json::json!({
        "kind": "chat",
        "messages": messages,
        "model": request.model,
        "temperature": format!("{:.4}", request.temperature),
    });
    stable_hash_hex(canonical.to_string().as_bytes())
}

/// Replay key for a single embedding input.
pub fn canonical_embed_key(model: &str, text: &str) -> String {
    let canonical = serde_json::json!({
        "input": text,
        "kind": "embed",
        "model": model,
    });
    stable_hash_hex(canonical.to_string().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chat_request_rejects_empty_messages() {
        let err = ChatRequest::new("m", vec![], 1.0, 16).unwrap_err();
        assert!(matches!(err, BackendError::InvalidRequest(_)));
    }

    #[test]
    fn chat_request_rejects_non_finite_temperature() {
        let msgs = vec![ChatMessage::user("hi")];
        assert!(ChatRequest::new("m", msgs.clone(), f64::NAN, 16).is_err());
        assert!(ChatRequest::new("m", msgs.clone(), -0.5, 16).is_err());
        assert!(ChatRequest::new("m", msgs, 0.0, 16).is_ok());
    }

    #[test]
    fn embedding_vector_rejects_all_zero() {
        let err = EmbeddingVector::new(vec![0.0, 0.0]).unwrap_err();
        assert!(matches!(err, BackendError::Protocol(_)));
    }

    #[test]
    fn embedding_vector_rejects_non_finite() {
        assert!(EmbeddingVector::new(vec![1.0, f64::INFINITY]).is_err());
        assert!(EmbeddingVector::new(vec![]).is_err());
    }

    #[test]
    fn cosine_similarity_basics() {
        let a = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let b = EmbeddingVector::new(vec![0.0, 1.0]).unwrap();
        assert!((a.cosine_similarity(&a).unwrap() - 1.0).abs() < 1e-12);
        assert!(a.cosine_similarity(&b).unwrap().abs() < 1e-12);
        let c = EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(a.cosine_similarity(&c).is_none());
    }

    #[test]
    fn canonical_chat_key_is_stable_and_content_sensitive() {
        let req = |content: &str, temp: f64| {
            ChatRequest::new("model-a", vec![ChatMessage::user(content)], temp, 256).unwrap()
        };
        let k1 = canonical_chat_key(&req("hello", 1.0));
        let k2 = canonical_chat_key(&req("hello", 1.0));
        assert_eq!(k1, k2);
        assert_eq!(k1.len(), 16);
        assert_ne!(k1, canonical_chat_key(&req("other", 1.0)));
        assert_ne!(k1, canonical_chat_key(&req("hello", 1.2)));
        // Rounding to 4 decimals: differences beyond that do not change the key.
        assert_eq!(k1, canonical_chat_key(&req("hello", 1.000049)));
    }

    #[test]
    fn canonical_embed_key_distinguishes_model_and_text() {
        let k = canonical_embed_key("emb", "hello");
        assert_eq!(k, canonical_embed_key("emb", "hello"));
        assert_ne!(k, canonical_embed_key("emb", "world"));
        assert_ne!(k, canonical_embed_key("other", "hello"));
    }
}
