//! Deterministic replay backend answering requests from a recorded fixture.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    canonical_chat_key, canonical_embed_key, ensure_texts_non_empty, validate_batch, Backend,
    BackendError, ChatRequest, ChatResponse, EmbeddingVector, FinishReason,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureMode {
    /// Entries answer any call in recorded order, regardless of content.
    StrictSequence,
    /// Entries are matched by the canonical request hash; keys are unique.
    Keyed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureEntry {
    pub key: Option<String>,
    pub response: String,
}

/// Fixture file line: `{"key": "<hex64>", "response": "..."}` or
/// `{"seq": <int>, "response": "..."}`.
#[derive(Serialize, Deserialize)]
struct WireEntry {
    #[serde(skip_serializing_if = "Option::is_none")]
    key: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seq: Option<u64>,
    response: String,
}

/// Builder for replay fixtures, usable in-memory or written to a JSONL file.
#[derive(Debug, Clone)]
pub struct ReplayFixture {
    mode: FixtureMode,
    entries: Vec<FixtureEntry>,
}

impl ReplayFixture {
    pub fn sequence() -> Self {
        ReplayFixture {
            mode: FixtureMode::StrictSequence,
            entries: Vec::new(),
        }
    }

    pub fn keyed() -> Self {
        ReplayFixture {
            mode: FixtureMode::Keyed,
            entries: Vec::new(),
        }
    }

    pub fn mode(&self) -> FixtureMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends a raw response. In keyed mode `key` is required.
    pub fn push_raw(&mut self, key: Option<String>, response: impl Into<String>) -> &mut Self {
        self.entries.push(FixtureEntry {
            key,
            response: response.into(),
        });
        self
    }

    /// Records the reply for a chat request, keying it with the canonical
    /// request hash in keyed mode.
    pub fn push_chat(&mut self, request: &ChatRequest, response: impl Into<String>) -> &mut Self {
        let key = match self.mode {
            FixtureMode::Keyed => Some(canonical_chat_key(request)),
            FixtureMode::StrictSequence => None,
        };
        self.push_raw(key, response)
    }

    /// Records the embedding for one text as a JSON array response.
    pub fn push_embedding(&mut self, model: &str, text: &str, vector: &[f64]) -> &mut Self {
        let key = match self.mode {
            FixtureMode::Keyed => Some(canonical_embed_key(model, text)),
            FixtureMode::StrictSequence => None,
        };
        let response = serde_json::to_string(vector).expect("vector serializes");
        self.push_raw(key, response)
    }

    pub fn write(&self, path: &Path) -> Result<(), BackendError> {
        let mut file = std::fs::File::create(path).map_err(|e| BackendError::FixtureFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        for (i, entry) in self.entries.iter().enumerate() {
            let wire = WireEntry {
                key: entry.key.clone(),
                seq: match self.mode {
                    FixtureMode::StrictSequence => Some(i as u64),
                    FixtureMode::Keyed => None,
                },
                response: entry.response.clone(),
            };
            let line = serde_json::to_string(&wire).expect("entry serializes");
            writeln!(file, "{line}").map_err(|e| BackendError::FixtureFile {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let file = std::fs::File::open(path).map_err(|e| BackendError::FixtureFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut keyed: Vec<FixtureEntry> = Vec::new();
        let mut sequenced: Vec<(u64, FixtureEntry)> = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| BackendError::FixtureFile {
                path: path.display().to_string(),
                message: format!("line {}: {e}", lineno + 1),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let wire: WireEntry =
                serde_json::from_str(&line).map_err(|e| BackendError::FixtureFile {
                    path: path.display().to_string(),
                    message: format!("line {}: {e}", lineno + 1),
                })?;
            match (wire.key, wire.seq) {
                (Some(key), None) => keyed.push(FixtureEntry {
                    key: Some(key),
                    response: wire.response,
                }),
                (None, Some(seq)) => sequenced.push((
                    seq,
                    FixtureEntry {
                        key: None,
                        response: wire.response,
                    },
                )),
                _ => {
                    return Err(BackendError::FixtureFile {
                        path: path.display().to_string(),
                        message: format!(
                            "line {}: entry needs exactly one of \"key\" or \"seq\"",
                            lineno + 1
                        ),
                    })
                }
            }
        }
        match (keyed.is_empty(), sequenced.is_empty()) {
            (false, true) => Ok(ReplayFixture {
                mode: FixtureMode::Keyed,
                entries: keyed,
            }),
            (true, false) => {
                sequenced.sort_by_key(|(seq, _)| *seq);
                Ok(ReplayFixture {
                    mode: FixtureMode::StrictSequence,
                    entries: sequenced.into_iter().map(|(_, e)| e).collect(),
                })
            }
            (true, true) => Ok(ReplayFixture {
                mode: FixtureMode::StrictSequence,
                entries: Vec::new(),
            }),
            (false, false) => Err(BackendError::FixtureFile {
                path: path.display().to_string(),
                message: "fixture mixes keyed and sequence entries".into(),
            }),
        }
    }

    pub fn into_backend(self) -> Result<ReplayBackend, BackendError> {
        ReplayBackend::from_fixture(self)
    }
}

/// Requests served so far, in call order.
#[derive(Debug, Clone, PartialEq)]
pub enum LoggedRequest {
    Chat(ChatRequest),
    Embed { model: String, texts: Vec<String> },
}

struct ReplayState {
    cursor: usize,
    log: Vec<LoggedRequest>,
    chat_calls: usize,
    embed_calls: usize,
}

/// Answers requests from a fixture. Identical request sequences yield
/// identical response sequences; strict-sequence mode serializes calls
/// internally because the cursor is shared state.
pub struct ReplayBackend {
    mode: FixtureMode,
    entries: Vec<FixtureEntry>,
    by_key: HashMap<String, String>,
    state: Mutex<ReplayState>,
}

impl ReplayBackend {
    pub fn from_fixture(fixture: ReplayFixture) -> Result<Self, BackendError> {
        let mut by_key = HashMap::new();
        if fixture.mode == FixtureMode::Keyed {
            for entry in &fixture.entries {
                let key = entry.key.clone().ok_or_else(|| {
                    BackendError::InvalidRequest("keyed fixture entry without key".into())
                })?;
                if by_key.insert(key.clone(), entry.response.clone()).is_some() {
                    return Err(BackendError::InvalidRequest(format!(
                        "duplicate fixture key {key}"
                    )));
                }
            }
        }
        Ok(ReplayBackend {
            mode: fixture.mode,
            entries: fixture.entries,
            by_key,
            state: Mutex::new(ReplayState {
                cursor: 0,
                log: Vec::new(),
                chat_calls: 0,
                embed_calls: 0,
            }),
        })
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        ReplayFixture::load(path)?.into_backend()
    }

    pub fn request_log(&self) -> Vec<LoggedRequest> {
        self.state.lock().unwrap().log.clone()
    }

    pub fn chat_calls(&self) -> usize {
        self.state.lock().unwrap().chat_calls
    }

    pub fn embed_calls(&self) -> usize {
        self.state.lock().unwrap().embed_calls
    }

    fn next_response(
        &self,
        state: &mut ReplayState,
        key: &str,
        describe: &str,
    ) -> Result<String, BackendError> {
        match self.mode {
            FixtureMode::Keyed => {
                self.by_key
                    .get(key)
                    .cloned()
                    .ok_or_else(|| BackendError::FixtureMiss {
                        key: key.to_string(),
                        request: describe.to_string(),
                    })
            }
            FixtureMode::StrictSequence => {
                let entry =
                    self.entries
                        .get(state.cursor)
                        .ok_or(BackendError::FixtureExhausted {
                            served: state.cursor,
                        })?;
                state.cursor += 1;
                Ok(entry.response.clone())
            }
        }
    }
}

impl Backend for ReplayBackend {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut state = self.state.lock().unwrap();
        state.log.push(LoggedRequest::Chat(request.clone()));
        state.chat_calls += 1;
        let key = canonical_chat_key(request);
        let describe = format!("chat model={}", request.model);
        let content = self.next_response(&mut state, &key, &describe)?;
        Ok(ChatResponse {
            content,
            finish_reason: FinishReason::Stop,
            usage: None,
        })
    }

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        ensure_texts_non_empty(texts)?;
        let mut state = self.state.lock().unwrap();
        state.log.push(LoggedRequest::Embed {
            model: model.to_string(),
            texts: texts.to_vec(),
        });
        state.embed_calls += 1;
        let mut vectors = Vec::with_capacity(texts.len());
        for text in texts {
            let key = canonical_embed_key(model, text);
            let describe = format!("embed model={model}");
            let response = self.next_response(&mut state, &key, &describe)?;
            let values: Vec<f64> = serde_json::from_str(&response).map_err(|e| {
                BackendError::Protocol(format!("fixture embedding is not a JSON array: {e}"))
            })?;
            vectors.push(EmbeddingVector::new(values)?);
        }
        validate_batch(texts, vectors)
    }
}
