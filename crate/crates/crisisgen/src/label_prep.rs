//! Target-label preparation: turn raw tweet corpora into label vectors and
//! a reference embedding store.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{stable_hash_hex, Backend, ChatMessage, ChatRequest, EmbeddingVector};
use crate::error::{Error, Result};
use crate::prompts;

/// Embedding requests are chunked so corpora of any size stream through.
const EMBED_BATCH_SIZE: usize = 64;

/// Four-level damage label. Values outside 0..=3 are rejected at
/// construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct DamageLevel(u8);

impl DamageLevel {
    pub const ALL: [DamageLevel; 4] = [
        DamageLevel(0),
        DamageLevel(1),
        DamageLevel(2),
        DamageLevel(3),
    ];

    pub fn new(level: u8) -> Result<Self> {
        if level <= 3 {
            Ok(DamageLevel(level))
        } else {
            Err(Error::InvalidValue(format!(
                "damage level must be 0..=3, got {level}"
            )))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for DamageLevel {
    type Error = Error;

    fn try_from(level: u8) -> Result<Self> {
        DamageLevel::new(level)
    }
}

impl From<DamageLevel> for u8 {
    fn from(level: DamageLevel) -> u8 {
        level.0
    }
}

impl fmt::Display for DamageLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The (target location, target damage level) pair driving one generation
/// chain. Location is always non-empty after trimming.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TargetLabelVector {
    location: String,
    damage_level: DamageLevel,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
}

impl TargetLabelVector {
    pub fn new(location: impl Into<String>, damage_level: DamageLevel) -> Result<Self> {
        let location = location.into();
        if location.trim().is_empty() {
            return Err(Error::InvalidValue("target location is empty".into()));
        }
        Ok(TargetLabelVector {
            location,
            damage_level,
            provenance: None,
        })
    }

    pub fn with_provenance(mut self, source_id: impl Into<String>) -> Self {
        self.provenance = Some(source_id.into());
        self
    }

    pub fn location(&self) -> &str {
        &self.location
    }

    pub fn damage_level(&self) -> DamageLevel {
        self.damage_level
    }

    pub fn provenance(&self) -> Option<&str> {
        self.provenance.as_deref()
    }
}

/// A tweet as read from a corpus file. `location`/`damage` carry pre-labeled
/// columns when the input has them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RawTweet {
    pub id: String,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub damage: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_meta: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "csv" => Ok(CorpusFormat::Csv),
            other => Err(Error::InvalidValue(format!(
                "unknown corpus format {other:?} (expected jsonl or csv)"
            ))),
        }
    }
}

#[derive(Debug)]
pub struct IngestSummary {
    pub tweets: Vec<RawTweet>,
    /// Rows dropped because they did not parse or had an empty text.
    pub skipped_rows: usize,
}

fn is_retweet(text: &str) -> bool {
    text.trim_start().starts_with("RT @")
}

#[derive(Deserialize)]
struct WireTweet {
    id: Option<String>,
    text: Option<String>,
    location: Option<String>,
    damage: Option<i64>,
    #[serde(default)]
    meta: Option<BTreeMap<String, String>>,
}

/// Reads a corpus file, dropping unparseable rows, empty texts, retweets
/// (`RT @` prefix), and exact duplicate texts (first occurrence kept,
/// input order preserved).
pub fn ingest_corpus(path: &Path, format: CorpusFormat) -> Result<IngestSummary> {
    let rows = match format {
        CorpusFormat::Jsonl => read_jsonl_rows(path)?,
        CorpusFormat::Csv => read_csv_rows(path)?,
    };

    let mut skipped = 0usize;
    let mut seen = std::collections::HashSet::new();
    let mut tweets = Vec::new();
    for (row_no, row) in rows {
        let Some(row) = row else {
            skipped += 1;
            continue;
        };
        let text = match &row.text {
            Some(t) if !t.trim().is_empty() => t.clone(),
            _ => {
                log::warn!("corpus row {row_no}: missing or empty text, skipped");
                skipped += 1;
                continue;
            }
        };
        if is_retweet(&text) {
            continue;
        }
        let trimmed = text.trim().to_string();
        if !seen.insert(trimmed) {
            continue;
        }
        tweets.push(RawTweet {
            id: row.id.unwrap_or_else(|| format!("row-{row_no}")),
            text,
            location: row.location.filter(|l| !l.trim().is_empty()),
            damage: row.damage,
            source_meta: row.meta,
        });
    }

    if tweets.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no valid tweets in {} ({} row(s) skipped)",
            path.display(),
            skipped
        )));
    }
    Ok(IngestSummary {
        tweets,
        skipped_rows: skipped,
    })
}

fn read_jsonl_rows(path: &Path) -> Result<Vec<(usize, Option<WireTweet>)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let row_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<WireTweet>(&line) {
            Ok(w) => rows.push((row_no, Some(w))),
            Err(e) => {
                log::warn!("corpus row {row_no}: {e}");
                rows.push((row_no, None));
            }
        }
    }
    Ok(rows)
}

fn read_csv_rows(path: &Path) -> Result<Vec<(usize, Option<WireTweet>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::InvalidValue(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::InvalidValue(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
    };
    let text_col = col("text").ok_or_else(|| {
        Error::InvalidValue(format!("{}: corpus has no text column", path.display()))
    })?;
    let id_col = col("id");
    let location_col = col("location");
    let damage_col = col("damage");

    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row_no = idx + 2; // header is row 1
        match record {
            Ok(rec) => {
                let get = |i: Option<usize>| {
                    i.and_then(|i| rec.get(i))
                        .map(str::to_string)
                        .filter(|s| !s.trim().is_empty())
                };
                let damage = match get(damage_col) {
                    Some(raw) => match raw.trim().parse::<i64>() {
                        Ok(v) => Some(v),
                        Err(_) => {
                            log::warn!("corpus row {row_no}: damage {raw:?} is not an integer");
                            rows.push((row_no, None));
                            continue;
                        }
                    },
                    None => None,
                };
                rows.push((
                    row_no,
                    Some(WireTweet {
                        id: get(id_col),
                        text: rec.get(text_col).map(str::to_string),
                        location: get(location_col),
                        damage,
                        meta: None,
                    }),
                ));
            }
            Err(e) => {
                log::warn!("corpus row {row_no}: {e}");
                rows.push((row_no, None));
            }
        }
    }
    Ok(rows)
}

fn annotation_request(model: &str, prompt: String) -> Result<ChatRequest> {
    Ok(ChatRequest::new(
        model,
        vec![ChatMessage::user(prompt)],
        0.0,
        128,
    )?)
}

fn strip_code_fence(raw: &str) -> &str {
    let trimmed = raw.trim();
    for fence in ["```json", "```"] {
        if let Some(rest) = trimmed.strip_prefix(fence) {
            if let Some(inner) = rest.strip_suffix("```") {
                return inner.trim();
            }
        }
    }
    trimmed
}

/// Finds the first balanced JSON array in `raw`, respecting string escapes.
fn first_json_array(raw: &str) -> Option<&str> {
    let start = raw.find('[')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in raw[start..].char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start..start + i + c.len_utf8()]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Asks the annotation backend for every location referenced in a text.
/// Malformed replies yield an empty list with a warning.
pub fn extract_locations_text(
    text: &str,
    model: &str,
    backend: &dyn Backend,
) -> Result<Vec<String>> {
    let request = annotation_request(model, prompts::location_extraction_prompt(text))?;
    let response = backend.chat(&request)?;
    let cleaned = strip_code_fence(&response.content);
    let Some(array) = first_json_array(cleaned) else {
        log::warn!("location annotation is not a JSON array: {cleaned:?}");
        return Ok(Vec::new());
    };
    match serde_json::from_str::<Vec<serde_json::Value>>(array) {
        Ok(values) => Ok(values
            .into_iter()
            .filter_map(|v| v.as_str().map(|s| s.trim().to_string()))
            .filter(|s| !s.is_empty())
            .collect()),
        Err(e) => {
            log::warn!("malformed location annotation: {e}");
            Ok(Vec::new())
        }
    }
}

/// Asks the annotation backend for the locations in a tweet and returns the
/// first one, or `None` when the backend reports none or replies with
/// something that is not a JSON string array.
pub fn extract_location(
    tweet: &RawTweet,
    model: &str,
    backend: &dyn Backend,
) -> Result<Option<String>> {
    Ok(extract_locations_text(&tweet.text, model, backend)?
        .into_iter()
        .next())
}

fn parse_damage_reply(raw: &str) -> Option<i64> {
    let cleaned = strip_code_fence(raw).trim();
    if let Ok(v) = cleaned.parse::<i64>() {
        return Some(v);
    }
    // Fall back to the first digit run in the reply ("Damage level: 2").
    let start = cleaned.find(|c: char| c.is_ascii_digit())?;
    let digits: String = cleaned[start..]
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.parse::<i64>().ok()
}

/// Parses a damage-prediction reply into an in-range level. Returns `None`
/// for replies without an integer or with an out-of-range one.
pub fn parse_damage_level_reply(raw: &str) -> Option<DamageLevel> {
    let value = parse_damage_reply(raw)?;
    u8::try_from(value).ok().and_then(|v| DamageLevel::new(v).ok())
}

/// Asks the annotation backend for the damage level of a tweet text. Replies
/// that do not parse to an integer in 0..=3 yield `None`.
pub fn annotate_damage_text(
    text: &str,
    model: &str,
    backend: &dyn Backend,
) -> Result<Option<DamageLevel>> {
    let request = annotation_request(model, prompts::damage_annotation_prompt(text))?;
    let response = backend.chat(&request)?;
    if parse_damage_reply(&response.content).is_none() {
        log::warn!(
            "damage annotation {:?} is not an integer",
            response.content
        );
    }
    Ok(parse_damage_level_reply(&response.content))
}

pub fn annotate_damage(
    tweet: &RawTweet,
    model: &str,
    backend: &dyn Backend,
) -> Result<Option<DamageLevel>> {
    annotate_damage_text(&tweet.text, model, backend)
}

/// Where labels come from: the annotation backend, or columns already in
/// the corpus (in which case no backend call is made).
pub enum AnnotationMode<'a> {
    Backend {
        backend: &'a dyn Backend,
        model: &'a str,
    },
    PreLabeled,
}

/// Builds one label vector per tweet that yields both labels; tweets missing
/// either label are dropped. Input order is preserved.
pub fn prepare_label_vectors(
    tweets: &[RawTweet],
    mode: AnnotationMode<'_>,
) -> Result<Vec<TargetLabelVector>> {
    let mut vectors = Vec::new();
    for tweet in tweets {
        let labels = match &mode {
            AnnotationMode::Backend { backend, model } => {
                let location = extract_location(tweet, model, *backend)?;
                let damage = annotate_damage(tweet, model, *backend)?;
                location.zip(damage)
            }
            AnnotationMode::PreLabeled => {
                let damage = tweet
                    .damage
                    .and_then(|d| u8::try_from(d).ok())
                    .and_then(|d| DamageLevel::new(d).ok());
                if tweet.damage.is_some() && damage.is_none() {
                    log::warn!("tweet {}: pre-labeled damage out of range", tweet.id);
                }
                tweet.location.clone().zip(damage)
            }
        };
        if let Some((location, damage)) = labels {
            vectors.push(TargetLabelVector::new(location, damage)?.with_provenance(&tweet.id));
        }
    }
    if vectors.is_empty() {
        return Err(Error::EmptyInput(
            "no tweet yielded both a location and a damage level".into(),
        ));
    }
    Ok(vectors)
}

/// One labeled reference embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    #[serde(rename = "label")]
    pub damage_level: DamageLevel,
    pub vector: EmbeddingVector,
    pub text_hash: String,
}

/// Labeled embeddings of real tweets; the oracle for the damage-level check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStore {
    pub model_id: String,
    pub dimension: usize,
    pub entries: Vec<ReferenceEntry>,
}

impl ReferenceStore {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Serializes to a single JSON document. Vector components are written
    /// as decimal text with 9 significant digits.
    pub fn save(&self, path: &Path) -> Result<()> {
        let rounded = ReferenceStore {
            model_id: self.model_id.clone(),
            dimension: self.dimension,
            entries: self
                .entries
                .iter()
                .map(|e| ReferenceEntry {
                    damage_level: e.damage_level,
                    vector: EmbeddingVector::new(
                        e.vector
                            .values()
                            .iter()
                            .map(|v| format!("{v:.8e}").parse::<f64>().unwrap())
                            .collect(),
                    )
                    .expect("rounding preserves vector invariants"),
                    text_hash: e.text_hash.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_string(&rounded)
            .map_err(|e| Error::InvalidValue(format!("serialize reference store: {e}")))?;
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(json.as_bytes())
            .map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let store: ReferenceStore = serde_json::from_str(&raw).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        for entry in &store.entries {
            if entry.vector.dimension() != store.dimension {
                return Err(Error::DimensionMismatch {
                    expected: store.dimension,
                    actual: entry.vector.dimension(),
                });
            }
        }
        Ok(store)
    }
}

/// Embeds every labeled text and assembles the reference store. The
/// dimension is taken from the first vector; drift anywhere in the batch is
/// an error.
pub fn build_reference_store(
    labeled: &[(String, DamageLevel)],
    model: &str,
    backend: &dyn Backend,
) -> Result<ReferenceStore> {
    if labeled.is_empty() {
        return Err(Error::EmptyInput("no labeled texts to embed".into()));
    }
    let mut entries = Vec::with_capacity(labeled.len());
    let mut dimension = None;
    for chunk in labeled.chunks(EMBED_BATCH_SIZE) {
        let texts: Vec<String> = chunk.iter().map(|(t, _)| t.clone()).collect();
        let vectors = backend.embed(model, &texts)?;
        for ((text, level), vector) in chunk.iter().zip(vectors) {
            let dim = *dimension.get_or_insert_with(|| vector.dimension());
            if vector.dimension() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: vector.dimension(),
                });
            }
            entries.push(ReferenceEntry {
                damage_level: *level,
                vector,
                text_hash: stable_hash_hex(text.as_bytes()),
            });
        }
    }
    Ok(ReferenceStore {
        model_id: model.to_string(),
        dimension: dimension.expect("labeled is non-empty"),
        entries,
    })
}

#[derive(Deserialize)]
struct WireLabelVector {
    location: String,
    damage_level: u8,
    #[serde(default)]
    provenance: Option<String>,
}

/// Writes label vectors as JSONL, one per line.
pub fn save_label_vectors(vectors: &[TargetLabelVector], path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for v in vectors {
        let line = serde_json::to_string(v)
            .map_err(|e| Error::InvalidValue(format!("serialize label vector: {e}")))?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn load_label_vectors(path: &Path) -> Result<Vec<TargetLabelVector>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut vectors = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let wire: WireLabelVector =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        let level = DamageLevel::new(wire.damage_level).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        let mut vector =
            TargetLabelVector::new(wire.location, level).map_err(|e| Error::MalformedLine {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        if let Some(p) = wire.provenance {
            vector = vector.with_provenance(p);
        }
        vectors.push(vector);
    }
    Ok(vectors)
}
