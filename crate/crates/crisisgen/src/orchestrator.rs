//! Run loop: per-item generate/evaluate/feedback rounds over a set of
//! target label vectors, with audit logging, checkpointing, and resume.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, RwLock};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, evaluation_rng, ComplianceDetails, EvaluatorConfig};
use crate::feedback::render_feedback;
use crate::generator::{build_prompt, Generator};
use crate::label_prep::{DamageLevel, ReferenceStore, TargetLabelVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concurrency {
    Sequential,
    Parallel { workers: usize },
}

/// Parameters of one generation run. `rounds` counts feedback rounds, so a
/// run makes at most `rounds + 1` attempts per item.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub rounds: u32,
    pub temperature: f64,
    pub evaluator: EvaluatorConfig,
    pub parse_retries: u32,
    pub seed: u64,
    pub concurrency: Concurrency,
    pub event_name: String,
    pub generator_model: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            rounds: 3,
            temperature: 1.0,
            evaluator: EvaluatorConfig::default(),
            parse_retries: 2,
            seed: 0,
            concurrency: Concurrency::Sequential,
            event_name: "event".into(),
            generator_model: "generator".into(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 || !self.temperature.is_finite() {
            return Err(Error::InvalidValue(format!(
                "temperature must be finite and > 0, got {}",
                self.temperature
            )));
        }
        self.evaluator.validate()
    }

    pub fn max_attempts(&self) -> u32 {
        self.rounds + 1
    }
}

mod rfc3339 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(dt: &DateTime<Utc>, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&dt.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&raw)
            .map(|dt| dt.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

/// Record timestamps come from here so replay-backed runs can be
/// byte-reproducible. Timestamps are truncated to whole seconds, keeping the
/// persisted form lossless.
#[derive(Debug, Clone, Copy)]
pub enum Clock {
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    /// The Unix epoch; the conventional fixed clock for replay runs.
    pub fn fixed_epoch() -> Clock {
        Clock::Fixed(DateTime::from_timestamp(0, 0).expect("epoch is valid"))
    }

    fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => {
                let now = Utc::now();
                DateTime::from_timestamp(now.timestamp(), 0).expect("timestamp in range")
            }
            Clock::Fixed(t) => *t,
        }
    }
}

/// One accepted synthetic tweet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub event: String,
    pub tweet_text: String,
    pub target_location: String,
    pub target_damage_level: DamageLevel,
    pub accepted_round: u32,
    pub temperature: f64,
    pub generator_model: String,
    #[serde(with = "rfc3339")]
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    Rejected,
    GenerationFailed,
    EvaluationFailed,
}

/// One generation attempt, whatever its outcome. The full per-attempt
/// history feeds the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub item_id: String,
    pub attempt_index: u32,
    pub tweet_text: Option<String>,
    pub details: Option<ComplianceDetails>,
    pub outcome: Outcome,
}

/// Texts accepted so far in this run; the diversity check's reference pool.
/// Snapshot reads and single-writer pushes keep parallel runs consistent.
#[derive(Debug, Clone, Default)]
pub struct AcceptedCorpus {
    texts: Arc<RwLock<Vec<String>>>,
}

impl AcceptedCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_texts(texts: Vec<String>) -> Self {
        AcceptedCorpus {
            texts: Arc::new(RwLock::new(texts)),
        }
    }

    pub fn snapshot(&self) -> Vec<String> {
        self.texts.read().unwrap().clone()
    }

    pub fn push(&self, text: String) {
        self.texts.write().unwrap().push(text);
    }

    pub fn len(&self) -> usize {
        self.texts.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug)]
pub struct ItemOutcome {
    pub record: Option<DatasetRecord>,
    pub audit: Vec<AuditRecord>,
}

#[derive(Debug, Default)]
pub struct RunOutput {
    pub records: Vec<DatasetRecord>,
    pub audit: Vec<AuditRecord>,
}

impl RunOutput {
    pub fn accepted(&self) -> usize {
        self.records.len()
    }
}

/// Output locations for a checkpointed run. The audit file doubles as the
/// checkpoint: resume scans it for completed items.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dataset: PathBuf,
    pub audit: PathBuf,
}

pub fn item_id_for_index(index: usize) -> String {
    format!("item-{:05}", index + 1)
}

/// Errors that invalidate the whole run rather than one attempt: transport
/// failures after retries and replay fixture misses/exhaustion.
fn halts_run(err: &Error) -> bool {
    matches!(
        err,
        Error::Backend(
            BackendError::Transport { .. }
                | BackendError::FixtureMiss { .. }
                | BackendError::FixtureExhausted { .. }
                | BackendError::FixtureFile { .. }
        )
    )
}

pub struct Orchestrator<'a> {
    cfg: &'a RunConfig,
    store: &'a ReferenceStore,
    backend: &'a dyn Backend,
    clock: Clock,
}

impl<'a> Orchestrator<'a> {
    pub fn new(cfg: &'a RunConfig, store: &'a ReferenceStore, backend: &'a dyn Backend) -> Self {
        Orchestrator {
            cfg,
            store,
            backend,
            clock: Clock::System,
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    /// Runs the full attempt loop for one label vector. Attempt 0 is the
    /// initial generation; every rejection appends feedback and retries
    /// until acceptance or the round budget is spent. Failed generations and
    /// failed evaluations consume their attempt slot without contributing
    /// feedback.
    pub fn run_item(
        &self,
        item_id: &str,
        target: &TargetLabelVector,
        corpus: &AcceptedCorpus,
    ) -> Result<ItemOutcome> {
        let generator = Generator::new(self.cfg.generator_model.clone())
            .with_parse_retries(self.cfg.parse_retries);
        let mut prompt = build_prompt(target);
        let mut audit = Vec::new();

        for attempt in 0..self.cfg.max_attempts() {
            let tweet = match generator.generate(
                &prompt,
                target,
                attempt,
                self.cfg.temperature,
                self.backend,
            ) {
                Ok(tweet) => tweet,
                Err(err @ Error::GenerationFailed { .. }) => {
                    log::warn!("{item_id} attempt {attempt}: {err}");
                    audit.push(AuditRecord {
                        item_id: item_id.to_string(),
                        attempt_index: attempt,
                        tweet_text: None,
                        details: None,
                        outcome: Outcome::GenerationFailed,
                    });
                    continue;
                }
                Err(err) => return Err(err),
            };

            let snapshot = corpus.snapshot();
            let mut rng = evaluation_rng(self.cfg.seed, item_id, attempt);
            let details = match evaluate(
                &tweet,
                target,
                self.store,
                &snapshot,
                &self.cfg.evaluator,
                self.backend,
                &mut rng,
            ) {
                Ok(details) => details,
                Err(err) if halts_run(&err) => return Err(err),
                Err(err) => {
                    log::warn!("{item_id} attempt {attempt}: evaluation failed: {err}");
                    audit.push(AuditRecord {
                        item_id: item_id.to_string(),
                        attempt_index: attempt,
                        tweet_text: Some(tweet.text),
                        details: None,
                        outcome: Outcome::EvaluationFailed,
                    });
                    continue;
                }
            };

            if details.vector.accepted() {
                corpus.push(tweet.text.clone());
                audit.push(AuditRecord {
                    item_id: item_id.to_string(),
                    attempt_index: attempt,
                    tweet_text: Some(tweet.text.clone()),
                    details: Some(details),
                    outcome: Outcome::Accepted,
                });
                let record = DatasetRecord {
                    id: item_id.to_string(),
                    event: self.cfg.event_name.clone(),
                    tweet_text: tweet.text,
                    target_location: target.location().to_string(),
                    target_damage_level: target.damage_level(),
                    accepted_round: attempt,
                    temperature: self.cfg.temperature,
                    generator_model: self.cfg.generator_model.clone(),
                    created_at: self.clock.now(),
                };
                return Ok(ItemOutcome {
                    record: Some(record),
                    audit,
                });
            }

            let feedback = render_feedback(&tweet, &details, target)?;
            audit.push(AuditRecord {
                item_id: item_id.to_string(),
                attempt_index: attempt,
                tweet_text: Some(tweet.text),
                details: Some(details),
                outcome: Outcome::Rejected,
            });
            prompt.push_feedback(feedback);
        }

        Ok(ItemOutcome {
            record: None,
            audit,
        })
    }

    /// Runs every label vector against a caller-provided corpus (normally
    /// empty; resumed runs seed it with previously accepted texts).
    pub fn run_items(
        &self,
        targets: &[TargetLabelVector],
        corpus: &AcceptedCorpus,
    ) -> Result<RunOutput> {
        let items: Vec<(String, &TargetLabelVector)> = targets
            .iter()
            .enumerate()
            .map(|(i, y)| (item_id_for_index(i), y))
            .collect();
        let mut outcomes: BTreeMap<usize, ItemOutcome> = BTreeMap::new();
        self.drive(&items, corpus, |idx, outcome| {
            outcomes.insert(idx, outcome);
            Ok(())
        })?;
        let mut output = RunOutput::default();
        for (_, outcome) in outcomes {
            output.audit.extend(outcome.audit);
            if let Some(record) = outcome.record {
                output.records.push(record);
            }
        }
        Ok(output)
    }

    /// In-memory run over a fresh, empty corpus.
    pub fn run_dataset(&self, targets: &[TargetLabelVector]) -> Result<RunOutput> {
        if targets.is_empty() {
            return Err(Error::EmptyInput("no target label vectors".into()));
        }
        self.cfg.validate()?;
        self.run_items(targets, &AcceptedCorpus::new())
    }

    /// Checkpointed run: dataset and audit lines are appended after every
    /// item, so a halted run keeps everything completed so far. With
    /// `resume`, items already completed in the audit file are skipped and
    /// their accepted texts seed the diversity corpus.
    pub fn run_dataset_to_files(
        &self,
        targets: &[TargetLabelVector],
        paths: &RunPaths,
        resume: bool,
    ) -> Result<RunOutput> {
        if targets.is_empty() {
            return Err(Error::EmptyInput("no target label vectors".into()));
        }
        self.cfg.validate()?;

        let mut completed: BTreeSet<String> = BTreeSet::new();
        let mut kept_audit: Vec<AuditRecord> = Vec::new();
        let mut kept_records: Vec<DatasetRecord> = Vec::new();
        if resume && paths.audit.exists() {
            let previous = load_audit(&paths.audit)?;
            let mut by_item: BTreeMap<String, Vec<AuditRecord>> = BTreeMap::new();
            for record in previous {
                by_item.entry(record.item_id.clone()).or_default().push(record);
            }
            for (item_id, records) in by_item {
                let done = records.iter().any(|r| r.outcome == Outcome::Accepted)
                    || records.len() >= self.cfg.max_attempts() as usize;
                if done {
                    completed.insert(item_id);
                    kept_audit.extend(records);
                }
                // Partial items are dropped from the rewritten checkpoint and
                // re-run from attempt 0.
            }
            if paths.dataset.exists() {
                kept_records = load_dataset(&paths.dataset)?
                    .into_iter()
                    .filter(|r| completed.contains(&r.id))
                    .collect();
            }
        }
        persist_audit(&kept_audit, &paths.audit)?;
        persist_dataset(&kept_records, &paths.dataset)?;

        let corpus =
            AcceptedCorpus::with_texts(kept_records.iter().map(|r| r.tweet_text.clone()).collect());

        let items: Vec<(String, &TargetLabelVector)> = targets
            .iter()
            .enumerate()
            .map(|(i, y)| (item_id_for_index(i), y))
            .filter(|(id, _)| !completed.contains(id))
            .collect();

        let mut audit_file = std::fs::OpenOptions::new()
            .append(true)
            .open(&paths.audit)
            .map_err(|e| Error::io(&paths.audit, e))?;
        let mut dataset_file = std::fs::OpenOptions::new()
            .append(true)
            .open(&paths.dataset)
            .map_err(|e| Error::io(&paths.dataset, e))?;

        let mut outcomes: BTreeMap<String, ItemOutcome> = BTreeMap::new();
        let drive_result = self.drive(&items, &corpus, |idx, outcome| {
            for record in &outcome.audit {
                append_jsonl_line(&mut audit_file, record, &paths.audit)?;
            }
            if let Some(record) = &outcome.record {
                append_jsonl_line(&mut dataset_file, record, &paths.dataset)?;
            }
            outcomes.insert(items[idx].0.clone(), outcome);
            Ok(())
        });
        drive_result?;

        let mut output = RunOutput {
            records: kept_records,
            audit: kept_audit,
        };
        for (_, outcome) in outcomes {
            output.audit.extend(outcome.audit);
            if let Some(record) = outcome.record {
                output.records.push(record);
            }
        }
        output.records.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(output)
    }

    fn drive<F>(
        &self,
        items: &[(String, &TargetLabelVector)],
        corpus: &AcceptedCorpus,
        mut on_item: F,
    ) -> Result<()>
    where
        F: FnMut(usize, ItemOutcome) -> Result<()>,
    {
        match self.cfg.concurrency {
            Concurrency::Sequential => {
                for (idx, (item_id, target)) in items.iter().enumerate() {
                    let outcome = self.run_item(item_id, target, corpus)?;
                    on_item(idx, outcome)?;
                }
                Ok(())
            }
            Concurrency::Parallel { workers } => {
                let worker_count = workers.max(1).min(items.len().max(1));
                let next = AtomicUsize::new(0);
                let stop = AtomicBool::new(false);
                let (tx, rx) = mpsc::channel::<(usize, Result<ItemOutcome>)>();
                std::thread::scope(|scope| {
                    for _ in 0..worker_count {
                        let tx = tx.clone();
                        let next = &next;
                        let stop = &stop;
                        scope.spawn(move || loop {
                            if stop.load(Ordering::Relaxed) {
                                break;
                            }
                            let idx = next.fetch_add(1, Ordering::Relaxed);
                            if idx >= items.len() {
                                break;
                            }
                            let (item_id, target) = &items[idx];
                            let result = self.run_item(item_id, target, corpus);
                            let failed = result.is_err();
                            if tx.send((idx, result)).is_err() || failed {
                                stop.store(true, Ordering::Relaxed);
                                break;
                            }
                        });
                    }
                    drop(tx);
                    let mut first_err: Option<Error> = None;
                    for (idx, result) in rx {
                        match result {
                            Ok(outcome) if first_err.is_none() => {
                                if let Err(e) = on_item(idx, outcome) {
                                    stop.store(true, Ordering::Relaxed);
                                    first_err = Some(e);
                                }
                            }
                            Ok(_) => {}
                            Err(e) => {
                                stop.store(true, Ordering::Relaxed);
                                if first_err.is_none() {
                                    first_err = Some(e);
                                }
                            }
                        }
                    }
                    match first_err {
                        Some(e) => Err(e),
                        None => Ok(()),
                    }
                })
            }
        }
    }
}

fn append_jsonl_line<T: Serialize>(file: &mut std::fs::File, value: &T, path: &Path) -> Result<()> {
    let line = serde_json::to_string(value)
        .map_err(|e| Error::InvalidValue(format!("serialize record: {e}")))?;
    writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn persist_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for record in records {
        append_jsonl_line(&mut file, record, path)?;
    }
    Ok(())
}

fn load_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let record: T = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn persist_dataset(records: &[DatasetRecord], path: &Path) -> Result<()> {
    persist_jsonl(records, path)
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    load_jsonl(path)
}

pub fn persist_audit(records: &[AuditRecord], path: &Path) -> Result<()> {
    persist_jsonl(records, path)
}

pub fn load_audit(path: &Path) -> Result<Vec<AuditRecord>> {
    load_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ChatMessage, ChatRequest, EmbeddingVector, LoggedRequest, ReplayFixture};
    use crate::evaluator::ComplianceVector;
    use crate::generator::Prompt;
    use crate::label_prep::ReferenceEntry;

    fn level(l: u8) -> DamageLevel {
        DamageLevel::new(l).unwrap()
    }

    fn target(location: &str, l: u8) -> TargetLabelVector {
        TargetLabelVector::new(location, level(l)).unwrap()
    }

    /// Two well-separated clusters: label 1 near (1, 0), label 2 near (0, 1).
    fn two_cluster_store() -> ReferenceStore {
        let mut entries = Vec::new();
        for i in 0..5 {
            let x = 1.0 - i as f64 * 0.01;
            entries.push(ReferenceEntry {
                damage_level: level(1),
                vector: EmbeddingVector::new(vec![x, 1.0 - x]).unwrap(),
                text_hash: String::new(),
            });
            entries.push(ReferenceEntry {
                damage_level: level(2),
                vector: EmbeddingVector::new(vec![1.0 - x, x]).unwrap(),
                text_hash: String::new(),
            });
        }
        ReferenceStore {
            model_id: "emb".into(),
            dimension: 2,
            entries,
        }
    }

    fn chat_request(cfg: &RunConfig, prompt: &Prompt) -> ChatRequest {
        ChatRequest::new(
            cfg.generator_model.clone(),
            vec![ChatMessage::user(prompt.render())],
            cfg.temperature,
            256,
        )
        .unwrap()
    }

    fn tweet_json(text: &str) -> String {
        serde_json::json!({ "synthetic_tweet_text": text }).to_string()
    }

    fn test_cfg() -> RunConfig {
        RunConfig {
            seed: 7,
            event_name: "test-event".into(),
            generator_model: "gen".into(),
            ..RunConfig::default()
        }
    }

    /// Keyed fixture encoding the correction pattern: attempt 0 omits the
    /// location, attempt 1 fixes it.
    fn correction_fixture(cfg: &RunConfig, y: &TargetLabelVector) -> ReplayFixture {
        let mut fixture = ReplayFixture::keyed();
        let t0 = "Strong shaking felt downtown tonight, stay safe";
        let t1 = "Strong shaking felt in Napa tonight, stay safe everyone";

        let prompt0 = build_prompt(y);
        fixture.push_chat(&chat_request(cfg, &prompt0), tweet_json(t0));
        fixture.push_embedding("emb", t0, &[1.0, 0.0]);

        // Attempt 0 is rejected for location only, so the attempt-1 prompt
        // carries exactly that feedback line.
        let details = ComplianceDetails {
            vector: ComplianceVector {
                location: false,
                damage: true,
                diversity: true,
            },
            predicted_damage: Some(level(1)),
            self_bleu: Some(0.0),
            threshold: 40.0,
            reference_sample_size: 0,
        };
        let tweet0 = crate::generator::SyntheticTweet {
            text: t0.to_string(),
            target: y.clone(),
            attempt_index: 0,
            temperature: cfg.temperature,
        };
        let mut prompt1 = build_prompt(y);
        prompt1.push_feedback(render_feedback(&tweet0, &details, y).unwrap());
        fixture.push_chat(&chat_request(cfg, &prompt1), tweet_json(t1));
        fixture.push_embedding("emb", t1, &[1.0, 0.0]);
        fixture
    }

    #[test]
    fn item_accepted_after_location_correction() {
        let cfg = test_cfg();
        let store = two_cluster_store();
        let y = target("Napa", 1);
        let backend = correction_fixture(&cfg, &y).into_backend().unwrap();
        let orch = Orchestrator::new(&cfg, &store, &backend).with_clock(Clock::fixed_epoch());
        let outcome = orch.run_item("item-00001", &y, &AcceptedCorpus::new()).unwrap();

        let record = outcome.record.expect("accepted");
        assert_eq!(record.accepted_round, 1);
        assert_eq!(record.event, "test-event");
        assert_eq!(outcome.audit.len(), 2);
        assert_eq!(outcome.audit[0].outcome, Outcome::Rejected);
        assert!(!outcome.audit[0].details.as_ref().unwrap().vector.location);
        assert_eq!(outcome.audit[1].outcome, Outcome::Accepted);
    }

    #[test]
    fn exhausted_item_yields_no_record_and_full_audit() {
        let cfg = test_cfg();
        let store = two_cluster_store();
        let y = target("Napa", 1);
        // Every attempt produces a tweet without the location; damage and
        // diversity pass.
        let mut fixture = ReplayFixture::sequence();
        for attempt in 0..cfg.max_attempts() {
            let text = format!("tremor report number {attempt} from the field");
            fixture.push_raw(None, tweet_json(&text));
            fixture.push_raw(None, "[1.0, 0.0]");
        }
        let backend = fixture.into_backend().unwrap();
        let orch = Orchestrator::new(&cfg, &store, &backend);
        let outcome = orch.run_item("item-00001", &y, &AcceptedCorpus::new()).unwrap();
        assert!(outcome.record.is_none());
        assert_eq!(outcome.audit.len(), 4);
        assert!(outcome.audit.iter().all(|a| a.outcome == Outcome::Rejected));
        let attempts: Vec<u32> = outcome.audit.iter().map(|a| a.attempt_index).collect();
        assert_eq!(attempts, [0, 1, 2, 3]);

        // After r rejections the prompt carries exactly r feedback lines.
        let log = backend.request_log();
        let last_chat = log
            .iter()
            .filter_map(|r| match r {
                LoggedRequest::Chat(req) => Some(req),
                _ => None,
            })
            .next_back()
            .unwrap();
        let feedback_lines = last_chat.messages[0]
            .content
            .matches("Generated tweet:")
            .count();
        assert_eq!(feedback_lines, 3);
    }

    #[test]
    fn evaluation_failure_consumes_slot_and_continues() {
        let cfg = RunConfig {
            rounds: 1,
            ..test_cfg()
        };
        let store = two_cluster_store();
        let y = target("Napa", 1);
        let mut fixture = ReplayFixture::sequence();
        // Attempt 0: the embedding violates the all-zero invariant.
        fixture.push_raw(None, tweet_json("Napa report one aaa bbb"));
        fixture.push_raw(None, "[0.0, 0.0]");
        // Attempt 1 succeeds.
        fixture.push_raw(None, tweet_json("Napa report two ccc ddd"));
        fixture.push_raw(None, "[1.0, 0.0]");
        let backend = fixture.into_backend().unwrap();
        let orch = Orchestrator::new(&cfg, &store, &backend);
        let outcome = orch.run_item("item-00001", &y, &AcceptedCorpus::new()).unwrap();
        assert_eq!(outcome.audit[0].outcome, Outcome::EvaluationFailed);
        assert!(outcome.audit[0].tweet_text.is_some());
        assert!(outcome.audit[0].details.is_none());
        assert_eq!(outcome.audit[1].outcome, Outcome::Accepted);
        assert_eq!(outcome.record.unwrap().accepted_round, 1);
    }

    #[test]
    fn zero_rounds_accepts_on_first_attempt() {
        let cfg = RunConfig {
            rounds: 0,
            ..test_cfg()
        };
        let store = two_cluster_store();
        let y = target("Napa", 1);
        let mut fixture = ReplayFixture::sequence();
        fixture.push_raw(None, tweet_json("Napa holding steady after the quake"));
        fixture.push_raw(None, "[1.0, 0.0]");
        let backend = fixture.into_backend().unwrap();
        let orch = Orchestrator::new(&cfg, &store, &backend);
        let outcome = orch.run_item("item-00001", &y, &AcceptedCorpus::new()).unwrap();
        assert_eq!(outcome.record.unwrap().accepted_round, 0);
    }

    #[test]
    fn generation_failure_consumes_slot_without_feedback() {
        let cfg = RunConfig {
            rounds: 1,
            ..test_cfg()
        };
        let store = two_cluster_store();
        let y = target("Napa", 1);
        let mut fixture = ReplayFixture::sequence();
        // Attempt 0: three unparseable replies exhaust the parse budget.
        for _ in 0..3 {
            fixture.push_raw(None, "not json at all");
        }
        // Attempt 1 succeeds.
        fixture.push_raw(None, tweet_json("Napa shaken but standing"));
        fixture.push_raw(None, "[1.0, 0.0]");
        let backend = fixture.into_backend().unwrap();
        let orch = Orchestrator::new(&cfg, &store, &backend);
        let outcome = orch.run_item("item-00001", &y, &AcceptedCorpus::new()).unwrap();

        assert_eq!(outcome.audit[0].outcome, Outcome::GenerationFailed);
        assert!(outcome.audit[0].tweet_text.is_none());
        assert_eq!(outcome.audit[1].outcome, Outcome::Accepted);
        assert_eq!(outcome.record.unwrap().accepted_round, 1);

        // The attempt-1 prompt carries no feedback: generation failures have
        // no tweet to critique.
        let log = backend.request_log();
        let last_chat = log
            .iter()
            .filter_map(|r| match r {
                LoggedRequest::Chat(req) => Some(req),
                _ => None,
            })
            .next_back()
            .unwrap();
        let base = build_prompt(&y).render();
        assert_eq!(last_chat.messages[0].content, base);
    }

    #[test]
    fn run_dataset_collects_accepted_subset_and_full_audit() {
        let cfg = RunConfig {
            rounds: 1,
            ..test_cfg()
        };
        let store = two_cluster_store();
        let targets = vec![target("Napa", 1), target("Sonoma", 1), target("Lima", 1)];
        let mut fixture = ReplayFixture::sequence();
        // Items 1 and 3 accept at round 0; item 2 misses its location on
        // both attempts.
        fixture.push_raw(None, tweet_json("Napa all clear aa1 aa2"));
        fixture.push_raw(None, "[1.0, 0.0]");
        for round in 0..2 {
            fixture.push_raw(None, tweet_json(&format!("missing place bb{round} cc{round}")));
            fixture.push_raw(None, "[1.0, 0.0]");
        }
        fixture.push_raw(None, tweet_json("Lima shaken dd1 dd2"));
        fixture.push_raw(None, "[1.0, 0.0]");
        let backend = fixture.into_backend().unwrap();
        let orch = Orchestrator::new(&cfg, &store, &backend);
        let output = orch.run_dataset(&targets).unwrap();

        assert_eq!(output.records.len(), 2);
        let ids: Vec<&str> = output.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["item-00001", "item-00003"]);
        // Audit covers every attempt: 1 + 2 + 1.
        assert_eq!(output.audit.len(), 4);
    }

    #[test]
    fn run_dataset_requires_items() {
        let cfg = test_cfg();
        let store = two_cluster_store();
        let backend = ReplayFixture::keyed().into_backend().unwrap();
        let orch = Orchestrator::new(&cfg, &store, &backend);
        assert!(matches!(
            orch.run_dataset(&[]),
            Err(Error::EmptyInput(_))
        ));
    }

    fn accept_all_fixture(cfg: &RunConfig, targets: &[TargetLabelVector]) -> ReplayFixture {
        let mut fixture = ReplayFixture::keyed();
        for (i, y) in targets.iter().enumerate() {
            let text = format!(
                "{} report {i}: unique wording {}",
                y.location(),
                ["alpha", "bravo", "charlie", "delta"][i % 4]
            );
            let prompt = build_prompt(y);
            fixture.push_chat(&chat_request(cfg, &prompt), tweet_json(&text));
            fixture.push_embedding("emb", &text, &[1.0, 0.0]);
        }
        fixture
    }

    #[test]
    fn sequential_run_is_deterministic_end_to_end() {
        let cfg = test_cfg();
        let store = two_cluster_store();
        let targets = vec![target("Napa", 1), target("Sonoma", 1)];
        let dir = tempfile::tempdir().unwrap();

        let run = |suffix: &str| {
            let backend = accept_all_fixture(&cfg, &targets).into_backend().unwrap();
            let orch = Orchestrator::new(&cfg, &store, &backend).with_clock(Clock::fixed_epoch());
            let paths = RunPaths {
                dataset: dir.path().join(format!("dataset-{suffix}.jsonl")),
                audit: dir.path().join(format!("audit-{suffix}.jsonl")),
            };
            orch.run_dataset_to_files(&targets, &paths, false).unwrap();
            (
                std::fs::read(&paths.dataset).unwrap(),
                std::fs::read(&paths.audit).unwrap(),
            )
        };
        let (d1, a1) = run("one");
        let (d2, a2) = run("two");
        assert_eq!(d1, d2);
        assert_eq!(a1, a2);
        assert!(!d1.is_empty());
    }

    #[test]
    fn resume_skips_completed_items() {
        let cfg = test_cfg();
        let store = two_cluster_store();
        let targets = vec![target("Napa", 1), target("Sonoma", 1), target("Vallejo", 1)];
        let dir = tempfile::tempdir().unwrap();
        let paths = RunPaths {
            dataset: dir.path().join("dataset.jsonl"),
            audit: dir.path().join("audit.jsonl"),
        };

        // First run: fixture knows items 1-2 only, so the run halts at item 3
        // with the checkpoint intact.
        let partial = accept_all_fixture(&cfg, &targets[..2]).into_backend().unwrap();
        let orch = Orchestrator::new(&cfg, &store, &partial).with_clock(Clock::fixed_epoch());
        let err = orch.run_dataset_to_files(&targets, &paths, false).unwrap_err();
        assert!(halts_run(&err));
        assert_eq!(load_dataset(&paths.dataset).unwrap().len(), 2);

        // Resume with the full fixture: only item 3 runs.
        let full = accept_all_fixture(&cfg, &targets).into_backend().unwrap();
        let orch = Orchestrator::new(&cfg, &store, &full).with_clock(Clock::fixed_epoch());
        let output = orch.run_dataset_to_files(&targets, &paths, true).unwrap();
        assert_eq!(output.records.len(), 3);
        assert_eq!(full.chat_calls(), 1);
        assert_eq!(full.embed_calls(), 1);

        let audit = load_audit(&paths.audit).unwrap();
        let items: BTreeSet<&str> = audit.iter().map(|a| a.item_id.as_str()).collect();
        assert_eq!(items.len(), 3);
    }

    #[test]
    fn parallel_run_accepts_the_same_set() {
        let store = two_cluster_store();
        let targets = vec![
            target("Napa", 1),
            target("Sonoma", 1),
            target("Vallejo", 1),
            target("Fairfield", 1),
        ];
        let sequential_cfg = test_cfg();
        let parallel_cfg = RunConfig {
            concurrency: Concurrency::Parallel { workers: 3 },
            ..test_cfg()
        };

        let run = |cfg: &RunConfig| {
            let backend = accept_all_fixture(cfg, &targets).into_backend().unwrap();
            let orch = Orchestrator::new(cfg, &store, &backend);
            let mut ids: Vec<String> = orch
                .run_dataset(&targets)
                .unwrap()
                .records
                .into_iter()
                .map(|r| r.id)
                .collect();
            ids.sort();
            ids
        };
        assert_eq!(run(&sequential_cfg), run(&parallel_cfg));
    }

    #[test]
    fn dataset_round_trip_and_malformed_line() {
        let record = DatasetRecord {
            id: "item-00001".into(),
            event: "ev".into(),
            tweet_text: "text".into(),
            target_location: "Napa".into(),
            target_damage_level: level(1),
            accepted_round: 0,
            temperature: 1.0,
            generator_model: "gen".into(),
            created_at: DateTime::from_timestamp(0, 0).unwrap(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        persist_dataset(&[record.clone(), record.clone()], &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0], record);

        let mut raw = std::fs::read_to_string(&path).unwrap();
        raw.push_str("{truncated\n");
        std::fs::write(&path, raw).unwrap();
        match load_dataset(&path) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed line, got {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        persist_dataset(&[], &path).unwrap();
        assert!(load_dataset(&path).unwrap().is_empty());
    }

    #[test]
    fn dataset_jsonl_uses_the_pinned_field_names() {
        let record = DatasetRecord {
            id: "item-00001".into(),
            event: "ev".into(),
            tweet_text: "text".into(),
            target_location: "Napa".into(),
            target_damage_level: level(2),
            accepted_round: 1,
            temperature: 1.4,
            generator_model: "gen".into(),
            created_at: DateTime::from_timestamp(0, 0).unwrap(),
        };
        let line = serde_json::to_string(&record).unwrap();
        let value: serde_json::Value = serde_json::from_str(&line).unwrap();
        for field in [
            "id",
            "event",
            "tweet_text",
            "target_location",
            "target_damage_level",
            "accepted_round",
            "temperature",
            "generator_model",
            "created_at",
        ] {
            assert!(value.get(field).is_some(), "missing field {field}");
        }
        assert_eq!(value["created_at"], "1970-01-01T00:00:00Z");
    }
}
