//! Compliance evaluator: location correctness, kNN damage-level
//! correctness, and self-BLEU textual diversity.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{stable_hash_hex, Backend, EmbeddingVector};
use crate::error::{Error, Result};
use crate::generator::SyntheticTweet;
use crate::label_prep::{DamageLevel, ReferenceStore, TargetLabelVector};

/// The three boolean check results. A tweet is accepted iff all are true.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceVector {
    #[serde(rename = "c_loc")]
    pub location: bool,
    #[serde(rename = "c_dmg")]
    pub damage: bool,
    #[serde(rename = "c_div")]
    pub diversity: bool,
}

impl ComplianceVector {
    pub fn accepted(&self) -> bool {
        self.location && self.damage && self.diversity
    }

    pub fn checks_passed(&self) -> u8 {
        self.location as u8 + self.damage as u8 + self.diversity as u8
    }
}

/// Check results plus the diagnostic payloads the feedback and the metrics
/// need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceDetails {
    #[serde(flatten)]
    pub vector: ComplianceVector,
    pub predicted_damage: Option<DamageLevel>,
    pub self_bleu: Option<f64>,
    #[serde(rename = "bleu_threshold")]
    pub threshold: f64,
    pub reference_sample_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorConfig {
    /// Neighbors voting in the damage-level check.
    pub k: usize,
    /// Self-BLEU acceptance threshold; a candidate passes strictly below it.
    pub bleu_threshold: f64,
    /// Reference pool size sampled from the accepted corpus.
    pub bleu_sample_size: usize,
    pub rng_seed: u64,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        EvaluatorConfig {
            k: 5,
            bleu_threshold: 40.0,
            bleu_sample_size: 100,
            rng_seed: 0,
        }
    }
}

impl EvaluatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidValue("k must be >= 1".into()));
        }
        if !(0.0..=100.0).contains(&self.bleu_threshold) {
            return Err(Error::InvalidValue(format!(
                "bleu threshold must be in [0, 100], got {}",
                self.bleu_threshold
            )));
        }
        if self.bleu_sample_size < 1 {
            return Err(Error::InvalidValue("bleu sample size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Case-insensitive substring match of the target location in the tweet.
/// Both strings are case-folded whole; there is no tokenization.
pub fn check_location(tweet_text: &str, target_location: &str) -> bool {
    tweet_text
        .to_lowercase()
        .contains(&target_location.to_lowercase())
}

/// Classifies a query embedding by majority vote among the k most
/// cosine-similar reference entries (all entries when the store holds fewer
/// than k). Vote ties go to the label of the single most-similar entry among
/// the tied labels; similarity ties keep the earlier entry first.
pub fn knn_damage(
    query: &EmbeddingVector,
    store: &ReferenceStore,
    k: usize,
) -> Result<DamageLevel> {
    if store.is_empty() {
        return Err(Error::EmptyInput("reference store has no entries".into()));
    }
    if query.dimension() != store.dimension {
        return Err(Error::DimensionMismatch {
            expected: store.dimension,
            actual: query.dimension(),
        });
    }
    let mut ranked: Vec<(usize, f64)> = store
        .entries
        .iter()
        .enumerate()
        .map(|(i, entry)| {
            let sim = query
                .cosine_similarity(&entry.vector)
                .expect("dimensions already checked");
            (i, sim)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let voters = &ranked[..k.min(ranked.len())];

    let mut votes = [0usize; 4];
    for (idx, _) in voters {
        votes[store.entries[*idx].damage_level.get() as usize] += 1;
    }
    let top = *votes.iter().max().expect("four labels");
    let tied: Vec<u8> = (0u8..4)
        .filter(|l| votes[*l as usize] == top)
        .collect();
    if tied.len() == 1 {
        return DamageLevel::new(tied[0]);
    }
    for (idx, _) in voters {
        let label = store.entries[*idx].damage_level.get();
        if tied.contains(&label) {
            return DamageLevel::new(label);
        }
    }
    unreachable!("tied labels always appear among the voters");
}

/// Embeds the tweet with the store's embedding model and compares the kNN
/// verdict with the target level.
pub fn check_damage(
    tweet_text: &str,
    target: DamageLevel,
    store: &ReferenceStore,
    backend: &dyn Backend,
    cfg: &EvaluatorConfig,
) -> Result<(bool, DamageLevel)> {
    let vectors = backend.embed(&store.model_id, &[tweet_text.to_string()])?;
    let predicted = knn_damage(&vectors[0], store, cfg.k)?;
    Ok((predicted == target, predicted))
}

fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU of one candidate against a reference set on the 0..100 scale.
///
/// Modified n-gram precisions for n = 1..min(4, candidate length) with
/// reference-clipped counts; geometric mean; brevity penalty against the
/// closest-length reference (length ties resolved to the shorter one).
/// Any zero precision makes the score 0 — no smoothing, so only genuinely
/// overlapping texts score high.
pub fn self_bleu(candidate: &str, references: &[&str]) -> Result<f64> {
    let cand_tokens = tokenize(candidate);
    if cand_tokens.is_empty() {
        return Err(Error::EmptyInput("self-BLEU candidate is empty".into()));
    }
    if references.is_empty() {
        return Err(Error::EmptyInput("self-BLEU reference set is empty".into()));
    }
    let ref_tokens: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();

    let max_order = cand_tokens.len().min(4);
    let mut log_precision_sum = 0.0;
    for n in 1..=max_order {
        let cand_counts = ngram_counts(&cand_tokens, n);
        let mut clipped: HashMap<&[String], usize> = HashMap::new();
        for tokens in &ref_tokens {
            for (gram, count) in ngram_counts(tokens, n) {
                let entry = clipped.entry(gram).or_insert(0);
                *entry = (*entry).max(count);
            }
        }
        let total: usize = cand_counts.values().sum();
        let matched: usize = cand_counts
            .iter()
            .map(|(gram, count)| (*count).min(clipped.get(gram).copied().unwrap_or(0)))
            .sum();
        if matched == 0 {
            return Ok(0.0);
        }
        log_precision_sum += (matched as f64 / total as f64).ln();
    }

    let cand_len = cand_tokens.len();
    let closest_len = ref_tokens
        .iter()
        .map(|t| t.len())
        .min_by_key(|len| (cand_len.abs_diff(*len), *len))
        .expect("references non-empty");
    let brevity_penalty = if cand_len >= closest_len {
        1.0
    } else {
        (1.0 - closest_len as f64 / cand_len as f64).exp()
    };

    Ok(brevity_penalty * (log_precision_sum / max_order as f64).exp() * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiversityOutcome {
    pub passed: bool,
    pub score: f64,
    /// Number of references actually sampled from the corpus snapshot.
    pub sample_size: usize,
}

/// Scores the candidate against a uniform without-replacement sample of the
/// accepted corpus. An empty snapshot passes vacuously with score 0;
/// otherwise the candidate passes strictly below the threshold.
pub fn check_diversity<R: Rng>(
    tweet_text: &str,
    corpus_snapshot: &[String],
    cfg: &EvaluatorConfig,
    rng: &mut R,
) -> Result<DiversityOutcome> {
    if corpus_snapshot.is_empty() {
        return Ok(DiversityOutcome {
            passed: true,
            score: 0.0,
            sample_size: 0,
        });
    }
    let amount = cfg.bleu_sample_size.min(corpus_snapshot.len());
    let indices = rand::seq::index::sample(rng, corpus_snapshot.len(), amount);
    let references: Vec<&str> = indices
        .iter()
        .map(|i| corpus_snapshot[i].as_str())
        .collect();
    let score = self_bleu(tweet_text, &references)?;
    Ok(DiversityOutcome {
        passed: score < cfg.bleu_threshold,
        score,
        sample_size: amount,
    })
}

/// Per-evaluation RNG derived from (run seed, item id, attempt index), so
/// evaluations are reproducible and schedule-independent.
pub fn evaluation_rng(run_seed: u64, item_id: &str, attempt_index: u32) -> ChaCha8Rng {
    let material = format!("{run_seed}:{item_id}:{attempt_index}");
    let hash = stable_hash_hex(material.as_bytes());
    let seed = u64::from_str_radix(&hash, 16).expect("hex64 fits u64");
    ChaCha8Rng::seed_from_u64(seed)
}

/// Runs all three checks unconditionally (per-check pass rates need every
/// result) and assembles the details.
pub fn evaluate<R: Rng>(
    tweet: &SyntheticTweet,
    target: &TargetLabelVector,
    store: &ReferenceStore,
    corpus_snapshot: &[String],
    cfg: &EvaluatorConfig,
    backend: &dyn Backend,
    rng: &mut R,
) -> Result<ComplianceDetails> {
    let location = check_location(&tweet.text, target.location());
    let (damage_ok, predicted) =
        check_damage(&tweet.text, target.damage_level(), store, backend, cfg)?;
    let diversity = check_diversity(&tweet.text, corpus_snapshot, cfg, rng)?;
    Ok(ComplianceDetails {
        vector: ComplianceVector {
            location,
            damage: damage_ok,
            diversity: diversity.passed,
        },
        predicted_damage: Some(predicted),
        self_bleu: Some(diversity.score),
        threshold: cfg.bleu_threshold,
        reference_sample_size: diversity.sample_size,
    })
}
