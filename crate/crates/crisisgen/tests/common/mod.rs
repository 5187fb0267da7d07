//! Independent oracles and fixture helpers shared by the integration tests.
//!
//! The oracles deliberately avoid the crate's own code paths: n-gram counts
//! come from linear window scans with `Vec` equality instead of hash maps,
//! and neighbor selection is a repeated max-scan instead of a sort.

#![allow(dead_code)]

use crisisgen::backend::{ChatMessage, ChatRequest};
use crisisgen::generator::Prompt;
use crisisgen::orchestrator::RunConfig;

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn window_count(haystack: &[String], gram: &[String]) -> usize {
    if haystack.len() < gram.len() {
        return 0;
    }
    haystack.windows(gram.len()).filter(|w| *w == gram).count()
}

/// Brute-force BLEU on the 0..100 scale: clipped modified n-gram precisions
/// for n = 1..min(4, candidate length), geometric mean, brevity penalty
/// against the closest-length reference (ties to the shorter), zero on any
/// zero precision.
pub fn bleu_oracle(candidate: &str, references: &[&str]) -> f64 {
    let cand = tokens(candidate);
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokens(r)).collect();
    assert!(!cand.is_empty() && !refs.is_empty());

    let max_order = cand.len().min(4);
    let mut log_sum = 0.0;
    for n in 1..=max_order {
        let windows: Vec<&[String]> = cand.windows(n).collect();
        let total = windows.len();
        let mut matched = 0usize;
        let mut seen: Vec<&[String]> = Vec::new();
        for gram in &windows {
            if seen.iter().any(|g| g == gram) {
                continue;
            }
            seen.push(gram);
            let in_candidate = windows.iter().filter(|w| *w == gram).count();
            let clip = refs
                .iter()
                .map(|r| window_count(r, gram))
                .max()
                .unwrap_or(0);
            matched += in_candidate.min(clip);
        }
        if matched == 0 {
            return 0.0;
        }
        log_sum += (matched as f64 / total as f64).ln();
    }

    let cand_len = cand.len();
    let mut closest_len = usize::MAX;
    let mut best_diff = usize::MAX;
    for r in &refs {
        let diff = cand_len.abs_diff(r.len());
        if diff < best_diff || (diff == best_diff && r.len() < closest_len) {
            best_diff = diff;
            closest_len = r.len();
        }
    }
    let bp = if cand_len >= closest_len {
        1.0
    } else {
        (1.0 - closest_len as f64 / cand_len as f64).exp()
    };
    bp * (log_sum / max_order as f64).exp() * 100.0
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Brute-force kNN: repeatedly scan for the most similar remaining entry
/// (earlier entries win exact ties), majority vote among the top k, vote
/// ties resolved to the label of the most similar tied entry.
pub fn knn_oracle(query: &[f64], entries: &[(Vec<f64>, u8)], k: usize) -> u8 {
    let mut remaining: Vec<usize> = (0..entries.len()).collect();
    let mut ranked: Vec<usize> = Vec::new();
    while !remaining.is_empty() {
        let mut best_pos = 0;
        for pos in 1..remaining.len() {
            let best_sim = cosine(query, &entries[remaining[best_pos]].0);
            let sim = cosine(query, &entries[remaining[pos]].0);
            if sim > best_sim {
                best_pos = pos;
            }
        }
        ranked.push(remaining.remove(best_pos));
    }
    let top = &ranked[..k.min(ranked.len())];

    let mut votes = [0usize; 4];
    for idx in top {
        votes[entries[*idx].1 as usize] += 1;
    }
    let max_votes = *votes.iter().max().unwrap();
    let tied: Vec<u8> = (0u8..4).filter(|l| votes[*l as usize] == max_votes).collect();
    if tied.len() == 1 {
        return tied[0];
    }
    for idx in top {
        if tied.contains(&entries[*idx].1) {
            return entries[*idx].1;
        }
    }
    unreachable!()
}

/// The chat request the orchestrator issues for a prompt, for keyed fixture
/// construction.
pub fn generation_request(cfg: &RunConfig, prompt: &Prompt) -> ChatRequest {
    ChatRequest::new(
        cfg.generator_model.clone(),
        vec![ChatMessage::user(prompt.render())],
        cfg.temperature,
        256,
    )
    .unwrap()
}

pub fn tweet_json(text: &str) -> String {
    serde_json::json!({ "synthetic_tweet_text": text }).to_string()
}
