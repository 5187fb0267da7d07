//! Iterative generation of crisis-related synthetic tweet datasets.
//!
//! Three cooperating roles drive each dataset item: a generator produces a
//! tweet for a (location, damage level) target, an evaluator runs three
//! compliance checks (case-insensitive location match, kNN damage-level
//! classification over reference embeddings, self-BLEU diversity against the
//! accepted corpus), and an augmenter turns failed checks into feedback that
//! is appended to the prompt for the next round. Tweets that pass all checks
//! join the dataset; the loop stops at acceptance or after the configured
//! number of feedback rounds.
//!
//! The crate talks to any chat-completions/embeddings-compatible HTTP
//! service, or to a [`backend::ReplayBackend`] answering from a recorded
//! fixture for deterministic offline runs. See the `examples/` directory for
//! one runnable walk-through per capability, and the `crisisgen` binary for
//! the file-based pipeline (`prepare-labels`, `build-refstore`, `generate`,
//! `metrics`, `evaluate-downstream`).

pub mod backend;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluator;
pub mod feedback;
pub mod generator;
pub mod label_prep;
pub mod metrics;
pub mod orchestrator;
pub mod prompts;

pub use error::{Error, Result};
