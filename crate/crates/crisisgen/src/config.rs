//! Application configuration: one JSON document, overridable by CLI flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, HttpBackend, ReplayBackend};
use crate::error::{Error, Result};
use crate::evaluator::EvaluatorConfig;
use crate::orchestrator::{Concurrency, RunConfig};

/// Backend endpoint selection. Exactly one of `base_url` (live HTTP) or
/// `replay_fixture` (offline replay) must be set. API keys are taken from
/// the environment variable named by `api_key_env`, never stored here.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSettings {
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
    pub replay_fixture: Option<PathBuf>,
    pub generation_model: String,
    pub embedding_model: String,
}

impl Default for BackendSettings {
    fn default() -> Self {
        BackendSettings {
            base_url: None,
            api_key_env: None,
            replay_fixture: None,
            generation_model: "generator".into(),
            embedding_model: "embedder".into(),
        }
    }
}

impl BackendSettings {
    pub fn is_replay(&self) -> bool {
        self.replay_fixture.is_some()
    }

    /// Builds the configured backend, enforcing the one-of invariant.
    pub fn build(&self) -> Result<Box<dyn Backend>> {
        match (&self.base_url, &self.replay_fixture) {
            (Some(_), Some(_)) => Err(Error::Config(
                "configure either base_url or replay_fixture, not both".into(),
            )),
            (None, None) => Err(Error::Config(
                "no backend configured: set base_url or replay_fixture".into(),
            )),
            (None, Some(fixture)) => {
                if !fixture.exists() {
                    return Err(Error::Config(format!(
                        "replay fixture not found: {}",
                        fixture.display()
                    )));
                }
                Ok(Box::new(ReplayBackend::load(fixture)?))
            }
            (Some(url), None) => {
                let mut backend = HttpBackend::new(url.clone())?;
                if let Some(var) = &self.api_key_env {
                    let key = std::env::var(var).map_err(|_| {
                        Error::Config(format!("API key environment variable {var} is not set"))
                    })?;
                    backend = backend.with_api_key(key);
                }
                Ok(Box::new(backend))
            }
        }
    }
}

/// Run parameters with their documented defaults; every field has a CLI
/// flag that overrides it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSettings {
    pub rounds: u32,
    pub temperature: f64,
    pub bleu_threshold: f64,
    pub bleu_sample_size: usize,
    pub knn_k: usize,
    pub seed: u64,
    pub parse_retries: u32,
    pub workers: Option<usize>,
    pub event_name: String,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            rounds: 3,
            temperature: 1.0,
            bleu_threshold: 40.0,
            bleu_sample_size: 100,
            knn_k: 5,
            seed: 0,
            parse_retries: 2,
            workers: None,
            event_name: "event".into(),
        }
    }
}

impl RunSettings {
    pub fn to_run_config(&self, generator_model: &str) -> RunConfig {
        RunConfig {
            rounds: self.rounds,
            temperature: self.temperature,
            evaluator: EvaluatorConfig {
                k: self.knn_k,
                bleu_threshold: self.bleu_threshold,
                bleu_sample_size: self.bleu_sample_size,
                rng_seed: self.seed,
            },
            parse_retries: self.parse_retries,
            seed: self.seed,
            concurrency: match self.workers {
                Some(workers) if workers > 1 => Concurrency::Parallel { workers },
                _ => Concurrency::Sequential,
            },
            event_name: self.event_name.clone(),
            generator_model: generator_model.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PathSettings {
    pub labels: Option<PathBuf>,
    pub refstore: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub audit: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub backend: BackendSettings,
    pub run: RunSettings,
    pub paths: PathSettings,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Writes the effective configuration next to a run's outputs for
    /// provenance. Round-trips through [`AppConfig::load`].
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serialize config: {e}")))?;
        std::fs::write(path, format!("{json}\n")).map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_documented_run_parameters() {
        let settings = RunSettings::default();
        assert_eq!(settings.rounds, 3);
        assert_eq!(settings.temperature, 1.0);
        assert_eq!(settings.bleu_threshold, 40.0);
        assert_eq!(settings.bleu_sample_size, 100);
        assert_eq!(settings.knn_k, 5);
        assert_eq!(settings.parse_retries, 2);
    }

    #[test]
    fn backend_requires_exactly_one_endpoint() {
        let neither = BackendSettings::default();
        assert!(matches!(neither.build(), Err(Error::Config(_))));

        let both = BackendSettings {
            base_url: Some("http://localhost:1".into()),
            replay_fixture: Some("fixture.jsonl".into()),
            ..BackendSettings::default()
        };
        assert!(matches!(both.build(), Err(Error::Config(_))));
    }

    #[test]
    fn missing_api_key_env_is_a_config_error() {
        let settings = BackendSettings {
            base_url: Some("http://localhost:1".into()),
            api_key_env: Some("CRISISGEN_TEST_KEY_THAT_IS_NOT_SET".into()),
            ..BackendSettings::default()
        };
        assert!(matches!(settings.build(), Err(Error::Config(_))));
    }

    #[test]
    fn config_file_round_trips() {
        let config = AppConfig {
            backend: BackendSettings {
                replay_fixture: Some("fixture.jsonl".into()),
                generation_model: "gen".into(),
                embedding_model: "emb".into(),
                ..BackendSettings::default()
            },
            run: RunSettings {
                rounds: 2,
                temperature: 1.4,
                event_name: "napa".into(),
                ..RunSettings::default()
            },
            paths: PathSettings::default(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        config.save(&path).unwrap();
        let loaded = AppConfig::load(&path).unwrap();
        assert_eq!(loaded.run.rounds, 2);
        assert_eq!(loaded.run.temperature, 1.4);
        assert_eq!(loaded.backend.generation_model, "gen");
    }

    #[test]
    fn partial_config_files_fill_in_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, r#"{"run": {"seed": 9}}"#).unwrap();
        let loaded = AppConfig::load(&path).unwrap();
        assert_eq!(loaded.run.seed, 9);
        assert_eq!(loaded.run.rounds, 3);
    }

    #[test]
    fn run_config_conversion_carries_the_evaluator_knobs() {
        let settings = RunSettings {
            knn_k: 7,
            bleu_threshold: 35.0,
            bleu_sample_size: 50,
            workers: Some(4),
            ..RunSettings::default()
        };
        let cfg = settings.to_run_config("gen");
        assert_eq!(cfg.evaluator.k, 7);
        assert_eq!(cfg.evaluator.bleu_threshold, 35.0);
        assert_eq!(cfg.evaluator.bleu_sample_size, 50);
        assert_eq!(cfg.concurrency, Concurrency::Parallel { workers: 4 });
        assert_eq!(cfg.generator_model, "gen");
    }
}
