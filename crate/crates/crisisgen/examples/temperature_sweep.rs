//! Sweep the generation temperature from 0.6 to 1.4 against a replay
//! backend, checking the logged request temperatures and writing one
//! metrics report per setting.
//!
//!     cargo run -p crisisgen --example temperature_sweep

use crisisgen::backend::{EmbeddingVector, LoggedRequest, ReplayFixture};
use crisisgen::label_prep::{DamageLevel, ReferenceEntry, ReferenceStore, TargetLabelVector};
use crisisgen::metrics::{emit_round_stats, round_pass_rates, ReportFormat};
use crisisgen::orchestrator::{Orchestrator, RunConfig};

fn main() -> crisisgen::Result<()> {
    let dir = std::env::temp_dir().join("crisisgen-temperature-sweep");
    std::fs::create_dir_all(&dir).map_err(|e| crisisgen::Error::Config(e.to_string()))?;

    let store = ReferenceStore {
        model_id: "demo-embedder".into(),
        dimension: 2,
        entries: (0..5)
            .map(|i| ReferenceEntry {
                damage_level: DamageLevel::new(1).unwrap(),
                vector: EmbeddingVector::new(vec![1.0 - i as f64 * 0.02, i as f64 * 0.02])
                    .unwrap(),
                text_hash: format!("ref-{i}"),
            })
            .collect(),
    };
    let targets = vec![
        TargetLabelVector::new("Napa", DamageLevel::new(1)?)?,
        TargetLabelVector::new("Sonoma", DamageLevel::new(1)?)?,
    ];

    for (i, tau) in [0.6, 0.8, 1.0, 1.2, 1.4].into_iter().enumerate() {
        let cfg = RunConfig {
            temperature: tau,
            seed: 11,
            event_name: format!("sweep-tau-{tau}"),
            generator_model: "demo-generator".into(),
            ..RunConfig::default()
        };
        // Sequence fixture: one accepted tweet per item, texts kept
        // token-disjoint so the diversity check passes.
        let mut fixture = ReplayFixture::sequence();
        for (j, y) in targets.iter().enumerate() {
            let text = format!("{} sweep{i}x{j}a sweep{i}x{j}b", y.location());
            fixture.push_raw(
                None,
                serde_json::json!({ "synthetic_tweet_text": text }).to_string(),
            );
            fixture.push_raw(None, "[1.0, 0.0]");
        }
        let backend = fixture.into_backend()?;
        let output = Orchestrator::new(&cfg, &store, &backend).run_dataset(&targets)?;

        let temps: Vec<f64> = backend
            .request_log()
            .iter()
            .filter_map(|r| match r {
                LoggedRequest::Chat(req) => Some(req.temperature),
                _ => None,
            })
            .collect();
        assert!(temps.iter().all(|t| *t == tau));

        let report = dir.join(format!("round_stats_tau{tau}.csv"));
        emit_round_stats(&round_pass_rates(&output.audit)?, &report, ReportFormat::Csv)?;
        println!(
            "tau={tau:.1}: accepted {}/{} | every logged request at {tau:.1} | report {}",
            output.accepted(),
            targets.len(),
            report.display()
        );
    }
    Ok(())
}
