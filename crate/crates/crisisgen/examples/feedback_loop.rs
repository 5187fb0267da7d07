//! One item through the full generate/evaluate/feedback loop, using a
//! scripted replay backend: attempt 0 forgets the location, the feedback
//! names the problem, and attempt 1 corrects it.
//!
//!     cargo run -p crisisgen --example feedback_loop

use crisisgen::backend::{EmbeddingVector, ReplayFixture};
use crisisgen::label_prep::{DamageLevel, ReferenceEntry, ReferenceStore, TargetLabelVector};
use crisisgen::orchestrator::{AcceptedCorpus, Orchestrator, RunConfig};

fn main() -> crisisgen::Result<()> {
    let target = TargetLabelVector::new("Napa", DamageLevel::new(1)?)?;
    let cfg = RunConfig {
        seed: 7,
        event_name: "demo".into(),
        generator_model: "demo-generator".into(),
        ..RunConfig::default()
    };

    // Reference store with a "slight damage" cluster near (1, 0).
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

    // Scripted model replies: the sequence fixture answers calls in order
    // (chat, embed, chat, embed).
    let mut fixture = ReplayFixture::sequence();
    fixture.push_raw(
        None,
        r#"{"synthetic_tweet_text": "Strong shaking downtown, cracks in a few walls. Stay alert!"}"#,
    );
    fixture.push_raw(None, "[1.0, 0.0]");
    fixture.push_raw(
        None,
        r#"{"synthetic_tweet_text": "Strong shaking in Napa, cracks in a few walls. Stay alert!"}"#,
    );
    fixture.push_raw(None, "[1.0, 0.0]");
    let backend = fixture.into_backend()?;

    let orchestrator = Orchestrator::new(&cfg, &store, &backend);
    let outcome = orchestrator.run_item("demo-item", &target, &AcceptedCorpus::new())?;

    for attempt in &outcome.audit {
        let vector = attempt
            .details
            .as_ref()
            .map(|d| {
                format!(
                    "loc={} dmg={} div={}",
                    d.vector.location, d.vector.damage, d.vector.diversity
                )
            })
            .unwrap_or_else(|| "-".into());
        println!(
            "attempt {}: {:?} [{vector}] {:?}",
            attempt.attempt_index,
            attempt.outcome,
            attempt.tweet_text.as_deref().unwrap_or("-")
        );
    }
    match &outcome.record {
        Some(record) => println!(
            "\naccepted at round {}: {:?}",
            record.accepted_round, record.tweet_text
        ),
        None => println!("\nitem exhausted its rounds without acceptance"),
    }
    Ok(())
}
