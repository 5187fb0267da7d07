//! Downstream task evaluation on a synthetic dataset: geolocalization and
//! damage-level prediction against a replay extractor/predictor.
//!
//!     cargo run -p crisisgen --example downstream_eval

use chrono::DateTime;
use crisisgen::backend::{ChatMessage, ChatRequest, ReplayFixture};
use crisisgen::label_prep::DamageLevel;
use crisisgen::metrics::{eval_damage_prediction, eval_geolocalization};
use crisisgen::orchestrator::DatasetRecord;
use crisisgen::prompts;

fn main() -> crisisgen::Result<()> {
    let record = |id: &str, location: &str, damage: u8, text: &str| DatasetRecord {
        id: id.into(),
        event: "demo".into(),
        tweet_text: text.into(),
        target_location: location.into(),
        target_damage_level: DamageLevel::new(damage).unwrap(),
        accepted_round: 0,
        temperature: 1.0,
        generator_model: "demo-generator".into(),
        created_at: DateTime::from_timestamp(0, 0).unwrap(),
    };
    let records = vec![
        record("r1", "Napa", 1, "Cracked walls all over Napa tonight"),
        record("r2", "Sonoma", 0, "Sonoma barely felt it, all fine"),
        record("r3", "Lima", 2, "Lima streets blocked by debris"),
    ];

    // Scripted extractor and predictor replies, keyed by the annotation
    // prompts the evaluators send.
    let annotation = |prompt: String| {
        ChatRequest::new("demo-annotator", vec![ChatMessage::user(prompt)], 0.0, 128).unwrap()
    };
    let mut fixture = ReplayFixture::keyed();
    for (record, geo_reply, damage_reply) in [
        (&records[0], r#"["Napa"]"#, "1"),
        (&records[1], r#"["Sonoma Valley"]"#, "2"),
        (&records[2], "[]", "not sure"),
    ] {
        fixture.push_chat(
            &annotation(prompts::location_extraction_prompt(&record.tweet_text)),
            geo_reply,
        );
        fixture.push_chat(
            &annotation(prompts::damage_annotation_prompt(&record.tweet_text)),
            damage_reply,
        );
    }
    let backend = fixture.into_backend()?;

    let geo = eval_geolocalization(&records, "demo-annotator", &backend)?;
    println!(
        "geolocalization:    {}/{} geolocated ({:.1}%), accuracy over geolocated {:.1}%",
        geo.valid, geo.total, geo.pct_valid, geo.accuracy_relative
    );
    let damage = eval_damage_prediction(&records, "demo-annotator", &backend)?;
    println!(
        "damage prediction:  {}/{} valid levels ({:.1}%), accuracy over valid {:.1}%",
        damage.valid, damage.total, damage.pct_valid, damage.accuracy_relative
    );
    Ok(())
}
