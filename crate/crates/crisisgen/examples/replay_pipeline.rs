//! The whole file pipeline in-process against a keyed replay fixture:
//! pre-labeled corpus -> label vectors -> reference store -> generation run
//! with checkpoint files -> metrics reports.
//!
//!     cargo run -p crisisgen --example replay_pipeline

use crisisgen::backend::{ChatMessage, ChatRequest, ReplayFixture};
use crisisgen::generator::build_prompt;
use crisisgen::label_prep::{
    build_reference_store, ingest_corpus, prepare_label_vectors, AnnotationMode, CorpusFormat,
    DamageLevel,
};
use crisisgen::metrics::{
    checks_passed_distribution, dataset_characteristics, emit_distribution, emit_round_stats,
    round_pass_rates, ReportFormat,
};
use crisisgen::orchestrator::{Clock, Orchestrator, RunConfig, RunPaths};

fn main() -> crisisgen::Result<()> {
    let dir = std::env::temp_dir().join("crisisgen-replay-pipeline");
    std::fs::create_dir_all(&dir).map_err(|e| crisisgen::Error::Config(e.to_string()))?;

    // 1. A small pre-labeled corpus.
    let corpus_path = dir.join("corpus.jsonl");
    std::fs::write(
        &corpus_path,
        concat!(
            "{\"id\": \"t1\", \"text\": \"felt it in napa\", \"location\": \"Napa\", \"damage\": 1}\n",
            "{\"id\": \"t2\", \"text\": \"sonoma strong shake\", \"location\": \"Sonoma\", \"damage\": 1}\n",
            "{\"id\": \"t3\", \"text\": \"RT @x: felt it in napa\", \"location\": \"Napa\", \"damage\": 1}\n",
        ),
    )
    .map_err(|e| crisisgen::Error::Config(e.to_string()))?;
    let summary = ingest_corpus(&corpus_path, CorpusFormat::Jsonl)?;
    println!(
        "ingested {} tweet(s) ({} skipped); retweets and duplicates dropped",
        summary.tweets.len(),
        summary.skipped_rows
    );
    let targets = prepare_label_vectors(&summary.tweets, AnnotationMode::PreLabeled)?;
    println!("label vectors: {}", targets.len());

    // 2. Fixture: embeddings for the reference texts, then one accepted
    //    generation per item.
    let cfg = RunConfig {
        seed: 11,
        event_name: "replay-demo".into(),
        generator_model: "demo-generator".into(),
        ..RunConfig::default()
    };
    let labeled: Vec<(String, DamageLevel)> = summary
        .tweets
        .iter()
        .map(|t| (t.text.clone(), DamageLevel::new(1).unwrap()))
        .collect();
    let generated = [
        "Napa streets cracked pla1 pla2 pla3",
        "Sonoma homes shaken plb1 plb2 plb3",
    ];
    let mut fixture = ReplayFixture::keyed();
    for (text, _) in &labeled {
        fixture.push_embedding("demo-embedder", text, &[1.0, 0.0]);
    }
    for (y, text) in targets.iter().zip(generated) {
        let request = ChatRequest::new(
            cfg.generator_model.clone(),
            vec![ChatMessage::user(build_prompt(y).render())],
            cfg.temperature,
            256,
        )?;
        fixture.push_chat(
            &request,
            serde_json::json!({ "synthetic_tweet_text": text }).to_string(),
        );
        fixture.push_embedding("demo-embedder", text, &[1.0, 0.0]);
    }
    let backend = fixture.into_backend()?;

    // 3. Reference store from the labeled corpus.
    let store = build_reference_store(&labeled, "demo-embedder", &backend)?;
    println!(
        "reference store: {} entries, dimension {}",
        store.len(),
        store.dimension
    );

    // 4. Checkpointed generation run.
    let paths = RunPaths {
        dataset: dir.join("dataset.jsonl"),
        audit: dir.join("audit.jsonl"),
    };
    let orchestrator =
        Orchestrator::new(&cfg, &store, &backend).with_clock(Clock::fixed_epoch());
    let output = orchestrator.run_dataset_to_files(&targets, &paths, false)?;
    println!(
        "run: {} item(s), {} accepted",
        targets.len(),
        output.accepted()
    );

    // 5. Metrics reports.
    let stats = round_pass_rates(&output.audit)?;
    emit_round_stats(&stats, &dir.join("round_stats.csv"), ReportFormat::Csv)?;
    let distribution = checks_passed_distribution(&output.audit)?;
    emit_distribution(
        &distribution,
        &dir.join("checks_distribution.csv"),
        ReportFormat::Csv,
    )?;
    let characteristics = dataset_characteristics(&output.records)?;
    println!("{}", characteristics.display_summary());
    println!("reports and run files in {}", dir.display());
    Ok(())
}
