//! Self-BLEU diversity scoring: exact copies score 100, disjoint texts
//! score 0, and partial overlaps land in between.
//!
//!     cargo run -p crisisgen --example self_bleu

use crisisgen::evaluator::{check_diversity, evaluation_rng, self_bleu, EvaluatorConfig};

fn main() -> crisisgen::Result<()> {
    let accepted = [
        "major quake hits napa valley tonight",
        "emergency crews assessing damage in napa",
        "stay safe everyone aftershocks expected",
    ];

    for candidate in [
        "major quake hits napa valley tonight",
        "major quake hits napa valley again",
        "totally unrelated message about the weather",
    ] {
        let score = self_bleu(candidate, &accepted)?;
        println!("self-BLEU {score:6.2}  {candidate:?}");
    }

    // The diversity check samples references from the accepted corpus and
    // passes strictly below the threshold.
    let corpus: Vec<String> = accepted.iter().map(|s| s.to_string()).collect();
    let cfg = EvaluatorConfig::default();
    let mut rng = evaluation_rng(42, "demo-item", 0);
    let outcome = check_diversity(
        "major quake hits napa valley tonight",
        &corpus,
        &cfg,
        &mut rng,
    )?;
    println!(
        "\ndiversity check on an exact copy: passed={} score={:.1} (threshold {:.1}, {} references sampled)",
        outcome.passed, outcome.score, cfg.bleu_threshold, outcome.sample_size
    );
    Ok(())
}
