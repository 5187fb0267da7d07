//! Render the generation prompt for a target, then show how rejection
//! feedback accumulates across rounds.
//!
//!     cargo run -p crisisgen --example build_prompt

use crisisgen::evaluator::{ComplianceDetails, ComplianceVector};
use crisisgen::feedback::render_feedback;
use crisisgen::generator::{build_prompt, SyntheticTweet};
use crisisgen::label_prep::{DamageLevel, TargetLabelVector};

fn main() -> crisisgen::Result<()> {
    let target = TargetLabelVector::new("San Francisco", DamageLevel::new(0)?)?;
    let mut prompt = build_prompt(&target);

    println!("=== base prompt ===\n{}\n", prompt.render());

    // Pretend the first attempt forgot the location.
    let rejected = SyntheticTweet {
        text: "Just saw a tremor downtown. #quake".into(),
        target: target.clone(),
        attempt_index: 0,
        temperature: 1.0,
    };
    let details = ComplianceDetails {
        vector: ComplianceVector {
            location: false,
            damage: true,
            diversity: true,
        },
        predicted_damage: Some(DamageLevel::new(0)?),
        self_bleu: Some(0.0),
        threshold: 40.0,
        reference_sample_size: 0,
    };
    let feedback = render_feedback(&rejected, &details, &target)?;
    println!("=== feedback line ===\n{}\n", feedback.rendered_line());

    prompt.push_feedback(feedback);
    println!("=== prompt for the next round ===\n{}", prompt.render());
    Ok(())
}
