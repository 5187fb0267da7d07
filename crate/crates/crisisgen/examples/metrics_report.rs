//! Per-round pass rates and checks-passed histograms from an audit log,
//! here a hand-built one mirroring a four-attempt correction chain.
//!
//!     cargo run -p crisisgen --example metrics_report

use crisisgen::evaluator::{ComplianceDetails, ComplianceVector};
use crisisgen::label_prep::DamageLevel;
use crisisgen::metrics::{checks_passed_distribution, round_pass_rates};
use crisisgen::orchestrator::{AuditRecord, Outcome};

fn attempt(
    item: &str,
    index: u32,
    outcome: Outcome,
    (loc, dmg, div): (bool, bool, bool),
) -> AuditRecord {
    AuditRecord {
        item_id: item.into(),
        attempt_index: index,
        tweet_text: Some(format!("{item} attempt {index}")),
        details: Some(ComplianceDetails {
            vector: ComplianceVector {
                location: loc,
                damage: dmg,
                diversity: div,
            },
            predicted_damage: Some(DamageLevel::new(1).unwrap()),
            self_bleu: Some(12.5),
            threshold: 40.0,
            reference_sample_size: 20,
        }),
        outcome,
    }
}

fn main() -> crisisgen::Result<()> {
    // Item A: location fixed after one round. Item B: damage level never
    // matches. Item C: accepted immediately.
    let audit = vec![
        attempt("item-a", 0, Outcome::Rejected, (false, true, true)),
        attempt("item-a", 1, Outcome::Accepted, (true, true, true)),
        attempt("item-b", 0, Outcome::Rejected, (true, false, true)),
        attempt("item-b", 1, Outcome::Rejected, (true, false, true)),
        attempt("item-b", 2, Outcome::Rejected, (true, false, false)),
        attempt("item-b", 3, Outcome::Rejected, (true, false, true)),
        attempt("item-c", 0, Outcome::Accepted, (true, true, true)),
    ];

    println!("round | pass_loc | pass_dmg | pass_div | accepted_cum");
    for s in round_pass_rates(&audit)? {
        println!(
            "{:5} | {:7.1}% | {:7.1}% | {:7.1}% | {:11.1}%",
            s.round, s.pct_pass_loc, s.pct_pass_dmg, s.pct_pass_div, s.pct_accepted_cumulative
        );
    }

    println!("\nchecks passed per round (buckets 0..=3):");
    for row in checks_passed_distribution(&audit)? {
        println!("round {}: {:?}", row.round, row.counts);
    }
    Ok(())
}
