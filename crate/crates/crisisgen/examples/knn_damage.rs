//! Damage-level classification by majority vote among the k most
//! cosine-similar reference embeddings.
//!
//!     cargo run -p crisisgen --example knn_damage

use crisisgen::backend::EmbeddingVector;
use crisisgen::evaluator::knn_damage;
use crisisgen::label_prep::{DamageLevel, ReferenceEntry, ReferenceStore};

fn main() -> crisisgen::Result<()> {
    // Toy 2-dimensional store: "no damage" reports cluster near (1, 0),
    // "severe" reports near (0, 1).
    let mut entries = Vec::new();
    for i in 0..5 {
        let x = 1.0 - i as f64 * 0.05;
        entries.push(ReferenceEntry {
            damage_level: DamageLevel::new(0)?,
            vector: EmbeddingVector::new(vec![x, 1.0 - x]).unwrap(),
            text_hash: format!("calm-{i}"),
        });
        entries.push(ReferenceEntry {
            damage_level: DamageLevel::new(3)?,
            vector: EmbeddingVector::new(vec![1.0 - x, x]).unwrap(),
            text_hash: format!("severe-{i}"),
        });
    }
    let store = ReferenceStore {
        model_id: "toy-embedder".into(),
        dimension: 2,
        entries,
    };

    for (label, query) in [
        ("clearly calm", vec![0.98, 0.02]),
        ("clearly severe", vec![0.03, 0.97]),
        ("leaning calm", vec![0.6, 0.4]),
        ("leaning severe", vec![0.4, 0.6]),
    ] {
        let vector = EmbeddingVector::new(query.clone()).unwrap();
        let predicted = knn_damage(&vector, &store, 5)?;
        println!("{label:15} {query:?} -> damage level {predicted}");
    }
    Ok(())
}
