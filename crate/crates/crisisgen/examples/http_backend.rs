//! Point the pipeline at a live chat-completions/embeddings server.
//!
//! Needs a running endpoint (any OpenAI-compatible server works, local or
//! hosted):
//!
//!     CRISISGEN_BASE_URL=http://localhost:8000 \
//!     CRISISGEN_GEN_MODEL=gemma-3-1b-it \
//!     cargo run -p crisisgen --example http_backend
//!
//! Without CRISISGEN_BASE_URL set, it prints what it would do and exits.

use crisisgen::backend::{Backend, HttpBackend};
use crisisgen::generator::{build_prompt, Generator};
use crisisgen::label_prep::{DamageLevel, TargetLabelVector};

fn main() -> crisisgen::Result<()> {
    let Ok(base_url) = std::env::var("CRISISGEN_BASE_URL") else {
        println!("CRISISGEN_BASE_URL is not set.");
        println!("Set it to a chat-completions server root (e.g. http://localhost:8000)");
        println!("and optionally CRISISGEN_GEN_MODEL / CRISISGEN_API_KEY, then re-run.");
        return Ok(());
    };
    let model =
        std::env::var("CRISISGEN_GEN_MODEL").unwrap_or_else(|_| "gemma-3-1b-it".to_string());

    let mut backend = HttpBackend::new(base_url)?;
    if let Ok(key) = std::env::var("CRISISGEN_API_KEY") {
        backend = backend.with_api_key(key);
    }

    let target = TargetLabelVector::new("Napa", DamageLevel::new(2)?)?;
    let prompt = build_prompt(&target);
    let generator = Generator::new(&model);
    let tweet = generator.generate(&prompt, &target, 0, 1.0, &backend as &dyn Backend)?;
    println!("model {model} generated:\n{}", tweet.text);
    Ok(())
}
