//! Tweet generator: prompt construction and backend-driven generation.

use crate::backend::{Backend, ChatMessage, ChatRequest, FinishReason};
use crate::error::{Error, Result};
use crate::feedback::FeedbackText;
use crate::label_prep::TargetLabelVector;
use crate::prompts;

/// The accumulated instruction text for one generation chain: a rendered
/// base template plus the feedback collected from rejected attempts, in
/// production order.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    base: String,
    feedback_block: Vec<FeedbackText>,
}

/// Renders the base template for a target label vector. Deterministic:
/// the same target always yields byte-identical text.
pub fn build_prompt(target: &TargetLabelVector) -> Prompt {
    Prompt {
        base: prompts::generation_prompt(target.location(), target.damage_level().get()),
        feedback_block: Vec::new(),
    }
}

impl Prompt {
    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn feedback_block(&self) -> &[FeedbackText] {
        &self.feedback_block
    }

    /// Appends one feedback text; the base and earlier entries are untouched.
    pub fn push_feedback(&mut self, feedback: FeedbackText) {
        self.feedback_block.push(feedback);
    }

    /// Full prompt text: the base alone, or the base followed by the
    /// feedback header, every feedback line in production order, and the
    /// closing regenerate instruction.
    pub fn render(&self) -> String {
        if self.feedback_block.is_empty() {
            return self.base.clone();
        }
        let mut out = String::with_capacity(self.base.len() + 256);
        out.push_str(&self.base);
        out.push_str("\n\n");
        out.push_str(prompts::FEEDBACK_HEADER);
        out.push('\n');
        for feedback in &self.feedback_block {
            out.push_str(&feedback.rendered_line());
            out.push('\n');
        }
        out.push('\n');
        out.push_str(prompts::REGENERATE_INSTRUCTION);
        out
    }
}

/// A parsed, accepted-or-pending synthetic tweet with its generation
/// context.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTweet {
    pub text: String,
    pub target: TargetLabelVector,
    pub attempt_index: u32,
    pub temperature: f64,
}

fn strip_code_fence(raw: &str) -> &str {
    let trimmed = raw.trim();
    for fence in ["```json", "```"] {
        if let Some(rest) = trimmed.strip_prefix(fence) {
            if let Some(inner) = rest.strip_suffix("```") {
                return inner.trim();
            }
        }
    }
    trimmed
}

/// Finds the first balanced JSON object, respecting string escapes.
fn first_json_object(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in raw[start..].char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start..start + i + c.len_utf8()]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Extracts the `synthetic_tweet_text` value from the first JSON object in
/// the model output, stripping ``` / ```json fences first. The tweet text is
/// returned trimmed and must be non-empty.
pub fn parse_generation(raw: &str) -> Result<String> {
    let parse_err = |reason: &str| Error::GenerationParse {
        reason: reason.to_string(),
        raw: raw.to_string(),
    };
    let cleaned = strip_code_fence(raw);
    let object = first_json_object(cleaned).ok_or_else(|| parse_err("no JSON object found"))?;
    let value: serde_json::Value =
        serde_json::from_str(object).map_err(|e| parse_err(&format!("invalid JSON: {e}")))?;
    let text = value
        .get("synthetic_tweet_text")
        .ok_or_else(|| parse_err("missing synthetic_tweet_text key"))?
        .as_str()
        .ok_or_else(|| parse_err("synthetic_tweet_text is not a string"))?
        .trim()
        .to_string();
    if text.is_empty() {
        return Err(parse_err("synthetic_tweet_text is empty"));
    }
    Ok(text)
}

/// Issues generation requests and parses the replies. Parse failures are
/// re-requested up to the retry budget without consuming a feedback round.
pub struct Generator {
    model: String,
    max_tokens: u32,
    parse_retries: u32,
}

impl Generator {
    pub fn new(model: impl Into<String>) -> Self {
        Generator {
            model: model.into(),
            max_tokens: 256,
            parse_retries: 2,
        }
    }

    pub fn with_parse_retries(mut self, retries: u32) -> Self {
        self.parse_retries = retries;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    /// One generation attempt: sends the rendered prompt as a single user
    /// message at the given temperature and returns the parsed tweet.
    pub fn generate(
        &self,
        prompt: &Prompt,
        target: &TargetLabelVector,
        attempt_index: u32,
        temperature: f64,
        backend: &dyn Backend,
    ) -> Result<SyntheticTweet> {
        if temperature <= 0.0 || !temperature.is_finite() {
            return Err(Error::InvalidValue(format!(
                "generation temperature must be finite and > 0, got {temperature}"
            )));
        }
        let request = ChatRequest::new(
            self.model.clone(),
            vec![ChatMessage::user(prompt.render())],
            temperature,
            self.max_tokens,
        )?;
        let mut last_reason = String::new();
        let calls = self.parse_retries + 1;
        for _ in 0..calls {
            let response = backend.chat(&request)?;
            if response.finish_reason == FinishReason::Error {
                last_reason = "backend reported an error finish".to_string();
                continue;
            }
            match parse_generation(&response.content) {
                Ok(text) => {
                    return Ok(SyntheticTweet {
                        text,
                        target: target.clone(),
                        attempt_index,
                        temperature,
                    })
                }
                Err(Error::GenerationParse { reason, .. }) => last_reason = reason,
                Err(other) => return Err(other),
            }
        }
        Err(Error::GenerationFailed {
            attempts: calls,
            reason: last_reason,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ReplayFixture;
    use crate::feedback::FeedbackText;
    use crate::label_prep::DamageLevel;

    fn target(location: &str, level: u8) -> TargetLabelVector {
        TargetLabelVector::new(location, DamageLevel::new(level).unwrap()).unwrap()
    }

    #[test]
    fn prompt_contains_target_and_scale() {
        let prompt = build_prompt(&target("San Francisco", 0));
        let text = prompt.render();
        assert!(text.contains(r#"Identify "San Francisco" from the synthetic tweet"#));
        assert!(text.contains("Location: San Francisco"));
        assert!(text.contains("Damage level: 0"));
        assert!(text.contains("You are a synthetic tweet generator"));
        assert!(text.contains("0 - No damage or injury."));
        assert!(text.contains("1 - Slight damage."));
        assert!(text.contains("2 - Moderate damage with the possibility of injuries."));
        assert!(text.contains("3 - Severe damage with the possibility of fatalities."));
        assert!(text.contains("synthetic_tweet_text"));
        assert!(text.contains("in strict JSON format"));
    }

    #[test]
    fn severe_scale_line_is_verbatim() {
        let prompt = build_prompt(&target("Nepal", 3));
        assert!(prompt
            .render()
            .contains("3 - Severe damage with the possibility of fatalities."));
        assert!(prompt.render().contains("Damage level: 3"));
    }

    #[test]
    fn build_prompt_is_deterministic() {
        let y = target("Napa", 2);
        assert_eq!(build_prompt(&y).render(), build_prompt(&y).render());
    }

    #[test]
    fn render_without_feedback_is_base_exactly() {
        let prompt = build_prompt(&target("Napa", 1));
        assert_eq!(prompt.render(), prompt.base());
    }

    #[test]
    fn render_with_feedback_ends_with_regenerate_instruction() {
        let mut prompt = build_prompt(&target("Napa", 1));
        prompt.push_feedback(FeedbackText::new(
            "some tweet",
            vec!["Location \"Napa\" not found in tweet".into()],
        ));
        let text = prompt.render();
        assert!(text.ends_with("Regenerate the tweet correcting these issues."));
        assert!(text.contains("The previous attempt was incorrect with the following feedback:"));
        assert!(text.contains("Generated tweet: some tweet; Location \"Napa\" not found in tweet"));
    }

    #[test]
    fn feedback_entries_render_in_production_order() {
        let mut prompt = build_prompt(&target("Napa", 1));
        prompt.push_feedback(FeedbackText::new("first", vec!["msg one".into()]));
        prompt.push_feedback(FeedbackText::new("second", vec!["msg two".into()]));
        let text = prompt.render();
        let first = text.find("Generated tweet: first").unwrap();
        let second = text.find("Generated tweet: second").unwrap();
        assert!(first < second);
    }

    #[test]
    fn parse_generation_handles_plain_and_fenced_json() {
        assert_eq!(
            parse_generation(r#"{"synthetic_tweet_text": "Napa shaken tonight"}"#).unwrap(),
            "Napa shaken tonight"
        );
        assert_eq!(
            parse_generation("```json\n{\"synthetic_tweet_text\": \"x\"}\n```").unwrap(),
            "x"
        );
        assert_eq!(
            parse_generation("```\n{\"synthetic_tweet_text\": \"y\"}\n```").unwrap(),
            "y"
        );
    }

    #[test]
    fn parse_generation_rejects_bad_outputs() {
        for raw in [
            r#"{"tweet": "x"}"#,
            "no json here",
            r#"{"synthetic_tweet_text": 7}"#,
            r#"{"synthetic_tweet_text": "  "}"#,
        ] {
            let err = parse_generation(raw).unwrap_err();
            match err {
                Error::GenerationParse { raw: carried, .. } => assert_eq!(carried, raw),
                other => panic!("expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn parse_generation_trims_but_does_not_mutate() {
        let parsed = parse_generation(
            "{\"synthetic_tweet_text\": \"  Quake near Napa! #earthquake  \"}",
        )
        .unwrap();
        assert_eq!(parsed, "Quake near Napa! #earthquake");
    }

    #[test]
    fn generate_returns_tweet_on_first_valid_reply() {
        let y = target("Napa", 1);
        let prompt = build_prompt(&y);
        let gen = Generator::new("gen");
        let request = ChatRequest::new(
            "gen",
            vec![ChatMessage::user(prompt.render())],
            1.0,
            256,
        )
        .unwrap();
        let mut fixture = ReplayFixture::keyed();
        fixture.push_chat(&request, r#"{"synthetic_tweet_text": "quake near Napa"}"#);
        let backend = fixture.into_backend().unwrap();
        let tweet = gen.generate(&prompt, &y, 0, 1.0, &backend).unwrap();
        assert_eq!(tweet.text, "quake near Napa");
        assert_eq!(tweet.attempt_index, 0);
        assert_eq!(backend.chat_calls(), 1);
    }

    #[test]
    fn generate_retries_parse_failures_without_consuming_rounds() {
        let y = target("Napa", 1);
        let prompt = build_prompt(&y);
        let gen = Generator::new("gen");
        let mut fixture = ReplayFixture::sequence();
        fixture.push_raw(None, "garbage");
        fixture.push_raw(None, r#"{"synthetic_tweet_text": "valid now"}"#);
        let backend = fixture.into_backend().unwrap();
        let tweet = gen.generate(&prompt, &y, 0, 1.0, &backend).unwrap();
        assert_eq!(tweet.text, "valid now");
        assert_eq!(tweet.attempt_index, 0);
        assert_eq!(backend.chat_calls(), 2);
    }

    #[test]
    fn generate_fails_after_parse_budget() {
        let y = target("Napa", 1);
        let prompt = build_prompt(&y);
        let gen = Generator::new("gen").with_parse_retries(2);
        let mut fixture = ReplayFixture::sequence();
        for _ in 0..3 {
            fixture.push_raw(None, "garbage");
        }
        let backend = fixture.into_backend().unwrap();
        let err = gen.generate(&prompt, &y, 0, 1.0, &backend).unwrap_err();
        assert!(matches!(err, Error::GenerationFailed { attempts: 3, .. }));
        assert_eq!(backend.chat_calls(), 3);
    }

    #[test]
    fn generate_rejects_non_positive_temperature() {
        let y = target("Napa", 1);
        let prompt = build_prompt(&y);
        let gen = Generator::new("gen");
        let backend = ReplayFixture::keyed().into_backend().unwrap();
        assert!(gen.generate(&prompt, &y, 0, 0.0, &backend).is_err());
        assert!(gen.generate(&prompt, &y, 0, f64::NAN, &backend).is_err());
    }
}
