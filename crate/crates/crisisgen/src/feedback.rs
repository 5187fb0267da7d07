//! Feedback augmenter: turn a rejected tweet's compliance details into the
//! feedback text appended to the prompt.

use crate::error::{Error, Result};
use crate::evaluator::ComplianceDetails;
use crate::generator::SyntheticTweet;
use crate::label_prep::TargetLabelVector;

/// Feedback for one rejected tweet: the tweet itself plus one message per
/// failed check, in the fixed order location, damage, diversity.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackText {
    tweet_text: String,
    messages: Vec<String>,
}

impl FeedbackText {
    pub fn new(tweet_text: impl Into<String>, messages: Vec<String>) -> Self {
        FeedbackText {
            tweet_text: tweet_text.into(),
            messages,
        }
    }

    pub fn tweet_text(&self) -> &str {
        &self.tweet_text
    }

    pub fn messages(&self) -> &[String] {
        &self.messages
    }

    /// `Generated tweet: {tweet}; {msg1}; {msg2}; ...`
    pub fn rendered_line(&self) -> String {
        let mut line = format!("Generated tweet: {}", self.tweet_text);
        for message in &self.messages {
            line.push_str("; ");
            line.push_str(message);
        }
        line
    }
}

/// Builds the feedback text for a rejected tweet. Calling this for an
/// accepted tweet is a contract error.
pub fn render_feedback(
    tweet: &SyntheticTweet,
    details: &ComplianceDetails,
    target: &TargetLabelVector,
) -> Result<FeedbackText> {
    if details.vector.accepted() {
        return Err(Error::Contract(
            "render_feedback called for an accepted tweet".into(),
        ));
    }
    let mut messages = Vec::new();
    if !details.vector.location {
        messages.push(format!(
            "Location \"{}\" not found in tweet",
            target.location()
        ));
    }
    if !details.vector.damage {
        let predicted = details
            .predicted_damage
            .ok_or_else(|| Error::Contract("damage check failed without a prediction".into()))?;
        messages.push(format!(
            "Damage mismatch: expected \"{}\", predicted \"{}\"",
            target.damage_level(),
            predicted
        ));
    }
    if !details.vector.diversity {
        let score = details
            .self_bleu
            .ok_or_else(|| Error::Contract("diversity check failed without a score".into()))?;
        messages.push(format!(
            "Too similar to accepted corpus (Self-BLEU={score:.1} > {threshold:.1})",
            threshold = details.threshold,
        ));
    }
    Ok(FeedbackText::new(tweet.text.clone(), messages))
}
