//! Prompt text constants shared by the generator and the annotation steps.

/// Four-level damage scale mapped to Modified Mercalli Intensity ranges.
/// Embedded verbatim in the generation prompt and the damage-annotation
/// prompt; golden tests pin each line.
pub const DAMAGE_SCALE: &str = "\
0 - No damage or injury. This damage level corresponds to levels I-III in the Modified Mercalli Intensity (MMI) scale which has any of the following characteristics: no noticeable damage; felt by only a few people at rest; no damage to buildings; felt indoors, especially on upper floors; no significant structural damage.
1 - Slight damage. This damage level corresponds to levels IV-V in the Modified Mercalli Intensity (MMI) scale which has any of the following characteristics: felt by most people; some damage to buildings, such as minor cracks; felt by everyone; damage to buildings, minor cracks, but no collapse.
2 - Moderate damage with the possibility of injuries. This damage level corresponds to levels VI-VII in the Modified Mercalli Intensity (MMI) scale which has any of the following characteristics: damage to buildings, visible structural deformation; significant damage, some collapses or structural failures.
3 - Severe damage with the possibility of fatalities. This damage level corresponds to levels VIII-X in the Modified Mercalli Intensity (MMI) scale which has any of the following characteristics: many buildings collapse or are severely damaged; total destruction in some areas, severe damage; complete destruction of all structures in the affected area.";

/// Header line inserted before accumulated feedback when re-prompting.
pub const FEEDBACK_HEADER: &str =
    "The previous attempt was incorrect with the following feedback:";

/// Closing instruction after the accumulated feedback block.
pub const REGENERATE_INSTRUCTION: &str = "Regenerate the tweet correcting these issues.";

/// Base generation prompt for one (location, damage level) target.
pub fn generation_prompt(location: &str, damage_level: u8) -> String {
    format!(
        r#"Task:
You are a synthetic tweet generator. Your task is to generate a tweet as if it was posted by a real Twitter user after an earthquake event. Consider varying the persona that generated the tweet (eg, a concerned citizen expressing his/her sentiment, a government/news agency providing information, a user reporting his/her firsthand observations about the situation, etc.)

Instructions:
You must generate one synthetic tweet such that a large language model (LLM) can satisfy the following conditions:
1. Identify "{location}" from the synthetic tweet
2. Identify that the tweet is related to damage from the earthquake event
3. Identify that the tweet has a damage level of "{damage_level}" based on the following damage scale:
{scale}

Input:
Location: {location}
Damage level: {damage_level}

Output:
Do not provide additional output except for the following, in strict JSON format:
{{
    "synthetic_tweet_text": "< synthetic tweet >"
}}"#,
        location = location,
        damage_level = damage_level,
        scale = DAMAGE_SCALE,
    )
}

/// Annotation prompt asking the backend for the locations referenced in a
/// tweet, as a strict JSON array ordered by appearance.
pub fn location_extraction_prompt(tweet_text: &str) -> String {
    format!(
        r#"Task:
List the geographic locations mentioned in the tweet below.

Output:
Do not provide additional output except for a JSON array of location strings, ordered by appearance in the tweet, in strict JSON format (for example: ["Napa", "California"]). Respond with [] if no location is mentioned.

Tweet: {tweet_text}"#
    )
}

/// Annotation prompt asking the backend to classify a tweet's damage level
/// on the four-level scale.
pub fn damage_annotation_prompt(tweet_text: &str) -> String {
    format!(
        r#"Task:
Classify the damage level described in the tweet below based on the following damage scale:
{scale}

Output:
Do not provide additional output except for the damage level as a single integer (0, 1, 2, or 3).

Tweet: {tweet_text}"#,
        scale = DAMAGE_SCALE,
    )
}
