//! Run analytics: per-round pass rates, checks-passed distributions,
//! dataset characteristics, structural stats, and downstream task
//! evaluation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::label_prep::{annotate_damage_text, extract_locations_text, DamageLevel};
use crate::orchestrator::{AuditRecord, DatasetRecord, Outcome};

/// Per-round pass percentages over the attempts evaluated that round, plus
/// the cumulative share of items accepted by the end of the round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: u32,
    pub pct_pass_loc: f64,
    pub pct_pass_dmg: f64,
    pub pct_pass_div: f64,
    pub pct_accepted_cumulative: f64,
}

fn evaluated_rounds(audit: &[AuditRecord]) -> Result<BTreeMap<u32, Vec<&AuditRecord>>> {
    let mut rounds: BTreeMap<u32, Vec<&AuditRecord>> = BTreeMap::new();
    for record in audit {
        if record.details.is_some() {
            rounds.entry(record.attempt_index).or_default().push(record);
        }
    }
    if rounds.is_empty() {
        return Err(Error::EmptyInput(
            "audit log has no evaluated attempts".into(),
        ));
    }
    Ok(rounds)
}

/// Rows appear for every round with at least one evaluated attempt.
/// Generation- and evaluation-failed attempts carry no compliance details
/// and are excluded from the denominators.
pub fn round_pass_rates(audit: &[AuditRecord]) -> Result<Vec<RoundStats>> {
    if audit.is_empty() {
        return Err(Error::EmptyInput("audit log is empty".into()));
    }
    let rounds = evaluated_rounds(audit)?;

    let items: BTreeSet<&str> = audit.iter().map(|r| r.item_id.as_str()).collect();
    let total_items = items.len();
    let mut accepted_at: BTreeMap<&str, u32> = BTreeMap::new();
    for record in audit {
        if record.outcome == Outcome::Accepted {
            accepted_at.insert(record.item_id.as_str(), record.attempt_index);
        }
    }

    let pct = |n: usize, d: usize| 100.0 * n as f64 / d as f64;
    let mut stats = Vec::new();
    for (round, records) in rounds {
        let evaluated = records.len();
        let loc = records
            .iter()
            .filter(|r| r.details.as_ref().unwrap().vector.location)
            .count();
        let dmg = records
            .iter()
            .filter(|r| r.details.as_ref().unwrap().vector.damage)
            .count();
        let div = records
            .iter()
            .filter(|r| r.details.as_ref().unwrap().vector.diversity)
            .count();
        let accepted_by_round = accepted_at.values().filter(|r| **r <= round).count();
        stats.push(RoundStats {
            round,
            pct_pass_loc: pct(loc, evaluated),
            pct_pass_dmg: pct(dmg, evaluated),
            pct_pass_div: pct(div, evaluated),
            pct_accepted_cumulative: pct(accepted_by_round, total_items),
        });
    }
    Ok(stats)
}

/// Histogram of evaluated attempts by number of checks passed (0..=3);
/// bucket 3 is the attempts accepted that round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundHistogram {
    pub round: u32,
    pub counts: [usize; 4],
}

impl RoundHistogram {
    pub fn evaluated(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn checks_passed_distribution(audit: &[AuditRecord]) -> Result<Vec<RoundHistogram>> {
    let rounds = evaluated_rounds(audit)?;
    Ok(rounds
        .into_iter()
        .map(|(round, records)| {
            let mut counts = [0usize; 4];
            for record in records {
                let passed = record.details.as_ref().unwrap().vector.checks_passed();
                counts[passed as usize] += 1;
            }
            RoundHistogram { round, counts }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamageFrequency {
    pub level: DamageLevel,
    pub count: usize,
    pub percentage: f64,
}

/// Dataset size, unique target locations, and damage-level frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicsReport {
    pub size: usize,
    pub unique_locations: usize,
    pub unique_locations_percentage: f64,
    pub damage_frequency: Vec<DamageFrequency>,
}

impl CharacteristicsReport {
    /// One-line human summary with percentages rounded half-up to integers.
    pub fn display_summary(&self) -> String {
        let mut out = format!(
            "size={} unique_locations={} ({}%)",
            self.size,
            self.unique_locations,
            self.unique_locations_percentage.round() as i64,
        );
        out.push_str(" damage:");
        for f in &self.damage_frequency {
            out.push_str(&format!(
                " {}={} ({}%)",
                f.level,
                f.count,
                f.percentage.round() as i64
            ));
        }
        out
    }
}

/// Unique locations use case-insensitive exact string equality.
pub fn dataset_characteristics(records: &[DatasetRecord]) -> Result<CharacteristicsReport> {
    if records.is_empty() {
        return Err(Error::EmptyInput("dataset is empty".into()));
    }
    let size = records.len();
    let unique: HashSet<String> = records
        .iter()
        .map(|r| r.target_location.to_lowercase())
        .collect();
    let mut counts = [0usize; 4];
    for record in records {
        counts[record.target_damage_level.get() as usize] += 1;
    }
    Ok(CharacteristicsReport {
        size,
        unique_locations: unique.len(),
        unique_locations_percentage: 100.0 * unique.len() as f64 / size as f64,
        damage_frequency: DamageLevel::ALL
            .iter()
            .map(|level| DamageFrequency {
                level: *level,
                count: counts[level.get() as usize],
                percentage: 100.0 * counts[level.get() as usize] as f64 / size as f64,
            })
            .collect(),
    })
}

/// Character-length histogram and relative hashtag frequencies.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StructuralStats {
    pub length_histogram: BTreeMap<usize, usize>,
    pub hashtag_frequencies: BTreeMap<String, f64>,
    pub total_hashtags: usize,
}

fn hashtags(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tags = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '#' {
            let start = i + 1;
            let mut end = start;
            while end < chars.len() && (chars[end].is_alphanumeric() || chars[end] == '_') {
                end += 1;
            }
            if end > start {
                let tag: String = chars[start..end].iter().collect();
                tags.push(format!("#{}", tag.to_lowercase()));
                i = end;
                continue;
            }
        }
        i += 1;
    }
    tags
}

pub fn structural_stats(texts: &[String]) -> StructuralStats {
    let mut stats = StructuralStats::default();
    let mut tag_counts: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        *stats
            .length_histogram
            .entry(text.chars().count())
            .or_insert(0) += 1;
        for tag in hashtags(text) {
            *tag_counts.entry(tag).or_insert(0) += 1;
            stats.total_hashtags += 1;
        }
    }
    if stats.total_hashtags > 0 {
        for (tag, count) in tag_counts {
            stats
                .hashtag_frequencies
                .insert(tag, count as f64 / stats.total_hashtags as f64);
        }
    }
    stats
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Geolocalization,
    DamagePrediction,
}

/// Downstream-task report: share of records with a valid model output, and
/// accuracy over exactly that valid subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskKind,
    pub total: usize,
    pub valid: usize,
    pub pct_valid: f64,
    pub correct: usize,
    pub accuracy_relative: f64,
    /// False when no output was valid, in which case accuracy is reported
    /// as 0 and undefined.
    pub accuracy_defined: bool,
}

fn assemble_report(task: TaskKind, total: usize, valid: usize, correct: usize) -> EvalReport {
    let accuracy_defined = valid > 0;
    EvalReport {
        task,
        total,
        valid,
        pct_valid: 100.0 * valid as f64 / total as f64,
        correct,
        accuracy_relative: if accuracy_defined {
            100.0 * correct as f64 / valid as f64
        } else {
            0.0
        },
        accuracy_defined,
    }
}

/// Case-insensitive equality or mutual substring containment.
fn location_matches(extracted: &str, target: &str) -> bool {
    let a = extracted.to_lowercase();
    let b = target.to_lowercase();
    a.contains(&b) || b.contains(&a)
}

/// A record counts as geolocated when the extractor reports at least one
/// location; it counts as correct when any of them matches the target.
pub fn eval_geolocalization(
    records: &[DatasetRecord],
    model: &str,
    backend: &dyn Backend,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no records to evaluate".into()));
    }
    let mut valid = 0;
    let mut correct = 0;
    for record in records {
        let locations = extract_locations_text(&record.tweet_text, model, backend)?;
        if locations.is_empty() {
            continue;
        }
        valid += 1;
        if locations
            .iter()
            .any(|l| location_matches(l, &record.target_location))
        {
            correct += 1;
        }
    }
    Ok(assemble_report(
        TaskKind::Geolocalization,
        records.len(),
        valid,
        correct,
    ))
}

/// A record counts as valid when the predictor's reply parses to a level in
/// 0..=3; it counts as correct when that level equals the target.
pub fn eval_damage_prediction(
    records: &[DatasetRecord],
    model: &str,
    backend: &dyn Backend,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no records to evaluate".into()));
    }
    let mut valid = 0;
    let mut correct = 0;
    for record in records {
        let Some(predicted) = annotate_damage_text(&record.tweet_text, model, backend)? else {
            continue;
        };
        valid += 1;
        if predicted == record.target_damage_level {
            correct += 1;
        }
    }
    Ok(assemble_report(
        TaskKind::DamagePrediction,
        records.len(),
        valid,
        correct,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidValue(format!(
                "unknown report format {other:?} (expected csv or json)"
            ))),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes any serializable report as pretty JSON.
pub fn emit_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidValue(format!("serialize report: {e}")))?;
    write_file(path, &format!("{json}\n"))
}

/// CSV carries one decimal; JSON carries full precision.
pub fn emit_round_stats(stats: &[RoundStats], path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Json => emit_json(&stats, path),
        ReportFormat::Csv => {
            let mut out =
                String::from("round,pct_pass_loc,pct_pass_dmg,pct_pass_div,pct_accepted_cumulative\n");
            for s in stats {
                out.push_str(&format!(
                    "{},{:.1},{:.1},{:.1},{:.1}\n",
                    s.round, s.pct_pass_loc, s.pct_pass_dmg, s.pct_pass_div,
                    s.pct_accepted_cumulative
                ));
            }
            write_file(path, &out)
        }
    }
}

pub fn emit_distribution(
    rows: &[RoundHistogram],
    path: &Path,
    format: ReportFormat,
) -> Result<()> {
    match format {
        ReportFormat::Json => emit_json(&rows, path),
        ReportFormat::Csv => {
            let mut out = String::from("round,passed_0,passed_1,passed_2,passed_3\n");
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.round, r.counts[0], r.counts[1], r.counts[2], r.counts[3]
                ));
            }
            write_file(path, &out)
        }
    }
}
