//! Verdict-to-score mappings, score aggregation, and threshold
//! classification.
//!
//! Scores are exact rationals: every per-verdict score is a multiple of one
//! half, so an aggregate over `n` verdicts is `k / 2n` for integer `k`.
//! Thresholds are fixed-point with four decimal places. Classification
//! compares the two by cross-multiplication, so boundary cases (score 0.5
//! against threshold 0.5) never wobble on floating-point representation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::TokenUsage;
use crate::prompts::VerdictValue;
use crate::verify::VerifiedMutation;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("cannot score an empty verdict set")]
    EmptyVerdicts,
    #[error("invalid threshold `{0}`: must be a decimal in [0, 1] with at most 4 decimal places")]
    InvalidThreshold(String),
}

/// Exact score in `[0, 1]`, stored as `numerator / denominator`.
#[derive(Debug, Clone, Copy)]
pub struct Score {
    numerator: u64,
    denominator: u64,
}

impl Score {
    pub const ZERO: Score = Score {
        numerator: 0,
        denominator: 1,
    };
    pub const ONE: Score = Score {
        numerator: 1,
        denominator: 1,
    };

    /// `numerator / denominator`, which must lie in `[0, 1]`.
    pub fn from_ratio(numerator: u64, denominator: u64) -> Score {
        assert!(denominator > 0, "zero denominator");
        assert!(numerator <= denominator, "score above 1");
        Score {
            numerator,
            denominator,
        }
    }

    pub fn numerator(&self) -> u64 {
        self.numerator
    }

    pub fn denominator(&self) -> u64 {
        self.denominator
    }

    pub fn as_f64(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }

    /// Decimal rendering with exactly four places, rounding half up.
    pub fn to_4dp_string(&self) -> String {
        let scaled = self.numerator as u128 * 10_000;
        let whole = scaled / self.denominator as u128;
        let remainder = scaled % self.denominator as u128;
        let rounded = whole + u128::from(remainder * 2 >= self.denominator as u128);
        format!("{}.{:04}", rounded / 10_000, rounded % 10_000)
    }
}

impl PartialEq for Score {
    fn eq(&self, other: &Self) -> bool {
        self.numerator as u128 * other.denominator as u128
            == other.numerator as u128 * self.denominator as u128
    }
}

impl Eq for Score {}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.numerator as u128 * other.denominator as u128)
            .cmp(&(other.numerator as u128 * self.denominator as u128))
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_4dp_string())
    }
}

/// Serialized as `{"text": "0.7500", "num": 15, "den": 20}`: the text keeps
/// the four-decimal display contract, the integer pair keeps exactness
/// through round-trips.
#[derive(Serialize, Deserialize)]
struct ScoreRepr {
    text: String,
    num: u64,
    den: u64,
}

impl Serialize for Score {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ScoreRepr {
            text: self.to_4dp_string(),
            num: self.numerator,
            den: self.denominator,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = ScoreRepr::deserialize(deserializer)?;
        if repr.den == 0 || repr.num > repr.den {
            return Err(serde::de::Error::custom("score outside [0, 1]"));
        }
        Ok(Score::from_ratio(repr.num, repr.den))
    }
}

/// Classification threshold, fixed-point in ten-thousandths (`0..=10000`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Threshold(u32);

impl Threshold {
    pub fn from_basis_points_1e4(value: u32) -> Result<Threshold, ScoreError> {
        if value > 10_000 {
            return Err(ScoreError::InvalidThreshold(format!(
                "{}",
                value as f64 / 10_000.0
            )));
        }
        Ok(Threshold(value))
    }

    pub fn as_scaled_1e4(&self) -> u32 {
        self.0
    }

    pub fn as_f64(&self) -> f64 {
        self.0 as f64 / 10_000.0
    }

    pub fn to_string_trimmed(&self) -> String {
        let s = format!("{:.4}", self.as_f64());
        let trimmed = s.trim_end_matches('0');
        let trimmed = trimmed.strip_suffix('.').unwrap_or(trimmed);
        trimmed.to_string()
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:04}", self.0 / 10_000, self.0 % 10_000)
    }
}

impl FromStr for Threshold {
    type Err = ScoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let invalid = || ScoreError::InvalidThreshold(s.to_string());
        let (whole, frac) = match s.split_once('.') {
            Some((whole, frac)) => (whole, frac),
            None => (s, ""),
        };
        if whole.is_empty() && frac.is_empty() {
            return Err(invalid());
        }
        if frac.len() > 4 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(invalid());
        }
        let whole: u32 = if whole.is_empty() {
            0
        } else {
            whole.parse().map_err(|_| invalid())?
        };
        let mut frac_scaled: u32 = 0;
        for (i, c) in frac.chars().enumerate() {
            frac_scaled += c.to_digit(10).unwrap() * 10u32.pow(3 - i as u32);
        }
        Threshold::from_basis_points_1e4(whole * 10_000 + frac_scaled).map_err(|_| invalid())
    }
}

impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Score contribution of one verdict, in half-units.
fn syn_half_points(verdict: VerdictValue) -> u64 {
    match verdict {
        VerdictValue::Yes => 0,
        VerdictValue::No => 2,
        VerdictValue::NotSure => 1,
    }
}

fn ant_half_points(verdict: VerdictValue) -> u64 {
    match verdict {
        VerdictValue::Yes => 2,
        VerdictValue::No => 0,
        VerdictValue::NotSure => 1,
    }
}

/// Score of one synonymous-mutation verdict: Yes is 0, No is 1, Not Sure 0.5.
pub fn syn_score(verdict: VerdictValue) -> Score {
    Score::from_ratio(syn_half_points(verdict), 2)
}

/// Score of one antonymous-mutation verdict: Yes is 1, No is 0, Not Sure 0.5.
pub fn ant_score(verdict: VerdictValue) -> Score {
    Score::from_ratio(ant_half_points(verdict), 2)
}

/// Aggregate hallucination score: the mean of the per-verdict scores over
/// all synonym and antonym verdicts. Exact.
pub fn hallucination_score(
    syn_verdicts: &[VerdictValue],
    ant_verdicts: &[VerdictValue],
) -> Result<Score, ScoreError> {
    let count = syn_verdicts.len() + ant_verdicts.len();
    if count == 0 {
        return Err(ScoreError::EmptyVerdicts);
    }
    let half_sum: u64 = syn_verdicts
        .iter()
        .map(|&v| syn_half_points(v))
        .sum::<u64>()
        + ant_verdicts
            .iter()
            .map(|&v| ant_half_points(v))
            .sum::<u64>();
    Ok(Score::from_ratio(half_sum, 2 * count as u64))
}

/// A response is classified as a hallucination when its score reaches the
/// threshold (boundary inclusive).
pub fn classify(score: Score, threshold: Threshold) -> bool {
    score.numerator as u128 * 10_000
        >= threshold.as_scaled_1e4() as u128 * score.denominator as u128
}

/// Full per-question detection record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionTrace {
    pub question_id: String,
    pub question: String,
    pub base_response: String,
    pub verified: Vec<VerifiedMutation>,
    pub syn_count: usize,
    pub ant_count: usize,
    /// `None` when no verdicts were available (unscorable).
    pub score: Option<Score>,
    pub threshold: Threshold,
    pub classified_hallucination: Option<bool>,
    pub degraded: bool,
    pub usage: TokenUsage,
}

#[cfg(test)]
mod tests {
    use super::*;
    use VerdictValue::{No, NotSure, Yes};

    #[test]
    fn syn_mapping() {
        assert_eq!(syn_score(Yes), Score::from_ratio(0, 2));
        assert_eq!(syn_score(No), Score::from_ratio(2, 2));
        assert_eq!(syn_score(NotSure), Score::from_ratio(1, 2));
    }

    #[test]
    fn ant_mapping() {
        assert_eq!(ant_score(Yes), Score::from_ratio(2, 2));
        assert_eq!(ant_score(No), Score::from_ratio(0, 2));
        assert_eq!(ant_score(NotSure), Score::from_ratio(1, 2));
    }

    // Worked example: synonym verdicts (No, No, No, Yes, No) and antonym
    // verdicts (Yes, No, Yes, Yes, Not Sure) average to (4.0 + 3.5) / 10.
    #[test]
    fn worked_example_scores_three_quarters() {
        let syn = [No, No, No, Yes, No];
        let ant = [Yes, No, Yes, Yes, NotSure];
        let score = hallucination_score(&syn, &ant).unwrap();
        assert_eq!(score, Score::from_ratio(3, 4));
        assert_eq!(score.to_4dp_string(), "0.7500");
        assert!(classify(score, "0.5".parse().unwrap()));
        assert!(classify(score, "0.2".parse().unwrap()));
        assert!(!classify(score, "0.8".parse().unwrap()));
    }

    #[test]
    fn extremal_cases() {
        assert_eq!(
            hallucination_score(&[Yes; 5], &[No; 5]).unwrap(),
            Score::ZERO
        );
        assert_eq!(
            hallucination_score(&[No; 5], &[Yes; 5]).unwrap(),
            Score::ONE
        );
        assert_eq!(
            hallucination_score(&[NotSure; 3], &[NotSure; 3]).unwrap(),
            Score::from_ratio(1, 2)
        );
    }

    #[test]
    fn empty_verdicts_cannot_be_scored() {
        assert!(matches!(
            hallucination_score(&[], &[]),
            Err(ScoreError::EmptyVerdicts)
        ));
    }

    #[test]
    fn boundary_is_inclusive() {
        let half = Score::from_ratio(1, 2);
        assert!(classify(half, "0.5".parse().unwrap()));
        assert!(!classify(half, "0.5001".parse().unwrap()));
    }

    #[test]
    fn threshold_parsing_and_bounds() {
        assert_eq!("0.5".parse::<Threshold>().unwrap().as_scaled_1e4(), 5_000);
        assert_eq!("0.55".parse::<Threshold>().unwrap().as_scaled_1e4(), 5_500);
        assert_eq!("1".parse::<Threshold>().unwrap().as_scaled_1e4(), 10_000);
        assert_eq!("0".parse::<Threshold>().unwrap().as_scaled_1e4(), 0);
        assert_eq!(".25".parse::<Threshold>().unwrap().as_scaled_1e4(), 2_500);
        assert!("1.01".parse::<Threshold>().is_err());
        assert!("1.5".parse::<Threshold>().is_err());
        assert!("-0.1".parse::<Threshold>().is_err());
        assert!("0.12345".parse::<Threshold>().is_err());
        assert!("abc".parse::<Threshold>().is_err());
    }

    #[test]
    fn four_decimal_rendering_rounds_half_up() {
        assert_eq!(Score::from_ratio(1, 3).to_4dp_string(), "0.3333");
        assert_eq!(Score::from_ratio(2, 3).to_4dp_string(), "0.6667");
        assert_eq!(Score::from_ratio(1, 8).to_4dp_string(), "0.1250");
        assert_eq!(Score::ONE.to_4dp_string(), "1.0000");
        assert_eq!(Score::ZERO.to_4dp_string(), "0.0000");
    }

    #[test]
    fn score_equality_is_value_equality() {
        assert_eq!(Score::from_ratio(15, 20), Score::from_ratio(3, 4));
        assert!(Score::from_ratio(1, 3) < Score::from_ratio(1, 2));
    }

    #[test]
    fn score_serde_round_trips_exactly() {
        let score = Score::from_ratio(1, 12);
        let json = serde_json::to_string(&score).unwrap();
        assert!(json.contains("\"0.0833\""));
        let back: Score = serde_json::from_str(&json).unwrap();
        assert_eq!(back, score);
    }
}
