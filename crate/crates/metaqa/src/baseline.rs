//! Sampling-consistency baseline.
//!
//! Re-asks the same question `k` times at a higher temperature, then asks
//! the model whether each sampled answer supports the base response. The
//! score is the unsupported fraction: `(count(No) + 0.5 * count(NotSure)) / k`.
//! Classification reuses the same threshold rule as the mutation-based
//! detector, so sweeps over both methods are directly comparable.

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatRequest, Gateway, GatewayError, StepTag, TokenUsage};
use crate::prompts::{parse_verdict, Bindings, PromptCatalog, PromptStep, Verdict, VerdictValue};
use crate::score::{Score, ScoreError};

/// Per-question record of one baseline evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyTrace {
    pub question_id: String,
    pub question: String,
    pub base_response: String,
    pub samples: Vec<String>,
    pub support_verdicts: Vec<Verdict>,
    /// `None` when every sampling call failed (unscorable).
    pub score: Option<Score>,
    pub degraded: bool,
    pub usage: TokenUsage,
}

pub struct BaselineSettings<'a> {
    pub model_id: &'a str,
    /// Sampling temperature; deliberately higher than the detection
    /// temperature so samples can diverge.
    pub sample_temperature: f64,
    pub check_temperature: f64,
    pub max_answer_tokens: u32,
    pub max_verdict_tokens: u32,
}

/// Draws `k` independent answers to `question`. Each call carries a distinct
/// nonce so it occupies its own cache slot instead of replaying the first
/// sample; reruns over a warm cache replay all `k` deterministically. Failed
/// calls are dropped (the trace is marked degraded).
pub fn sample_responses(
    question_id: &str,
    question: &str,
    k: usize,
    gateway: &Gateway,
    catalog: &PromptCatalog,
    settings: &BaselineSettings<'_>,
) -> Result<(Vec<String>, TokenUsage, bool), GatewayError> {
    assert!(k >= 1, "sample count must be at least 1");
    let bindings = Bindings::new().with("question", question);
    let (system_prompt, user_prompt) = catalog
        .render(PromptStep::BaselineSample, &bindings)
        .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
    let mut samples = Vec::with_capacity(k);
    let mut usage = TokenUsage::default();
    let mut degraded = false;
    for i in 0..k {
        let request = ChatRequest {
            model_id: settings.model_id.to_string(),
            system_prompt: system_prompt.clone(),
            user_prompt: user_prompt.clone(),
            temperature: settings.sample_temperature,
            max_tokens: settings.max_answer_tokens,
            tag: StepTag::BaselineSample,
            nonce: Some(format!("{question_id}:sample:{i}")),
        };
        match gateway.cached_complete(&request) {
            Ok(response) => {
                usage.add(response.usage);
                samples.push(response.text);
            }
            Err(err) => {
                log::warn!("baseline sample {i} failed for {question_id}: {err}");
                degraded = true;
            }
        }
    }
    Ok((samples, usage, degraded))
}

/// Asks, per sample, whether it supports the base response, and scores the
/// unsupported fraction exactly.
pub fn consistency_score(
    question: &str,
    base: &str,
    samples: &[String],
    gateway: &Gateway,
    catalog: &PromptCatalog,
    settings: &BaselineSettings<'_>,
) -> Result<(Score, Vec<Verdict>, TokenUsage, bool), ScoreError> {
    if samples.is_empty() {
        return Err(ScoreError::EmptyVerdicts);
    }
    let mut verdicts = Vec::with_capacity(samples.len());
    let mut usage = TokenUsage::default();
    let mut degraded = false;
    for sample in samples {
        let bindings = Bindings::new()
            .with("question", question)
            .with("answer", base)
            .with("reference", sample.as_str());
        let rendered = catalog.render(PromptStep::BaselineCheck, &bindings);
        let verdict = match rendered {
            Ok((system_prompt, user_prompt)) => {
                let request = ChatRequest {
                    model_id: settings.model_id.to_string(),
                    system_prompt,
                    user_prompt,
                    temperature: settings.check_temperature,
                    max_tokens: settings.max_verdict_tokens,
                    tag: StepTag::BaselineCheck,
                    nonce: None,
                };
                match gateway.cached_complete(&request) {
                    Ok(response) => {
                        usage.add(response.usage);
                        parse_verdict(&response.text)
                    }
                    Err(err) => {
                        log::warn!("baseline support check failed: {err}");
                        degraded = true;
                        Verdict {
                            value: VerdictValue::NotSure,
                            raw_text: format!("<gateway error: {err}>"),
                            unparsed: true,
                        }
                    }
                }
            }
            Err(err) => {
                degraded = true;
                Verdict {
                    value: VerdictValue::NotSure,
                    raw_text: format!("<render error: {err}>"),
                    unparsed: true,
                }
            }
        };
        verdicts.push(verdict);
    }
    let score = unsupported_fraction(&verdicts)?;
    Ok((score, verdicts, usage, degraded))
}

/// `(count(No) + 0.5 * count(NotSure)) / k`, exact.
pub fn unsupported_fraction(verdicts: &[Verdict]) -> Result<Score, ScoreError> {
    if verdicts.is_empty() {
        return Err(ScoreError::EmptyVerdicts);
    }
    let half_points: u64 = verdicts
        .iter()
        .map(|v| match v.value {
            VerdictValue::Yes => 0,
            VerdictValue::No => 2,
            VerdictValue::NotSure => 1,
        })
        .sum();
    Ok(Score::from_ratio(half_points, 2 * verdicts.len() as u64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, MockScript, ScriptEntry};

    fn settings() -> BaselineSettings<'static> {
        BaselineSettings {
            model_id: "mock-model",
            sample_temperature: 0.5,
            check_temperature: 0.1,
            max_answer_tokens: 128,
            max_verdict_tokens: 16,
        }
    }

    fn verdicts(values: &[VerdictValue]) -> Vec<Verdict> {
        values
            .iter()
            .map(|&value| Verdict {
                value,
                raw_text: String::new(),
                unparsed: false,
            })
            .collect()
    }

    // Eight supporting samples and two non-supporting give 2/10.
    #[test]
    fn unsupported_fraction_worked_example() {
        let mut values = vec![VerdictValue::Yes; 8];
        values.extend([VerdictValue::No; 2]);
        let score = unsupported_fraction(&verdicts(&values)).unwrap();
        assert_eq!(score, Score::from_ratio(1, 5));
        assert_eq!(score.to_4dp_string(), "0.2000");
    }

    #[test]
    fn unanimous_support_scores_zero() {
        let score = unsupported_fraction(&verdicts(&[VerdictValue::Yes; 10])).unwrap();
        assert_eq!(score, Score::ZERO);
    }

    #[test]
    fn all_not_sure_scores_half() {
        let score = unsupported_fraction(&verdicts(&[VerdictValue::NotSure; 4])).unwrap();
        assert_eq!(score, Score::from_ratio(1, 2));
    }

    #[test]
    fn flipping_one_yes_to_no_raises_by_one_over_k() {
        for k in 1..=10usize {
            let mut values = vec![VerdictValue::Yes; k];
            let before = unsupported_fraction(&verdicts(&values)).unwrap();
            values[0] = VerdictValue::No;
            let after = unsupported_fraction(&verdicts(&values)).unwrap();
            let diff =
                after.numerator() * before.denominator() - before.numerator() * after.denominator();
            // after - before == 1/k, cross-multiplied.
            assert_eq!(
                diff as usize,
                (before.denominator() * after.denominator()) as usize / k
            );
        }
    }

    #[test]
    fn empty_samples_error() {
        assert!(matches!(
            unsupported_fraction(&[]),
            Err(ScoreError::EmptyVerdicts)
        ));
    }

    #[test]
    fn sampling_uses_distinct_cache_slots() {
        let script = MockScript::new(vec![
            ScriptEntry::tag_contains(StepTag::BaselineSample, "", "First answer.").once(),
            ScriptEntry::tag_contains(StepTag::BaselineSample, "", "Second answer.").once(),
            ScriptEntry::tag_contains(StepTag::BaselineSample, "", "Third answer."),
        ]);
        let gateway = Gateway::new(Box::new(MockBackend::new(script)), None, 4);
        let (samples, _, degraded) = sample_responses(
            "q1",
            "What is the capital of France?",
            4,
            &gateway,
            PromptCatalog::builtin(),
            &settings(),
        )
        .unwrap();
        assert_eq!(
            samples,
            vec![
                "First answer.",
                "Second answer.",
                "Third answer.",
                "Third answer."
            ]
        );
        assert!(!degraded);
    }

    #[test]
    fn failed_samples_are_dropped_and_marked() {
        let script = MockScript::new(vec![ScriptEntry::tag_contains(
            StepTag::BaselineSample,
            "",
            "Only answer.",
        )
        .once()]);
        let gateway = Gateway::new(Box::new(MockBackend::new(script)), None, 4);
        let (samples, _, degraded) = sample_responses(
            "q1",
            "Q?",
            3,
            &gateway,
            PromptCatalog::builtin(),
            &settings(),
        )
        .unwrap();
        assert_eq!(samples.len(), 1);
        assert!(degraded);
    }

    #[test]
    fn consistency_score_end_to_end_on_mock() {
        let script = MockScript::new(vec![
            ScriptEntry::tag_contains(StepTag::BaselineCheck, "Sample one", "Yes"),
            ScriptEntry::tag_contains(StepTag::BaselineCheck, "Sample two", "No"),
            ScriptEntry::tag_contains(StepTag::BaselineCheck, "Sample three", "Not sure"),
        ]);
        let gateway = Gateway::new(Box::new(MockBackend::new(script)), None, 4);
        let samples = vec![
            "Sample one.".to_string(),
            "Sample two.".to_string(),
            "Sample three.".to_string(),
        ];
        let (score, verdicts, _, degraded) = consistency_score(
            "Q?",
            "Base.",
            &samples,
            &gateway,
            PromptCatalog::builtin(),
            &settings(),
        )
        .unwrap();
        assert_eq!(verdicts.len(), 3);
        assert!(!degraded);
        // (0 + 1 + 0.5) / 3 = 0.5
        assert_eq!(score, Score::from_ratio(1, 2));
    }
}
