//! Ground-truth labeling of base responses.
//!
//! The automatic pass compares a base response against each reference answer
//! with one LLM call per reference, short-circuiting on the first agreement.
//! Anything the automatic pass cannot settle lands in a human-editable
//! review queue; imported resolutions become manual labels. Labeling never
//! sees detection scores, so labels cannot leak into evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, StepTag, TokenUsage};
use crate::prompts::{parse_verdict, Bindings, PromptCatalog, PromptStep, VerdictValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelValue {
    Factual,
    Hallucination,
    NeedsReview,
}

impl fmt::Display for LabelValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelValue::Factual => "factual",
            LabelValue::Hallucination => "hallucination",
            LabelValue::NeedsReview => "needs_review",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMethod {
    Auto,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub value: LabelValue,
    pub method: LabelMethod,
    pub rationale: String,
}

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("review entry `{0}` has a blank resolution")]
    UnresolvedEntry(String),
    #[error("review entry `{0}` does not match any labeled question")]
    UnknownId(String),
    #[error("review file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("label file {path}: {reason}")]
    File { path: String, reason: String },
}

pub struct LabelSettings<'a> {
    pub model_id: &'a str,
    pub temperature: f64,
    pub max_verdict_tokens: u32,
}

/// Compares the base response against each reference in order. The first
/// `Yes` settles the label as factual; unanimous `No` settles hallucination;
/// any `Not Sure` without a `Yes` (including gateway failures) escalates to
/// review. The rationale records the per-reference verdicts seen.
pub fn auto_validate(
    question: &str,
    base_response: &str,
    references: &[String],
    gateway: &Gateway,
    catalog: &PromptCatalog,
    settings: &LabelSettings<'_>,
) -> (Label, TokenUsage) {
    assert!(!references.is_empty(), "references must be non-empty");
    let mut usage = TokenUsage::default();
    let mut seen = Vec::new();
    let mut any_not_sure = false;
    for (i, reference) in references.iter().enumerate() {
        let bindings = Bindings::new()
            .with("question", question)
            .with("answer", base_response)
            .with("reference", reference.as_str());
        let rendered = catalog.render(PromptStep::AutoValidate, &bindings);
        let verdict = match rendered {
            Ok((system_prompt, user_prompt)) => {
                let request = ChatRequest {
                    model_id: settings.model_id.to_string(),
                    system_prompt,
                    user_prompt,
                    temperature: settings.temperature,
                    max_tokens: settings.max_verdict_tokens,
                    tag: StepTag::LabelAuto,
                    nonce: None,
                };
                match gateway.cached_complete(&request) {
                    Ok(response) => {
                        usage.add(response.usage);
                        parse_verdict(&response.text).value
                    }
                    Err(err) => {
                        let label = Label {
                            value: LabelValue::NeedsReview,
                            method: LabelMethod::Auto,
                            rationale: format!(
                                "degraded: gateway error at reference {}: {err}; verdicts so far: {}",
                                i + 1,
                                render_rationale(&seen)
                            ),
                        };
                        return (label, usage);
                    }
                }
            }
            Err(err) => {
                let label = Label {
                    value: LabelValue::NeedsReview,
                    method: LabelMethod::Auto,
                    rationale: format!("degraded: render error: {err}"),
                };
                return (label, usage);
            }
        };
        seen.push(verdict);
        match verdict {
            VerdictValue::Yes => {
                // One entailed reference suffices for factuality.
                let label = Label {
                    value: LabelValue::Factual,
                    method: LabelMethod::Auto,
                    rationale: render_rationale(&seen),
                };
                return (label, usage);
            }
            VerdictValue::NotSure => any_not_sure = true,
            VerdictValue::No => {}
        }
    }
    let value = if any_not_sure {
        LabelValue::NeedsReview
    } else {
        LabelValue::Hallucination
    };
    (
        Label {
            value,
            method: LabelMethod::Auto,
            rationale: render_rationale(&seen),
        },
        usage,
    )
}

fn render_rationale(verdicts: &[VerdictValue]) -> String {
    verdicts
        .iter()
        .enumerate()
        .map(|(i, v)| format!("ref{}={}", i + 1, v))
        .collect::<Vec<_>>()
        .join("; ")
}

/// One labeled question in a label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledQuestion {
    pub question_id: String,
    #[serde(flatten)]
    pub label: Label,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelFileHeader {
    pub schema: String,
    pub model_id: String,
    pub dataset: String,
}

pub const LABEL_SCHEMA: &str = "metaqa.labels/1";

pub fn write_labels(
    path: &Path,
    header: &LabelFileHeader,
    labels: &BTreeMap<String, Label>,
) -> Result<(), LabelError> {
    let mut out = serde_json::to_string(header).expect("header serializes");
    out.push('\n');
    for (question_id, label) in labels {
        let entry = LabeledQuestion {
            question_id: question_id.clone(),
            label: label.clone(),
        };
        out.push_str(&serde_json::to_string(&entry).expect("label serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| LabelError::File {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn read_labels(path: &Path) -> Result<(LabelFileHeader, BTreeMap<String, Label>), LabelError> {
    let text = std::fs::read_to_string(path).map_err(|e| LabelError::File {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines.next().ok_or_else(|| LabelError::File {
        path: path.display().to_string(),
        reason: "empty label file".into(),
    })?;
    let header: LabelFileHeader =
        serde_json::from_str(header_line).map_err(|e| LabelError::File {
            path: path.display().to_string(),
            reason: format!("bad header: {e}"),
        })?;
    if header.schema != LABEL_SCHEMA {
        return Err(LabelError::File {
            path: path.display().to_string(),
            reason: format!("unsupported schema `{}`", header.schema),
        });
    }
    let mut labels = BTreeMap::new();
    for (index, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let entry: LabeledQuestion = serde_json::from_str(line).map_err(|e| LabelError::Parse {
            line: index + 1,
            reason: e.to_string(),
        })?;
        labels.insert(entry.question_id, entry.label);
    }
    Ok((header, labels))
}

/// One block in the review queue file.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewItem {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub references: Vec<String>,
    pub auto_rationale: String,
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Renders the review queue: one block per item needing review, stably
/// ordered by question id, each with an empty `resolution:` field to fill
/// with `factual` or `hallucination`.
pub fn export_review_queue(items: &[ReviewItem]) -> String {
    let mut sorted: Vec<&ReviewItem> = items.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = String::from(
        "# Manual review queue.\n\
         # Fill every `resolution:` line with `factual` or `hallucination`,\n\
         # then import the file with `review import`.\n",
    );
    for item in sorted {
        out.push('\n');
        out.push_str(&format!("id: {}\n", item.id));
        out.push_str(&format!("question: {}\n", one_line(&item.question)));
        out.push_str(&format!("answer: {}\n", one_line(&item.answer)));
        out.push_str("references:\n");
        for reference in &item.references {
            out.push_str(&format!("- {}\n", one_line(reference)));
        }
        out.push_str(&format!(
            "auto_rationale: {}\n",
            one_line(&item.auto_rationale)
        ));
        out.push_str("resolution:\n");
    }
    out
}

/// Parses a filled review queue into manual labels. Every entry must be
/// resolved, and every id must be one of `known_ids`.
pub fn import_resolutions(
    text: &str,
    known_ids: &BTreeSet<String>,
) -> Result<Vec<(String, Label)>, LabelError> {
    let mut out = Vec::new();
    let mut current_id: Option<(usize, String)> = None;
    let mut resolved_current = false;
    for (index, raw_line) in text.lines().enumerate() {
        let line_number = index + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(id) = line.strip_prefix("id:") {
            if let Some((at, unresolved)) = current_id.take() {
                if !resolved_current {
                    let _ = at;
                    return Err(LabelError::UnresolvedEntry(unresolved));
                }
            }
            current_id = Some((line_number, id.trim().to_string()));
            resolved_current = false;
            continue;
        }
        if let Some(resolution) = line.strip_prefix("resolution:") {
            let (_, id) = current_id.clone().ok_or(LabelError::Parse {
                line: line_number,
                reason: "resolution before any id".into(),
            })?;
            if !known_ids.contains(&id) {
                return Err(LabelError::UnknownId(id));
            }
            let value = match resolution.trim().to_ascii_lowercase().as_str() {
                "factual" => LabelValue::Factual,
                "hallucination" => LabelValue::Hallucination,
                "" => return Err(LabelError::UnresolvedEntry(id)),
                other => {
                    return Err(LabelError::Parse {
                        line: line_number,
                        reason: format!(
                            "resolution must be factual or hallucination, got `{other}`"
                        ),
                    })
                }
            };
            out.push((
                id,
                Label {
                    value,
                    method: LabelMethod::Manual,
                    rationale: "manual review resolution".into(),
                },
            ));
            resolved_current = true;
        }
    }
    if let Some((_, unresolved)) = current_id {
        if !resolved_current {
            return Err(LabelError::UnresolvedEntry(unresolved));
        }
    }
    Ok(out)
}

/// Applies manual resolutions over an auto-labeled set.
pub fn merge_resolutions(
    labels: &mut BTreeMap<String, Label>,
    resolutions: Vec<(String, Label)>,
) -> Result<(), LabelError> {
    for (id, label) in resolutions {
        match labels.get_mut(&id) {
            Some(slot) => *slot = label,
            None => return Err(LabelError::UnknownId(id)),
        }
    }
    Ok(())
}

/// True when every label is binary (no `NeedsReview` left).
pub fn finalized(labels: &BTreeMap<String, Label>) -> bool {
    labels.values().all(|l| l.value != LabelValue::NeedsReview)
}
