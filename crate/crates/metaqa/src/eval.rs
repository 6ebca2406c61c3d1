//! Evaluation harness: confusion counts, precision/recall/F1, threshold
//! sweeps, per-category breakdowns, multi-run stability, mutation-count
//! sensitivity, and hallucination-rate grids.
//!
//! The positive class is "hallucination" throughout: a true positive is a
//! labeled hallucination the detector classified as one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::QaRecord;
use crate::label::{Label, LabelValue};
use crate::mutation::Relation;
use crate::prompts::VerdictValue;
use crate::score::{classify, hallucination_score, DetectionTrace, Score, Threshold};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no label for question `{0}`")]
    MissingLabel(String),
    #[error(
        "label for question `{0}` is still needs_review; resolve it via the review workflow first"
    )]
    UnresolvedLabel(String),
    #[error("threshold grid must be strictly increasing within [0, 1]")]
    BadGrid,
    #[error("stability runs cover different question sets")]
    MismatchedRuns,
    #[error(
        "question `{id}` carries {have} {relation:?} verdicts, fewer than the {need} required"
    )]
    InsufficientMutations {
        id: String,
        relation: Relation,
        have: usize,
        need: usize,
    },
    #[error("reference results: {0}")]
    BadReference(String),
}

/// A question's score, as consumed by the harness. Unscorable traces carry
/// `None` and are excluded from confusion counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredQuestion {
    pub id: String,
    pub score: Option<Score>,
}

impl ScoredQuestion {
    pub fn new(id: impl Into<String>, score: Score) -> Self {
        Self {
            id: id.into(),
            score: Some(score),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn predicted_positives(&self) -> u64 {
        self.tp + self.fp
    }
}

/// Precision/recall/F1 at one threshold. A zero denominator renders the
/// metric as 0.0 with the matching `*_undefined` flag set, rather than NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub threshold: Threshold,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub precision_undefined: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub recall_undefined: bool,
}

fn binary_label(id: &str, labels: &BTreeMap<String, Label>) -> Result<bool, EvalError> {
    match labels.get(id) {
        None => Err(EvalError::MissingLabel(id.to_string())),
        Some(label) => match label.value {
            LabelValue::NeedsReview => Err(EvalError::UnresolvedLabel(id.to_string())),
            LabelValue::Hallucination => Ok(true),
            LabelValue::Factual => Ok(false),
        },
    }
}

/// Counts the confusion matrix of classified scores against binary labels.
pub fn confusion(
    scored: &[ScoredQuestion],
    labels: &BTreeMap<String, Label>,
    threshold: Threshold,
) -> Result<ConfusionCounts, EvalError> {
    let mut counts = ConfusionCounts::default();
    for question in scored {
        let is_hallucination = binary_label(&question.id, labels)?;
        let Some(score) = question.score else {
            continue;
        };
        let predicted = classify(score, threshold);
        match (is_hallucination, predicted) {
            (true, true) => counts.tp += 1,
            (false, true) => counts.fp += 1,
            (false, false) => counts.tn += 1,
            (true, false) => counts.fn_ += 1,
        }
    }
    Ok(counts)
}

/// Derives precision, recall, and F1 from confusion counts.
pub fn metrics(counts: ConfusionCounts, threshold: Threshold) -> Metrics {
    let precision_denominator = counts.tp + counts.fp;
    let recall_denominator = counts.tp + counts.fn_;
    let precision_undefined = precision_denominator == 0;
    let recall_undefined = recall_denominator == 0;
    let precision = if precision_undefined {
        0.0
    } else {
        counts.tp as f64 / precision_denominator as f64
    };
    let recall = if recall_undefined {
        0.0
    } else {
        counts.tp as f64 / recall_denominator as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Metrics {
        threshold,
        precision,
        recall,
        f1,
        counts,
        precision_undefined,
        recall_undefined,
    }
}

pub fn evaluate(
    scored: &[ScoredQuestion],
    labels: &BTreeMap<String, Label>,
    threshold: Threshold,
) -> Result<Metrics, EvalError> {
    Ok(metrics(confusion(scored, labels, threshold)?, threshold))
}

/// The 13-point default sweep grid: 0.20 to 0.80 in steps of 0.05.
pub fn default_sweep_grid() -> Vec<Threshold> {
    (2_000..=8_000)
        .step_by(500)
        .map(|scaled| Threshold::from_basis_points_1e4(scaled).unwrap())
        .collect()
}

fn check_grid(grid: &[Threshold]) -> Result<(), EvalError> {
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::BadGrid);
    }
    Ok(())
}

/// Metrics at every grid point.
pub fn threshold_sweep(
    scored: &[ScoredQuestion],
    labels: &BTreeMap<String, Label>,
    grid: &[Threshold],
) -> Result<Vec<Metrics>, EvalError> {
    check_grid(grid)?;
    grid.iter()
        .map(|&threshold| evaluate(scored, labels, threshold))
        .collect()
}

/// Paired per-threshold deltas (first method minus second).
#[derive(Debug, Clone, Serialize)]
pub struct SweepDelta {
    pub threshold: Threshold,
    pub precision_delta: f64,
    pub recall_delta: f64,
    pub f1_delta: f64,
}

pub fn paired_sweep(first: &[Metrics], second: &[Metrics]) -> Vec<SweepDelta> {
    first
        .iter()
        .zip(second)
        .filter(|(a, b)| a.threshold == b.threshold)
        .map(|(a, b)| SweepDelta {
            threshold: a.threshold,
            precision_delta: a.precision - b.precision,
            recall_delta: a.recall - b.recall,
            f1_delta: a.f1 - b.f1,
        })
        .collect()
}

/// Per-category rollup. The detected fraction is reported both ways the
/// breakdown can be read: as a share of that category's labeled
/// hallucinations (`None` when the category has no hallucinations) and as a
/// share of all its questions.
#[derive(Debug, Clone, Serialize)]
pub struct CategoryReport {
    pub category: String,
    pub questions: u64,
    pub hallucinations: u64,
    pub hallucination_rate: f64,
    pub detected_of_hallucinated: Option<f64>,
    pub detected_of_all: f64,
    pub metrics: Metrics,
}

pub fn category_breakdown(
    scored: &[ScoredQuestion],
    labels: &BTreeMap<String, Label>,
    records: &[QaRecord],
    threshold: Threshold,
) -> Result<Vec<CategoryReport>, EvalError> {
    let category_of: BTreeMap<&str, &str> = records
        .iter()
        .filter_map(|r| r.category.as_deref().map(|c| (r.id.as_str(), c)))
        .collect();
    let mut by_category: BTreeMap<String, Vec<ScoredQuestion>> = BTreeMap::new();
    for question in scored {
        if let Some(category) = category_of.get(question.id.as_str()) {
            by_category
                .entry((*category).to_string())
                .or_default()
                .push(question.clone());
        }
    }
    let mut reports = Vec::new();
    for (category, questions) in by_category {
        let counts = confusion(&questions, labels, threshold)?;
        let m = metrics(counts, threshold);
        let total = counts.total();
        let hallucinations = counts.tp + counts.fn_;
        reports.push(CategoryReport {
            category,
            questions: total,
            hallucinations,
            hallucination_rate: if total > 0 {
                hallucinations as f64 / total as f64
            } else {
                0.0
            },
            detected_of_hallucinated: (hallucinations > 0)
                .then(|| counts.tp as f64 / hallucinations as f64),
            detected_of_all: if total > 0 {
                counts.tp as f64 / total as f64
            } else {
                0.0
            },
            metrics: m,
        });
    }
    Ok(reports)
}

/// Mean and population standard deviation of a metric triple across runs.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MetricSpread {
    pub mean: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityPoint {
    pub threshold: Threshold,
    pub precision: MetricSpread,
    pub recall: MetricSpread,
    pub f1: MetricSpread,
}

fn spread(values: &[f64]) -> MetricSpread {
    // Identical values have zero deviation by definition; computing it
    // through the mean would manufacture rounding noise (3v/3 need not
    // round back to v).
    if values.windows(2).all(|w| w[0] == w[1]) {
        return MetricSpread {
            mean: values[0],
            deviation: 0.0,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MetricSpread {
        mean,
        deviation: variance.sqrt(),
    }
}

/// Per-threshold mean and deviation of P/R/F1 across at least two runs over
/// the same question set.
pub fn stability_report(
    runs: &[Vec<ScoredQuestion>],
    labels: &BTreeMap<String, Label>,
    grid: &[Threshold],
) -> Result<Vec<StabilityPoint>, EvalError> {
    check_grid(grid)?;
    if runs.len() < 2 {
        return Err(EvalError::MismatchedRuns);
    }
    let reference: Vec<&str> = runs[0].iter().map(|q| q.id.as_str()).collect();
    for run in &runs[1..] {
        let ids: Vec<&str> = run.iter().map(|q| q.id.as_str()).collect();
        if ids != reference {
            return Err(EvalError::MismatchedRuns);
        }
    }
    let per_run: Vec<Vec<Metrics>> = runs
        .iter()
        .map(|run| threshold_sweep(run, labels, grid))
        .collect::<Result<_, _>>()?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, &threshold)| {
            let precisions: Vec<f64> = per_run.iter().map(|r| r[i].precision).collect();
            let recalls: Vec<f64> = per_run.iter().map(|r| r[i].recall).collect();
            let f1s: Vec<f64> = per_run.iter().map(|r| r[i].f1).collect();
            StabilityPoint {
                threshold,
                precision: spread(&precisions),
                recall: spread(&recalls),
                f1: spread(&f1s),
            }
        })
        .collect())
}

/// Verdicts of one trace split by relation, in generation order.
fn verdicts_by_relation(trace: &DetectionTrace) -> (Vec<VerdictValue>, Vec<VerdictValue>) {
    let mut syn = Vec::new();
    let mut ant = Vec::new();
    for verified in &trace.verified {
        match verified.mutation.relation {
            Relation::Synonymy => syn.push(verified.verdict.value),
            Relation::Antonymy => ant.push(verified.verdict.value),
        }
    }
    (syn, ant)
}

/// How a sensitivity analysis picks `k` verdicts out of a full trace:
/// the first ones in generation order (how a cheaper run would have
/// behaved), or a seeded random subset per relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncationOrder {
    GenerationOrder,
    RandomSubsample { seed: u64 },
}

fn pick<T: Copy>(items: &[T], take: usize, order: TruncationOrder, salt: u64) -> Vec<T> {
    match order {
        TruncationOrder::GenerationOrder => items[..take].to_vec(),
        TruncationOrder::RandomSubsample { seed } => {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ salt);
            let mut indices: Vec<usize> = (0..items.len()).collect();
            indices.shuffle(&mut rng);
            let mut chosen: Vec<usize> = indices.into_iter().take(take).collect();
            chosen.sort_unstable();
            chosen.into_iter().map(|i| items[i]).collect()
        }
    }
}

fn subsample_salt(question_id: &str, relation: Relation) -> u64 {
    // Stable per (question, relation) so repeated analyses agree.
    let mut hash = match relation {
        Relation::Synonymy => 0x53u64,
        Relation::Antonymy => 0x41u64,
    };
    for byte in question_id.bytes() {
        hash = hash
            .wrapping_mul(0x100000001b3)
            .wrapping_add(u64::from(byte));
    }
    hash
}

/// Rescores a trace as if only `ceil(k/2)` synonym and `floor(k/2)` antonym
/// verdicts had been collected, picked per `order`.
pub fn truncated_score_with(
    trace: &DetectionTrace,
    k: usize,
    order: TruncationOrder,
) -> Result<Score, EvalError> {
    let take_syn = k.div_ceil(2);
    let take_ant = k / 2;
    let (syn, ant) = verdicts_by_relation(trace);
    if syn.len() < take_syn {
        return Err(EvalError::InsufficientMutations {
            id: trace.question_id.clone(),
            relation: Relation::Synonymy,
            have: syn.len(),
            need: take_syn,
        });
    }
    if ant.len() < take_ant {
        return Err(EvalError::InsufficientMutations {
            id: trace.question_id.clone(),
            relation: Relation::Antonymy,
            have: ant.len(),
            need: take_ant,
        });
    }
    let syn_picked = pick(
        &syn,
        take_syn,
        order,
        subsample_salt(&trace.question_id, Relation::Synonymy),
    );
    let ant_picked = pick(
        &ant,
        take_ant,
        order,
        subsample_salt(&trace.question_id, Relation::Antonymy),
    );
    hallucination_score(&syn_picked, &ant_picked).map_err(|_| EvalError::InsufficientMutations {
        id: trace.question_id.clone(),
        relation: Relation::Synonymy,
        have: 0,
        need: 1,
    })
}

/// First-k truncation in generation order.
pub fn truncated_score(trace: &DetectionTrace, k: usize) -> Result<Score, EvalError> {
    truncated_score_with(trace, k, TruncationOrder::GenerationOrder)
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityPoint {
    pub threshold: Threshold,
    pub mutation_count: usize,
    pub metrics: Metrics,
}

/// Metrics after truncating every question to `k` mutations, for each `k`
/// in the grid and each threshold in the set.
pub fn mutation_count_sensitivity_with(
    traces: &[DetectionTrace],
    labels: &BTreeMap<String, Label>,
    thresholds: &[Threshold],
    k_grid: &[usize],
    order: TruncationOrder,
) -> Result<Vec<SensitivityPoint>, EvalError> {
    let mut points = Vec::new();
    for &k in k_grid {
        let scored: Vec<ScoredQuestion> = traces
            .iter()
            .map(|trace| {
                truncated_score_with(trace, k, order)
                    .map(|score| ScoredQuestion::new(trace.question_id.clone(), score))
            })
            .collect::<Result<_, _>>()?;
        for &threshold in thresholds {
            points.push(SensitivityPoint {
                threshold,
                mutation_count: k,
                metrics: evaluate(&scored, labels, threshold)?,
            });
        }
    }
    Ok(points)
}

/// Sensitivity with first-k truncation.
pub fn mutation_count_sensitivity(
    traces: &[DetectionTrace],
    labels: &BTreeMap<String, Label>,
    thresholds: &[Threshold],
    k_grid: &[usize],
) -> Result<Vec<SensitivityPoint>, EvalError> {
    mutation_count_sensitivity_with(
        traces,
        labels,
        thresholds,
        k_grid,
        TruncationOrder::GenerationOrder,
    )
}

/// One cell of the hallucination-rate grid.
#[derive(Debug, Clone, Serialize)]
pub struct HeatmapCell {
    pub model: String,
    pub dataset: String,
    pub questions: u64,
    pub hallucination_rate: f64,
}

/// Labeled-hallucination fraction per (model, dataset) label set.
pub fn hallucination_rate_heatmap(
    cells: &[(String, String, BTreeMap<String, Label>)],
) -> Vec<HeatmapCell> {
    cells
        .iter()
        .map(|(model, dataset, labels)| {
            let total = labels.len() as u64;
            let hallucinated = labels
                .values()
                .filter(|l| l.value == LabelValue::Hallucination)
                .count() as u64;
            HeatmapCell {
                model: model.clone(),
                dataset: dataset.clone(),
                questions: total,
                hallucination_rate: if total > 0 {
                    hallucinated as f64 / total as f64
                } else {
                    0.0
                },
            }
        })
        .collect()
}

/// One row of a published-results reference file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub method: String,
    pub model: String,
    pub dataset: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityCheck {
    pub row: ReferenceRow,
    pub computed_f1: f64,
    pub deviation: f64,
}

/// Parses the tab-separated reference-results file (method, model, dataset,
/// precision, recall, f1; `#` comments allowed).
pub fn parse_reference_rows(text: &str) -> Result<Vec<ReferenceRow>, EvalError> {
    let mut rows = Vec::new();
    for (index, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(EvalError::BadReference(format!(
                "line {}: expected 6 tab-separated fields, got {}",
                index + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64, EvalError> {
            s.parse().map_err(|_| {
                EvalError::BadReference(format!("line {}: bad number `{s}`", index + 1))
            })
        };
        rows.push(ReferenceRow {
            method: fields[0].to_string(),
            model: fields[1].to_string(),
            dataset: fields[2].to_string(),
            precision: parse(fields[3])?,
            recall: parse(fields[4])?,
            f1: parse(fields[5])?,
        });
    }
    Ok(rows)
}

/// Checks every reference row against the harmonic-mean identity
/// `F1 = 2PR / (P + R)` and reports the deviation.
pub fn f1_identity_report(rows: &[ReferenceRow]) -> Vec<IdentityCheck> {
    rows.iter()
        .map(|row| {
            let computed_f1 = if row.precision + row.recall > 0.0 {
                2.0 * row.precision * row.recall / (row.precision + row.recall)
            } else {
                0.0
            };
            IdentityCheck {
                row: row.clone(),
                computed_f1,
                deviation: (row.f1 - computed_f1).abs(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::LabelMethod;

    fn label(value: LabelValue) -> Label {
        Label {
            value,
            method: LabelMethod::Auto,
            rationale: String::new(),
        }
    }

    fn labels_of(pairs: &[(&str, LabelValue)]) -> BTreeMap<String, Label> {
        pairs
            .iter()
            .map(|(id, value)| (id.to_string(), label(*value)))
            .collect()
    }

    fn scored_of(pairs: &[(&str, (u64, u64))]) -> Vec<ScoredQuestion> {
        pairs
            .iter()
            .map(|(id, (num, den))| ScoredQuestion::new(*id, Score::from_ratio(*num, *den)))
            .collect()
    }

    fn theta(s: &str) -> Threshold {
        s.parse().unwrap()
    }

    // Hand-enumerated: scores [0.75, 0.2, 0.6, 0.0], labels [H, F, F, F],
    // threshold 0.5: q1 is a true positive, q3 a false positive, q2 and q4
    // true negatives.
    #[test]
    fn confusion_hand_enumeration() {
        let scored = scored_of(&[
            ("q1", (3, 4)),
            ("q2", (1, 5)),
            ("q3", (3, 5)),
            ("q4", (0, 1)),
        ]);
        let labels = labels_of(&[
            ("q1", LabelValue::Hallucination),
            ("q2", LabelValue::Factual),
            ("q3", LabelValue::Factual),
            ("q4", LabelValue::Factual),
        ]);
        let counts = confusion(&scored, &labels, theta("0.5")).unwrap();
        assert_eq!(
            counts,
            ConfusionCounts {
                tp: 1,
                fp: 1,
                tn: 2,
                fn_: 0
            }
        );
    }

    #[test]
    fn empty_trace_set_counts_zero() {
        let counts = confusion(&[], &BTreeMap::new(), theta("0.5")).unwrap();
        assert_eq!(counts.total(), 0);
    }

    #[test]
    fn missing_and_unresolved_labels_error() {
        let scored = scored_of(&[("q1", (1, 2))]);
        assert!(matches!(
            confusion(&scored, &BTreeMap::new(), theta("0.5")),
            Err(EvalError::MissingLabel(id)) if id == "q1"
        ));
        let labels = labels_of(&[("q1", LabelValue::NeedsReview)]);
        assert!(matches!(
            confusion(&scored, &labels, theta("0.5")),
            Err(EvalError::UnresolvedLabel(id)) if id == "q1"
        ));
    }

    #[test]
    fn metrics_direct_formula() {
        let m = metrics(
            ConfusionCounts {
                tp: 3,
                fp: 1,
                tn: 0,
                fn_: 2,
            },
            theta("0.5"),
        );
        assert!((m.precision - 0.75).abs() < 1e-12);
        assert!((m.recall - 0.6).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!(!m.precision_undefined);
    }

    #[test]
    fn zero_denominator_is_flagged_not_nan() {
        let m = metrics(
            ConfusionCounts {
                tp: 0,
                fp: 0,
                tn: 5,
                fn_: 0,
            },
            theta("0.5"),
        );
        assert_eq!(m.precision, 0.0);
        assert!(m.precision_undefined);
        assert!(m.recall_undefined);
        assert_eq!(m.f1, 0.0);
    }

    // Consistency with a published triple: P=0.739, R=0.459 give F1 within
    // a thousandth of the reported 0.567.
    #[test]
    fn f1_matches_reported_triple() {
        let rows = vec![ReferenceRow {
            method: "MetaQA".into(),
            model: "GPT-4o".into(),
            dataset: "TruthfulQA-Enhanced".into(),
            precision: 0.739,
            recall: 0.459,
            f1: 0.567,
        }];
        let checks = f1_identity_report(&rows);
        assert!(checks[0].deviation <= 0.001);
    }

    #[test]
    fn default_grid_has_13_points() {
        let grid = default_sweep_grid();
        assert_eq!(grid.len(), 13);
        assert_eq!(grid[0], theta("0.2"));
        assert_eq!(grid[1], theta("0.25"));
        assert_eq!(grid[12], theta("0.8"));
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let scored = scored_of(&[("q1", (1, 2))]);
        let labels = labels_of(&[("q1", LabelValue::Factual)]);
        assert!(matches!(
            threshold_sweep(&scored, &labels, &[]),
            Err(EvalError::BadGrid)
        ));
        let unsorted = [theta("0.5"), theta("0.2")];
        assert!(matches!(
            threshold_sweep(&scored, &labels, &unsorted),
            Err(EvalError::BadGrid)
        ));
    }

    #[test]
    fn recall_and_predicted_positives_non_increasing_in_threshold() {
        let scored = scored_of(&[
            ("q1", (15, 20)),
            ("q2", (4, 20)),
            ("q3", (12, 20)),
            ("q4", (0, 20)),
            ("q5", (20, 20)),
            ("q6", (10, 20)),
        ]);
        let labels = labels_of(&[
            ("q1", LabelValue::Hallucination),
            ("q2", LabelValue::Factual),
            ("q3", LabelValue::Factual),
            ("q4", LabelValue::Factual),
            ("q5", LabelValue::Hallucination),
            ("q6", LabelValue::Hallucination),
        ]);
        let sweep = threshold_sweep(&scored, &labels, &default_sweep_grid()).unwrap();
        for pair in sweep.windows(2) {
            assert!(pair[1].recall <= pair[0].recall + 1e-12);
            assert!(pair[1].counts.predicted_positives() <= pair[0].counts.predicted_positives());
        }
    }

    // A score of 0.75 counts as positive at threshold 0.75 and negative at
    // 0.76 (the boundary is inclusive).
    #[test]
    fn classification_flips_just_above_the_score() {
        let scored = scored_of(&[("q1", (3, 4))]);
        let labels = labels_of(&[("q1", LabelValue::Hallucination)]);
        let at = confusion(&scored, &labels, theta("0.75")).unwrap();
        assert_eq!(at.tp, 1);
        let above = confusion(&scored, &labels, theta("0.76")).unwrap();
        assert_eq!(above.fn_, 1);
    }

    #[test]
    fn unscorable_questions_are_excluded_from_counts() {
        let scored = vec![
            ScoredQuestion::new("q1", Score::from_ratio(1, 1)),
            ScoredQuestion {
                id: "q2".into(),
                score: None,
            },
        ];
        let labels = labels_of(&[
            ("q1", LabelValue::Hallucination),
            ("q2", LabelValue::Factual),
        ]);
        let counts = confusion(&scored, &labels, theta("0.5")).unwrap();
        assert_eq!(counts.total(), 1);
    }

    #[test]
    fn category_partition_sums_to_overall() {
        let records: Vec<QaRecord> = [
            ("q1", "Law"),
            ("q2", "Law"),
            ("q3", "Health"),
            ("q4", "Health"),
        ]
        .iter()
        .map(|(id, category)| QaRecord {
            id: id.to_string(),
            question: "Q?".into(),
            best_answer: None,
            correct_answers: vec!["a".into()],
            new_answers: vec![],
            verification_url: None,
            category: Some(category.to_string()),
            source: Default::default(),
        })
        .collect();
        let scored = scored_of(&[
            ("q1", (15, 20)),
            ("q2", (2, 20)),
            ("q3", (18, 20)),
            ("q4", (1, 20)),
        ]);
        let labels = labels_of(&[
            ("q1", LabelValue::Hallucination),
            ("q2", LabelValue::Factual),
            ("q3", LabelValue::Factual),
            ("q4", LabelValue::Factual),
        ]);
        let threshold = theta("0.5");
        let reports = category_breakdown(&scored, &labels, &records, threshold).unwrap();
        assert_eq!(reports.len(), 2);
        let overall = confusion(&scored, &labels, threshold).unwrap();
        let summed = reports
            .iter()
            .fold(ConfusionCounts::default(), |mut acc, r| {
                acc.tp += r.metrics.counts.tp;
                acc.fp += r.metrics.counts.fp;
                acc.tn += r.metrics.counts.tn;
                acc.fn_ += r.metrics.counts.fn_;
                acc
            });
        assert_eq!(summed, overall);
    }

    #[test]
    fn category_without_hallucinations_flags_detected_fraction() {
        let records = vec![QaRecord {
            id: "q1".into(),
            question: "Q?".into(),
            best_answer: None,
            correct_answers: vec!["a".into()],
            new_answers: vec![],
            verification_url: None,
            category: Some("Health".into()),
            source: Default::default(),
        }];
        let scored = scored_of(&[("q1", (1, 20))]);
        let labels = labels_of(&[("q1", LabelValue::Factual)]);
        let reports = category_breakdown(&scored, &labels, &records, theta("0.5")).unwrap();
        assert_eq!(reports[0].detected_of_hallucinated, None);
        assert_eq!(reports[0].hallucination_rate, 0.0);
    }

    fn trace_with_verdicts(id: &str, syn: &[VerdictValue], ant: &[VerdictValue]) -> DetectionTrace {
        use crate::mutation::Mutation;
        use crate::prompts::Verdict;
        use crate::verify::VerifiedMutation;
        let mut verified = Vec::new();
        for (relation, list) in [(Relation::Synonymy, syn), (Relation::Antonymy, ant)] {
            for (i, &value) in list.iter().enumerate() {
                verified.push(VerifiedMutation {
                    mutation: Mutation {
                        text: format!("{relation:?} {i}"),
                        relation,
                        index: i,
                        flags: Default::default(),
                    },
                    verdict: Verdict {
                        value,
                        raw_text: String::new(),
                        unparsed: false,
                    },
                    usage: Default::default(),
                    degraded: false,
                });
            }
        }
        let score = hallucination_score(syn, ant).ok();
        DetectionTrace {
            question_id: id.into(),
            question: "Q?".into(),
            base_response: "A.".into(),
            verified,
            syn_count: syn.len(),
            ant_count: ant.len(),
            score,
            threshold: theta("0.5"),
            classified_hallucination: score.map(|s| classify(s, theta("0.5"))),
            degraded: false,
            usage: Default::default(),
        }
    }

    #[test]
    fn random_subsampling_is_seeded_and_full_k_matches_untruncated() {
        use VerdictValue::{No, NotSure, Yes};
        let trace = trace_with_verdicts(
            "q1",
            &[No, Yes, NotSure, No, Yes],
            &[Yes, No, Yes, NotSure, No],
        );
        let order = TruncationOrder::RandomSubsample { seed: 9 };
        let a = truncated_score_with(&trace, 4, order).unwrap();
        let b = truncated_score_with(&trace, 4, order).unwrap();
        assert_eq!(a, b, "same seed, same subsample");
        // Picking all ten is the identity regardless of order.
        let full_random = truncated_score_with(&trace, 10, order).unwrap();
        let full_first = truncated_score(&trace, 10).unwrap();
        assert_eq!(full_random, full_first);
        assert_eq!(full_first, trace.score.unwrap());
    }

    #[test]
    fn insufficient_mutations_error_names_the_question() {
        use VerdictValue::Yes;
        let trace = trace_with_verdicts("q9", &[Yes, Yes], &[Yes]);
        match truncated_score(&trace, 10) {
            Err(EvalError::InsufficientMutations { id, .. }) => assert_eq!(id, "q9"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stability_zero_deviation_for_identical_runs() {
        let run = scored_of(&[("q1", (15, 20)), ("q2", (2, 20))]);
        let labels = labels_of(&[
            ("q1", LabelValue::Hallucination),
            ("q2", LabelValue::Factual),
        ]);
        let report = stability_report(
            &[run.clone(), run.clone(), run],
            &labels,
            &default_sweep_grid(),
        )
        .unwrap();
        for point in report {
            assert_eq!(point.precision.deviation, 0.0);
            assert_eq!(point.recall.deviation, 0.0);
            assert_eq!(point.f1.deviation, 0.0);
        }
    }

    #[test]
    fn stability_mean_and_deviation_formula() {
        // Two runs whose F1 at one threshold are 0.5 and 0.7: mean 0.6,
        // population deviation 0.1.
        let labels = labels_of(&[
            ("q1", LabelValue::Hallucination),
            ("q2", LabelValue::Hallucination),
            ("q3", LabelValue::Factual),
            ("q4", LabelValue::Factual),
            ("q5", LabelValue::Hallucination),
        ]);
        // Run A: tp=1 (q1), fn=2, fp=1 (q3) -> P=1/2, R=1/3, F1=0.4.
        let run_a = scored_of(&[
            ("q1", (20, 20)),
            ("q2", (0, 20)),
            ("q3", (20, 20)),
            ("q4", (0, 20)),
            ("q5", (0, 20)),
        ]);
        // Run B: tp=3, fp=0 -> P=1, R=1, F1=1.
        let run_b = scored_of(&[
            ("q1", (20, 20)),
            ("q2", (20, 20)),
            ("q3", (0, 20)),
            ("q4", (0, 20)),
            ("q5", (20, 20)),
        ]);
        let grid = [theta("0.5")];
        let report = stability_report(&[run_a, run_b], &labels, &grid).unwrap();
        let f1 = report[0].f1;
        assert!((f1.mean - 0.7).abs() < 1e-12);
        assert!((f1.deviation - 0.3).abs() < 1e-12);
    }

    // Two runs with F1 0.5 and 0.7 at one threshold: mean 0.6, population
    // deviation 0.1.
    #[test]
    fn spread_direct_formula() {
        let s = spread(&[0.5, 0.7]);
        assert!((s.mean - 0.6).abs() < 1e-12);
        assert!((s.deviation - 0.1).abs() < 1e-12);
    }

    #[test]
    fn stability_rejects_mismatched_question_sets() {
        let labels = labels_of(&[("q1", LabelValue::Factual), ("q2", LabelValue::Factual)]);
        let run_a = scored_of(&[("q1", (1, 2))]);
        let run_b = scored_of(&[("q2", (1, 2))]);
        assert!(matches!(
            stability_report(&[run_a, run_b], &labels, &[theta("0.5")]),
            Err(EvalError::MismatchedRuns)
        ));
    }

    #[test]
    fn heatmap_rates() {
        let all_factual = labels_of(&[("q1", LabelValue::Factual), ("q2", LabelValue::Factual)]);
        let half: BTreeMap<String, Label> = (0..10)
            .map(|i| {
                let value = if i < 5 {
                    LabelValue::Hallucination
                } else {
                    LabelValue::Factual
                };
                (format!("q{i}"), label(value))
            })
            .collect();
        let cells = vec![
            ("m1".to_string(), "d1".to_string(), all_factual),
            ("m1".to_string(), "d2".to_string(), half),
        ];
        let grid = hallucination_rate_heatmap(&cells);
        assert_eq!(grid[0].hallucination_rate, 0.0);
        assert_eq!(grid[1].hallucination_rate, 0.5);
    }

    #[test]
    fn reference_rows_parse() {
        let text = "# comment\nMetaQA\tGPT-4o\tTruthfulQA-Enhanced\t0.739\t0.459\t0.567\n";
        let rows = parse_reference_rows(text).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].model, "GPT-4o");
        assert!(parse_reference_rows("too\tfew\tfields\n").is_err());
    }
}
