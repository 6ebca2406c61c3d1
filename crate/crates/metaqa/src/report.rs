//! Text tables and delimiter-separated exports for every result surface.
//!
//! Human-readable tables go to the terminal; TSV exports feed external
//! plotting. No plotting happens here.

use crate::eval::{
    CategoryReport, HeatmapCell, IdentityCheck, Metrics, SensitivityPoint, StabilityPoint,
    SweepDelta,
};
use crate::gateway::{growth_rate_percent, StepTag, UsageReport};

fn undefined_mark(flag: bool) -> &'static str {
    if flag {
        "*"
    } else {
        ""
    }
}

/// One metrics row as a human-readable line. Flagged (zero-denominator)
/// metrics are starred.
pub fn metrics_table(rows: &[Metrics]) -> String {
    let mut out =
        String::from("threshold  precision  recall     f1         tp     fp     tn     fn\n");
    for m in rows {
        out.push_str(&format!(
            "{:<9}  {:<9}  {:<9}  {:<9}  {:<5}  {:<5}  {:<5}  {:<5}\n",
            m.threshold.to_string_trimmed(),
            format!(
                "{:.3}{}",
                m.precision,
                undefined_mark(m.precision_undefined)
            ),
            format!("{:.3}{}", m.recall, undefined_mark(m.recall_undefined)),
            format!("{:.3}", m.f1),
            m.counts.tp,
            m.counts.fp,
            m.counts.tn,
            m.counts.fn_,
        ));
    }
    out
}

pub fn metrics_tsv(rows: &[Metrics]) -> String {
    let mut out = String::from(
        "threshold\tprecision\trecall\tf1\ttp\tfp\ttn\tfn\tprecision_undefined\trecall_undefined\n",
    );
    for m in rows {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            m.threshold.to_string_trimmed(),
            m.precision,
            m.recall,
            m.f1,
            m.counts.tp,
            m.counts.fp,
            m.counts.tn,
            m.counts.fn_,
            m.precision_undefined,
            m.recall_undefined,
        ));
    }
    out
}

pub fn deltas_table(deltas: &[SweepDelta]) -> String {
    let mut out = String::from("threshold  d_precision  d_recall   d_f1\n");
    for d in deltas {
        out.push_str(&format!(
            "{:<9}  {:<+11.3}  {:<+9.3}  {:<+9.3}\n",
            d.threshold.to_string_trimmed(),
            d.precision_delta,
            d.recall_delta,
            d.f1_delta,
        ));
    }
    out
}

pub fn category_table(reports: &[CategoryReport]) -> String {
    let mut out = String::from(
        "category                  n      halluc  rate    detected/halluc  detected/all  precision  recall\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{:<24}  {:<5}  {:<6}  {:<6.3}  {:<15}  {:<12.3}  {:<9.3}  {:<6.3}\n",
            r.category,
            r.questions,
            r.hallucinations,
            r.hallucination_rate,
            r.detected_of_hallucinated
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "undef*".into()),
            r.detected_of_all,
            r.metrics.precision,
            r.metrics.recall,
        ));
    }
    out
}

pub fn category_tsv(reports: &[CategoryReport]) -> String {
    let mut out = String::from(
        "category\tquestions\thallucinations\thallucination_rate\tdetected_of_hallucinated\tdetected_of_all\tprecision\trecall\tf1\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            r.category,
            r.questions,
            r.hallucinations,
            r.hallucination_rate,
            r.detected_of_hallucinated
                .map(|v| format!("{v:.6}"))
                .unwrap_or_else(|| "undefined".into()),
            r.detected_of_all,
            r.metrics.precision,
            r.metrics.recall,
            r.metrics.f1,
        ));
    }
    out
}

pub fn stability_table(points: &[StabilityPoint]) -> String {
    let mut out = String::from("threshold  precision(mean/dev)  recall(mean/dev)   f1(mean/dev)\n");
    for p in points {
        out.push_str(&format!(
            "{:<9}  {:.3} / {:<11.6}  {:.3} / {:<9.6}  {:.3} / {:.6}\n",
            p.threshold.to_string_trimmed(),
            p.precision.mean,
            p.precision.deviation,
            p.recall.mean,
            p.recall.deviation,
            p.f1.mean,
            p.f1.deviation,
        ));
    }
    out
}

pub fn stability_tsv(points: &[StabilityPoint]) -> String {
    let mut out = String::from(
        "threshold\tprecision_mean\tprecision_dev\trecall_mean\trecall_dev\tf1_mean\tf1_dev\n",
    );
    for p in points {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            p.threshold.to_string_trimmed(),
            p.precision.mean,
            p.precision.deviation,
            p.recall.mean,
            p.recall.deviation,
            p.f1.mean,
            p.f1.deviation,
        ));
    }
    out
}

pub fn sensitivity_table(points: &[SensitivityPoint]) -> String {
    let mut out = String::from("k    threshold  precision  recall  f1\n");
    for p in points {
        out.push_str(&format!(
            "{:<3}  {:<9}  {:<9.3}  {:<6.3}  {:.3}\n",
            p.mutation_count,
            p.threshold.to_string_trimmed(),
            p.metrics.precision,
            p.metrics.recall,
            p.metrics.f1,
        ));
    }
    out
}

pub fn sensitivity_tsv(points: &[SensitivityPoint]) -> String {
    let mut out = String::from("k\tthreshold\tprecision\trecall\tf1\n");
    for p in points {
        out.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\n",
            p.mutation_count,
            p.threshold.to_string_trimmed(),
            p.metrics.precision,
            p.metrics.recall,
            p.metrics.f1,
        ));
    }
    out
}

pub fn heatmap_table(cells: &[HeatmapCell]) -> String {
    let mut out = String::from("model                 dataset               n      rate\n");
    for c in cells {
        out.push_str(&format!(
            "{:<20}  {:<20}  {:<5}  {:.3}\n",
            c.model, c.dataset, c.questions, c.hallucination_rate
        ));
    }
    out
}

pub fn heatmap_tsv(cells: &[HeatmapCell]) -> String {
    let mut out = String::from("model\tdataset\tquestions\thallucination_rate\n");
    for c in cells {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\n",
            c.model, c.dataset, c.questions, c.hallucination_rate
        ));
    }
    out
}

pub fn identity_table(checks: &[IdentityCheck], tolerance: f64) -> String {
    let mut out = String::from(
        "method        model       dataset               P      R      F1     computed  deviation  ok\n",
    );
    for c in checks {
        out.push_str(&format!(
            "{:<12}  {:<10}  {:<20}  {:<5.3}  {:<5.3}  {:<5.3}  {:<8.4}  {:<9.4}  {}\n",
            c.row.method,
            c.row.model,
            c.row.dataset,
            c.row.precision,
            c.row.recall,
            c.row.f1,
            c.computed_f1,
            c.deviation,
            if c.deviation <= tolerance {
                "yes"
            } else {
                "NO"
            },
        ));
    }
    out
}

/// Token-cost summary. The ratio column follows the cost-over-base
/// convention (`avg_total / avg_base * 100`), a plain ratio in percent.
pub fn usage_table(usage: &UsageReport, questions: u64) -> String {
    let mut out = String::from(
        "step              calls   prompt      completion  total       avg/question\n",
    );
    for (tag, tag_usage) in &usage.attributed {
        let avg = if questions > 0 {
            tag_usage.usage.total_tokens as f64 / questions as f64
        } else {
            0.0
        };
        out.push_str(&format!(
            "{:<16}  {:<6}  {:<10}  {:<10}  {:<10}  {:.2}\n",
            tag.as_str(),
            tag_usage.calls,
            tag_usage.usage.prompt_tokens,
            tag_usage.usage.completion_tokens,
            tag_usage.usage.total_tokens,
            avg,
        ));
    }
    let total = usage.attributed_total();
    let avg_total = usage.attributed_avg_per_question(questions);
    let avg_base = usage.attributed_tag_avg(StepTag::BaseQa, questions);
    out.push_str(&format!(
        "total             {:<6}  {:<10}  {:<10}  {:<10}  {:.2}\n",
        "", total.prompt_tokens, total.completion_tokens, total.total_tokens, avg_total,
    ));
    if avg_base > 0.0 {
        out.push_str(&format!(
            "cost ratio vs base step: {:.2}%\n",
            growth_rate_percent(avg_total, avg_base)
        ));
    }
    out
}
