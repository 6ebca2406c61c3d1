//! Implementations of the CLI commands.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use metaqa::config::RunConfig;
use metaqa::dataset::{self, QaRecord};
use metaqa::eval;
use metaqa::gateway::ResponseCache;
use metaqa::label::{self, Label, LabelFileHeader, LabelValue, ReviewItem, LABEL_SCHEMA};
use metaqa::mutation::Relation;
use metaqa::pipeline::{self, DetectInput, PipelineCtx, RunMethod};
use metaqa::report;
use metaqa::score::Threshold;
use metaqa::stream::{self, Method, RunFile, RunHeader, RunRecord, RUN_SCHEMA};

use crate::parse_thresholds;

fn require_out(config: &RunConfig, what: &str) -> Result<PathBuf> {
    config
        .output_path
        .clone()
        .with_context(|| format!("{what} requires --out PATH"))
}

fn require_dataset(config: &RunConfig) -> Result<PathBuf> {
    config
        .dataset_path
        .clone()
        .context("this command requires --dataset PATH")
}

fn load_dataset(path: &Path) -> Result<Vec<QaRecord>> {
    let outcome = dataset::load(path)?;
    if outcome.skipped_no_answers > 0 {
        eprintln!(
            "warning: skipped {} record(s) without reference answers",
            outcome.skipped_no_answers
        );
    }
    Ok(outcome.records)
}

fn method_of(s: &str) -> Result<Method> {
    match s {
        "metaqa" => Ok(Method::Metaqa),
        "baseline" => Ok(Method::Baseline),
        other => bail!("unknown method `{other}` (expected metaqa or baseline)"),
    }
}

fn grid_or_default(grid: &[String]) -> Result<Vec<Threshold>> {
    if grid.is_empty() {
        Ok(eval::default_sweep_grid())
    } else {
        parse_thresholds(grid)
    }
}

/// Labels still awaiting review block evaluation; point at the review
/// workflow instead of producing numbers from unfinished ground truth.
fn reject_unreviewed(labels: &BTreeMap<String, Label>) -> Result<()> {
    let pending = labels
        .values()
        .filter(|l| l.value == LabelValue::NeedsReview)
        .count();
    if pending > 0 {
        bail!(
            "label set contains {pending} needs_review entr{}; resolve them first: \
             `metaqa review export` then `metaqa review import`",
            if pending == 1 { "y" } else { "ies" }
        );
    }
    Ok(())
}

pub fn detect(
    config: RunConfig,
    question: &str,
    answer: Option<&str>,
    id: &str,
    extra_thresholds: &[String],
) -> Result<()> {
    let configured: Threshold = config
        .threshold()
        .map_err(|e| anyhow::anyhow!("invalid threshold: {e}"))?;
    let extra = parse_thresholds(extra_thresholds)?;
    let out_path = config.output_path.clone();
    let ctx = PipelineCtx::from_config(config)?;
    let trace = pipeline::detect(
        &ctx,
        &DetectInput {
            question_id: id,
            question,
            answer,
        },
    )?;

    println!("question: {}", trace.question);
    println!("base response: {}", trace.base_response);
    println!();
    for relation in [Relation::Synonymy, Relation::Antonymy] {
        let name = match relation {
            Relation::Synonymy => "synonym",
            Relation::Antonymy => "antonym",
        };
        println!("{name} mutations:");
        for v in trace
            .verified
            .iter()
            .filter(|v| v.mutation.relation == relation)
        {
            let flags = if v.mutation.flags.is_empty() {
                String::new()
            } else {
                format!(
                    " [{}]",
                    v.mutation
                        .flags
                        .iter()
                        .map(|f| format!("{f:?}"))
                        .collect::<Vec<_>>()
                        .join(", ")
                )
            };
            println!(
                "  {}. {}{flags} -> {}",
                v.mutation.index + 1,
                v.mutation.text,
                v.verdict.value
            );
        }
    }
    println!();
    match trace.score {
        Some(score) => {
            println!(
                "score: {} ({} synonym + {} antonym verdicts)",
                score.to_4dp_string(),
                trace.syn_count,
                trace.ant_count
            );
            let mut thresholds = vec![configured];
            for t in extra {
                if !thresholds.contains(&t) {
                    thresholds.push(t);
                }
            }
            for t in thresholds {
                let verdict = if metaqa::score::classify(score, t) {
                    "Hallucination"
                } else {
                    "No Hallucination"
                };
                println!("threshold {}: {verdict}", t.to_string_trimmed());
            }
        }
        None => println!("score: unscorable (no verdicts)"),
    }
    if trace.degraded {
        println!("note: trace degraded (shortfall or failed calls)");
    }
    println!(
        "tokens: prompt {}, completion {}, total {}",
        trace.usage.prompt_tokens, trace.usage.completion_tokens, trace.usage.total_tokens
    );

    if let Some(path) = out_path {
        let header = RunHeader {
            schema: RUN_SCHEMA.into(),
            method: "metaqa".into(),
            config: ctx.config.echo(),
        };
        let records = vec![RunRecord::Metaqa { trace }];
        let footer = pipeline::usage_footer(&ctx.gateway.usage_report(), 1);
        stream::write_run(&path, &header, &records, Some(&footer))?;
        eprintln!("trace written to {}", path.display());
    }
    Ok(())
}

pub fn run_dataset(
    config: RunConfig,
    method: RunMethod,
    categories: &[String],
    sample_k: Option<usize>,
    sample_frac: Option<f64>,
) -> Result<()> {
    let out = require_out(&config, "run")?;
    let dataset_path = require_dataset(&config)?;
    let mut records = load_dataset(&dataset_path)?;
    if !categories.is_empty() {
        let set: BTreeSet<String> = categories.iter().cloned().collect();
        records = dataset::filter_by_category(&records, &set);
    }
    let seed = config.seed;
    if let Some(fraction) = sample_frac {
        let k = dataset::fraction_k(records.len(), fraction);
        records = dataset::sample(&records, k, seed)?;
    } else if let Some(k) = sample_k {
        records = dataset::sample(&records, k, seed)?;
    }
    if records.is_empty() {
        bail!("no records to process after filtering/sampling");
    }

    let ctx = PipelineCtx::from_config(config)?;
    let outcome = pipeline::run_dataset(&ctx, &records, method);
    let questions = records.len() as u64;
    let header = RunHeader {
        schema: RUN_SCHEMA.into(),
        method: method.as_str().into(),
        config: ctx.config.echo(),
    };
    let footer = pipeline::usage_footer(&outcome.usage, questions);
    stream::write_run(&out, &header, &outcome.records, Some(&footer))?;

    let charged = outcome.usage.charged_total();
    println!(
        "run complete: {} questions, method {}",
        questions,
        method.as_str()
    );
    println!(
        "records written: {} -> {}",
        outcome.records.len(),
        out.display()
    );
    println!(
        "backend calls: {} (cache hits: {})",
        ctx.gateway.backend_call_count(),
        ctx.gateway.cache_hit_count()
    );
    println!("tokens charged this run: {}", charged.total_tokens);
    println!(
        "attributed tokens per question: {:.2}",
        outcome.usage.attributed_avg_per_question(questions)
    );
    println!("degraded questions: {}", outcome.degraded_questions);
    println!("failed questions: {}", outcome.failed_questions.len());
    for (id, reason) in &outcome.failed_questions {
        eprintln!("  failed {id}: {reason}");
    }
    Ok(())
}

/// Picks the base response recorded for each question, preferring the
/// detection trace when both methods ran.
fn base_responses(run: &RunFile) -> BTreeMap<String, String> {
    let mut out: BTreeMap<String, String> = BTreeMap::new();
    for record in &run.records {
        match record {
            RunRecord::Metaqa { trace } => {
                out.insert(trace.question_id.clone(), trace.base_response.clone());
            }
            RunRecord::Baseline { trace } => {
                out.entry(trace.question_id.clone())
                    .or_insert_with(|| trace.base_response.clone());
            }
        }
    }
    out
}

pub fn label(config: RunConfig, run_path: &Path, labeler_model: Option<&str>) -> Result<()> {
    let out = require_out(&config, "label")?;
    let dataset_path = require_dataset(&config)?;
    let records = load_dataset(&dataset_path)?;
    let run = stream::read_run(run_path)?;
    let bases = base_responses(&run);
    let by_id: BTreeMap<&str, &QaRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();

    // The label file describes the model under test (from the run being
    // labeled); the validation calls may use a different, stronger model.
    let model_id = run.header.config.model_id.clone();
    let dataset_name = dataset_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let ctx = PipelineCtx::from_config(config)?;
    let settings = label::LabelSettings {
        model_id: labeler_model.unwrap_or(&ctx.config.model_id),
        temperature: ctx.config.temperature,
        max_verdict_tokens: ctx.config.max_verdict_tokens,
    };

    let mut labels: BTreeMap<String, Label> = BTreeMap::new();
    let mut missing_record = 0;
    for (question_id, base) in &bases {
        let Some(record) = by_id.get(question_id.as_str()) else {
            missing_record += 1;
            continue;
        };
        let references = record.all_references();
        let (label, _) = label::auto_validate(
            &record.question,
            base,
            &references,
            &ctx.gateway,
            &ctx.catalog,
            &settings,
        );
        labels.insert(question_id.clone(), label);
    }
    if missing_record > 0 {
        eprintln!(
            "warning: {missing_record} run question(s) missing from the dataset were not labeled"
        );
    }

    let header = LabelFileHeader {
        schema: LABEL_SCHEMA.into(),
        model_id,
        dataset: dataset_name,
    };
    label::write_labels(&out, &header, &labels)?;
    let count = |v: LabelValue| labels.values().filter(|l| l.value == v).count();
    println!("labeled {} questions -> {}", labels.len(), out.display());
    println!("  factual: {}", count(LabelValue::Factual));
    println!("  hallucination: {}", count(LabelValue::Hallucination));
    println!("  needs_review: {}", count(LabelValue::NeedsReview));
    Ok(())
}

pub fn review_export(config: RunConfig, labels_path: &Path, run_path: &Path) -> Result<()> {
    let out = require_out(&config, "review export")?;
    let (_, labels) = label::read_labels(labels_path)?;
    let run = stream::read_run(run_path)?;
    let bases = base_responses(&run);
    let dataset_records = match &config.dataset_path {
        Some(path) => load_dataset(path)?,
        None => Vec::new(),
    };
    let by_id: BTreeMap<&str, &QaRecord> =
        dataset_records.iter().map(|r| (r.id.as_str(), r)).collect();

    let questions_of: BTreeMap<&str, &str> = run
        .records
        .iter()
        .map(|r| match r {
            RunRecord::Metaqa { trace } => (trace.question_id.as_str(), trace.question.as_str()),
            RunRecord::Baseline { trace } => (trace.question_id.as_str(), trace.question.as_str()),
        })
        .collect();

    let items: Vec<ReviewItem> = labels
        .iter()
        .filter(|(_, l)| l.value == LabelValue::NeedsReview)
        .map(|(id, l)| ReviewItem {
            id: id.clone(),
            question: questions_of.get(id.as_str()).unwrap_or(&"").to_string(),
            answer: bases.get(id).cloned().unwrap_or_default(),
            references: by_id
                .get(id.as_str())
                .map(|r| r.all_references())
                .unwrap_or_default(),
            auto_rationale: l.rationale.clone(),
        })
        .collect();
    std::fs::write(&out, label::export_review_queue(&items))
        .with_context(|| format!("writing {}", out.display()))?;
    println!(
        "exported {} item(s) for review -> {}",
        items.len(),
        out.display()
    );
    Ok(())
}

pub fn review_import(config: RunConfig, labels_path: &Path, queue_path: &Path) -> Result<()> {
    let (header, mut labels) = label::read_labels(labels_path)?;
    let queue = std::fs::read_to_string(queue_path)
        .with_context(|| format!("reading {}", queue_path.display()))?;
    let known: BTreeSet<String> = labels.keys().cloned().collect();
    let resolutions = label::import_resolutions(&queue, &known)?;
    let resolved = resolutions.len();
    label::merge_resolutions(&mut labels, resolutions)?;
    let out = config
        .output_path
        .clone()
        .unwrap_or_else(|| labels_path.to_path_buf());
    label::write_labels(&out, &header, &labels)?;
    let pending = labels
        .values()
        .filter(|l| l.value == LabelValue::NeedsReview)
        .count();
    println!(
        "applied {resolved} resolution(s) -> {} ({pending} still pending)",
        out.display()
    );
    Ok(())
}

pub fn eval(
    config: RunConfig,
    run_path: &Path,
    labels_path: &Path,
    method: &str,
    format: &str,
    exclude_degraded: bool,
) -> Result<()> {
    let method = method_of(method)?;
    let threshold: Threshold = config
        .threshold()
        .map_err(|e| anyhow::anyhow!("invalid threshold: {e}"))?;
    let run = stream::read_run(run_path)?;
    let (_, labels) = label::read_labels(labels_path)?;
    reject_unreviewed(&labels)?;
    let scored = run.scored_with(method, exclude_degraded);
    if scored.is_empty() {
        bail!("run file has no {} records", method.as_str());
    }
    let metrics = eval::evaluate(&scored, &labels, threshold)?;
    match format {
        "json" => println!("{}", serde_json::to_string_pretty(&metrics)?),
        _ => print!("{}", report::metrics_table(std::slice::from_ref(&metrics))),
    }
    if let Some(out) = &config.output_path {
        std::fs::write(out, report::metrics_tsv(std::slice::from_ref(&metrics)))?;
        eprintln!("tsv written to {}", out.display());
    }
    Ok(())
}

fn sweep_tsv_with_method(method: &str, rows: &[eval::Metrics]) -> String {
    let base = report::metrics_tsv(rows);
    let mut lines = base.lines();
    let mut out = format!("method\t{}\n", lines.next().unwrap_or_default());
    for line in lines {
        out.push_str(&format!("{method}\t{line}\n"));
    }
    out
}

pub fn sweep(
    config: RunConfig,
    run_path: &Path,
    labels_path: &Path,
    grid: &[String],
    method: &str,
    format: &str,
    exclude_degraded: bool,
) -> Result<()> {
    let grid = grid_or_default(grid)?;
    let run = stream::read_run(run_path)?;
    let (_, labels) = label::read_labels(labels_path)?;
    reject_unreviewed(&labels)?;

    let both = method == "both";
    let mut outputs: Vec<(Method, Vec<eval::Metrics>)> = Vec::new();
    let methods: Vec<Method> = if both {
        vec![Method::Metaqa, Method::Baseline]
    } else {
        vec![method_of(method)?]
    };
    for m in methods {
        let scored = run.scored_with(m, exclude_degraded);
        if scored.is_empty() {
            bail!("run file has no {} records", m.as_str());
        }
        outputs.push((m, eval::threshold_sweep(&scored, &labels, &grid)?));
    }

    match format {
        "json" => {
            let view: BTreeMap<&str, &Vec<eval::Metrics>> =
                outputs.iter().map(|(m, rows)| (m.as_str(), rows)).collect();
            println!("{}", serde_json::to_string_pretty(&view)?);
        }
        _ => {
            for (m, rows) in &outputs {
                println!("== {} ==", m.as_str());
                print!("{}", report::metrics_table(rows));
                println!();
            }
            if both {
                let deltas = eval::paired_sweep(&outputs[0].1, &outputs[1].1);
                println!("== metaqa - baseline ==");
                print!("{}", report::deltas_table(&deltas));
            }
        }
    }
    if let Some(out) = &config.output_path {
        let mut tsv = String::new();
        for (i, (m, rows)) in outputs.iter().enumerate() {
            let block = sweep_tsv_with_method(m.as_str(), rows);
            if i == 0 {
                tsv.push_str(&block);
            } else {
                // Skip the repeated header.
                tsv.extend(block.lines().skip(1).map(|l| format!("{l}\n")));
            }
        }
        std::fs::write(out, tsv)?;
        eprintln!("tsv written to {}", out.display());
    }
    Ok(())
}

pub fn report_stability(
    config: RunConfig,
    labels_path: &Path,
    run_paths: &[PathBuf],
    grid: &[String],
    format: &str,
) -> Result<()> {
    let grid = grid_or_default(grid)?;
    let (_, labels) = label::read_labels(labels_path)?;
    reject_unreviewed(&labels)?;
    let mut runs = Vec::new();
    for path in run_paths {
        let run = stream::read_run(path)?;
        let mut scored = run.scored(Method::Metaqa);
        if scored.is_empty() {
            scored = run.scored(Method::Baseline);
        }
        runs.push(scored);
    }
    let points = eval::stability_report(&runs, &labels, &grid)?;
    match format {
        "json" => println!("{}", serde_json::to_string_pretty(&points)?),
        _ => print!("{}", report::stability_table(&points)),
    }
    if let Some(out) = &config.output_path {
        std::fs::write(out, report::stability_tsv(&points))?;
        eprintln!("tsv written to {}", out.display());
    }
    Ok(())
}

pub fn report_sensitivity(
    config: RunConfig,
    run_path: &Path,
    labels_path: &Path,
    k_grid: &[usize],
    thetas: &[String],
    subsample_seed: Option<u64>,
    format: &str,
) -> Result<()> {
    let thresholds = parse_thresholds(thetas)?;
    let run = stream::read_run(run_path)?;
    let (_, labels) = label::read_labels(labels_path)?;
    reject_unreviewed(&labels)?;
    let traces: Vec<_> = run.metaqa_traces().into_iter().cloned().collect();
    if traces.is_empty() {
        bail!("run file has no metaqa records");
    }
    let order = match subsample_seed {
        Some(seed) => eval::TruncationOrder::RandomSubsample { seed },
        None => eval::TruncationOrder::GenerationOrder,
    };
    let points =
        eval::mutation_count_sensitivity_with(&traces, &labels, &thresholds, k_grid, order)?;
    match format {
        "json" => println!("{}", serde_json::to_string_pretty(&points)?),
        _ => print!("{}", report::sensitivity_table(&points)),
    }
    if let Some(out) = &config.output_path {
        std::fs::write(out, report::sensitivity_tsv(&points))?;
        eprintln!("tsv written to {}", out.display());
    }
    Ok(())
}

pub fn report_categories(
    config: RunConfig,
    run_path: &Path,
    labels_path: &Path,
    format: &str,
) -> Result<()> {
    let threshold: Threshold = config
        .threshold()
        .map_err(|e| anyhow::anyhow!("invalid threshold: {e}"))?;
    let dataset_path = require_dataset(&config)?;
    let records = load_dataset(&dataset_path)?;
    let run = stream::read_run(run_path)?;
    let (_, labels) = label::read_labels(labels_path)?;
    reject_unreviewed(&labels)?;
    let scored = run.scored(Method::Metaqa);
    let reports = eval::category_breakdown(&scored, &labels, &records, threshold)?;
    match format {
        "json" => println!("{}", serde_json::to_string_pretty(&reports)?),
        _ => print!("{}", report::category_table(&reports)),
    }
    if let Some(out) = &config.output_path {
        std::fs::write(out, report::category_tsv(&reports))?;
        eprintln!("tsv written to {}", out.display());
    }
    Ok(())
}

pub fn report_heatmap(config: RunConfig, label_paths: &[PathBuf], format: &str) -> Result<()> {
    let mut cells = Vec::new();
    for path in label_paths {
        let (header, labels) = label::read_labels(path)?;
        reject_unreviewed(&labels)?;
        cells.push((header.model_id, header.dataset, labels));
    }
    let grid = eval::hallucination_rate_heatmap(&cells);
    match format {
        "json" => println!("{}", serde_json::to_string_pretty(&grid)?),
        _ => print!("{}", report::heatmap_table(&grid)),
    }
    if let Some(out) = &config.output_path {
        std::fs::write(out, report::heatmap_tsv(&grid))?;
        eprintln!("tsv written to {}", out.display());
    }
    Ok(())
}

pub fn report_cost(_config: RunConfig, run_path: &Path) -> Result<()> {
    let run = stream::read_run(run_path)?;
    let footer = run
        .usage
        .context("run file carries no usage summary footer")?;
    let usage = metaqa::gateway::UsageReport {
        charged: BTreeMap::new(),
        attributed: footer.per_tag.clone(),
    };
    print!("{}", report::usage_table(&usage, footer.questions));
    Ok(())
}

pub fn report_identity(config: RunConfig, reference: &Path, tolerance: f64) -> Result<()> {
    let text = std::fs::read_to_string(reference)
        .with_context(|| format!("reading {}", reference.display()))?;
    let rows = eval::parse_reference_rows(&text)?;
    let checks = eval::f1_identity_report(&rows);
    print!("{}", report::identity_table(&checks, tolerance));
    let failing: Vec<_> = checks.iter().filter(|c| c.deviation > tolerance).collect();
    if let Some(out) = &config.output_path {
        std::fs::write(out, serde_json::to_string_pretty(&checks)?)?;
        eprintln!("report written to {}", out.display());
    }
    if !failing.is_empty() {
        bail!(
            "{} of {} rows violate the F1 identity beyond {tolerance}",
            failing.len(),
            checks.len()
        );
    }
    println!(
        "all {} rows satisfy the F1 identity within {tolerance}",
        checks.len()
    );
    Ok(())
}

pub fn cache_stats(dir: &Path) -> Result<()> {
    let cache = ResponseCache::open(dir)?;
    println!("cache dir: {}", dir.display());
    println!("entries: {}", cache.len());
    Ok(())
}

pub fn cache_clear(dir: &Path) -> Result<()> {
    let cache = ResponseCache::open(dir)?;
    let removed = cache.clear()?;
    println!(
        "removed {removed} entr{}",
        if removed == 1 { "y" } else { "ies" }
    );
    Ok(())
}
