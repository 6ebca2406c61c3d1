//! End-to-end detection pipeline and dataset runs.
//!
//! Single-question flow: obtain a concise base response (or accept a
//! provided one), generate synonym and antonym mutation batches, verify
//! every mutation independently, aggregate verdicts into the hallucination
//! score, and classify against the threshold. Dataset runs map that flow
//! (and/or the consistency baseline) over every record, preserving input
//! order in the output stream.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::baseline::{consistency_score, sample_responses, BaselineSettings, ConsistencyTrace};
use crate::config::RunConfig;
use crate::dataset::QaRecord;
use crate::gateway::{
    ChatRequest, Gateway, GatewayError, HttpBackend, HttpConfig, MockBackend, MockScript,
    ResponseCache, StepTag, TagUsage, TokenUsage, UsageReport,
};
use crate::mutation::{generate_mutations, GenerationSettings, Relation};
use crate::prompts::{Bindings, PromptCatalog, PromptError, PromptStep, VerdictValue};
use crate::score::{classify, hallucination_score, DetectionTrace, Threshold};
use crate::stream::{Method, RunRecord};
use crate::util::bounded_map;
use crate::verify::{verify_all, VerifySettings};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("config: {0}")]
    Config(String),
}

/// Shared context for a run: the gateway, the prompt catalog, and the
/// effective configuration.
pub struct PipelineCtx {
    pub gateway: Gateway,
    pub catalog: PromptCatalog,
    pub config: RunConfig,
    mock: Option<Arc<MockBackend>>,
}

impl PipelineCtx {
    /// Builds the context from a validated config: scripted mock backend
    /// when `mock_script` is set, live HTTP backend otherwise; response
    /// cache attached when `cache_dir` is set.
    pub fn from_config(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate().map_err(PipelineError::Config)?;
        let catalog = match &config.prompt_catalog_path {
            Some(path) => PromptCatalog::from_file(path)?,
            None => PromptCatalog::builtin().clone(),
        };
        let cache = match &config.cache_dir {
            Some(dir) => Some(ResponseCache::open(dir)?),
            None => None,
        };
        let mut mock = None;
        let backend: Box<dyn crate::gateway::Backend> = match &config.mock_script {
            Some(script_path) => {
                let script = MockScript::from_file(script_path)?;
                let backend = Arc::new(MockBackend::new(script));
                mock = Some(backend.clone());
                Box::new(backend)
            }
            None => Box::new(HttpBackend::new(HttpConfig {
                endpoint_url: config.endpoint_url.clone(),
                api_key_env: config.api_key_env.clone(),
                attempts: config.retry_attempts,
                initial_backoff: std::time::Duration::from_millis(config.retry_initial_backoff_ms),
                request_timeout: std::time::Duration::from_secs(120),
            })?),
        };
        let gateway = Gateway::new(backend, cache, config.max_in_flight);
        Ok(Self {
            gateway,
            catalog,
            config,
            mock,
        })
    }

    /// For tests: wrap an existing gateway.
    pub fn with_gateway(gateway: Gateway, catalog: PromptCatalog, config: RunConfig) -> Self {
        Self {
            gateway,
            catalog,
            config,
            mock: None,
        }
    }

    /// The mock backend when this run is scripted.
    pub fn mock(&self) -> Option<&MockBackend> {
        self.mock.as_deref()
    }
}

/// Inputs for one detection.
pub struct DetectInput<'a> {
    pub question_id: &'a str,
    pub question: &'a str,
    /// Skips the concise-QA step when provided.
    pub answer: Option<&'a str>,
}

/// Obtains the concise base response for a question.
fn base_response(ctx: &PipelineCtx, question: &str) -> Result<(String, TokenUsage), PipelineError> {
    let bindings = Bindings::new().with("question", question);
    let (system_prompt, user_prompt) = ctx.catalog.render(PromptStep::ConciseQa, &bindings)?;
    let request = ChatRequest {
        model_id: ctx.config.model_id.clone(),
        system_prompt,
        user_prompt,
        temperature: ctx.config.temperature,
        max_tokens: ctx.config.max_answer_tokens,
        tag: StepTag::BaseQa,
        nonce: None,
    };
    let response = ctx.gateway.cached_complete(&request)?;
    Ok((response.text, response.usage))
}

/// Runs the full mutation-verify-score flow for one question.
pub fn detect(ctx: &PipelineCtx, input: &DetectInput<'_>) -> Result<DetectionTrace, PipelineError> {
    let threshold: Threshold = ctx.config.threshold().map_err(PipelineError::Config)?;
    let mut usage = TokenUsage::default();
    let base = match input.answer {
        Some(answer) => answer.to_string(),
        None => {
            let (text, base_usage) = base_response(ctx, input.question)?;
            usage.add(base_usage);
            text
        }
    };

    let generation = GenerationSettings {
        model_id: &ctx.config.model_id,
        temperature: ctx.config.temperature,
        max_tokens: ctx.config.max_answer_tokens,
    };
    let mut degraded = false;
    let mut batches = Vec::new();
    for (relation, count) in [
        (Relation::Synonymy, ctx.config.syn_count),
        (Relation::Antonymy, ctx.config.ant_count),
    ] {
        if count == 0 {
            continue;
        }
        let batch = generate_mutations(
            input.question,
            &base,
            relation,
            count,
            &ctx.gateway,
            &ctx.catalog,
            &generation,
        )?;
        usage.add(batch.usage);
        degraded |= batch.shortfall;
        batches.push(batch);
    }
    let mutations: Vec<_> = batches.into_iter().flat_map(|b| b.mutations).collect();

    let verify_settings = VerifySettings {
        model_id: &ctx.config.model_id,
        temperature: ctx.config.temperature,
        max_tokens: ctx.config.max_verdict_tokens,
    };
    let verified = verify_all(&mutations, &ctx.gateway, &ctx.catalog, &verify_settings);
    for v in &verified {
        usage.add(v.usage);
        degraded |= v.degraded;
    }

    let mut syn_verdicts: Vec<VerdictValue> = Vec::new();
    let mut ant_verdicts: Vec<VerdictValue> = Vec::new();
    for v in &verified {
        match v.mutation.relation {
            Relation::Synonymy => syn_verdicts.push(v.verdict.value),
            Relation::Antonymy => ant_verdicts.push(v.verdict.value),
        }
    }
    let score = hallucination_score(&syn_verdicts, &ant_verdicts).ok();
    let classified_hallucination = score.map(|s| classify(s, threshold));

    Ok(DetectionTrace {
        question_id: input.question_id.to_string(),
        question: input.question.to_string(),
        base_response: base,
        verified,
        syn_count: syn_verdicts.len(),
        ant_count: ant_verdicts.len(),
        score,
        threshold,
        classified_hallucination,
        degraded,
        usage,
    })
}

/// Runs the sampling-consistency baseline for one question.
pub fn detect_baseline(
    ctx: &PipelineCtx,
    input: &DetectInput<'_>,
) -> Result<ConsistencyTrace, PipelineError> {
    let mut usage = TokenUsage::default();
    let base = match input.answer {
        Some(answer) => answer.to_string(),
        None => {
            let (text, base_usage) = base_response(ctx, input.question)?;
            usage.add(base_usage);
            text
        }
    };
    let settings = BaselineSettings {
        model_id: &ctx.config.model_id,
        sample_temperature: ctx.config.baseline_temperature,
        check_temperature: ctx.config.temperature,
        max_answer_tokens: ctx.config.max_answer_tokens,
        max_verdict_tokens: ctx.config.max_verdict_tokens,
    };
    let (samples, sample_usage, mut degraded) = sample_responses(
        input.question_id,
        input.question,
        ctx.config.baseline_k,
        &ctx.gateway,
        &ctx.catalog,
        &settings,
    )?;
    usage.add(sample_usage);

    let (score, support_verdicts) = if samples.is_empty() {
        degraded = true;
        (None, Vec::new())
    } else {
        match consistency_score(
            input.question,
            &base,
            &samples,
            &ctx.gateway,
            &ctx.catalog,
            &settings,
        ) {
            Ok((score, verdicts, check_usage, check_degraded)) => {
                usage.add(check_usage);
                degraded |= check_degraded;
                (Some(score), verdicts)
            }
            Err(_) => (None, Vec::new()),
        }
    };

    Ok(ConsistencyTrace {
        question_id: input.question_id.to_string(),
        question: input.question.to_string(),
        base_response: base,
        samples,
        support_verdicts,
        score,
        degraded,
        usage,
    })
}

/// Which flows a dataset run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMethod {
    Metaqa,
    Baseline,
    Both,
}

impl RunMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunMethod::Metaqa => "metaqa",
            RunMethod::Baseline => "baseline",
            RunMethod::Both => "both",
        }
    }

    pub fn includes(&self, method: Method) -> bool {
        matches!(
            (self, method),
            (RunMethod::Metaqa | RunMethod::Both, Method::Metaqa)
                | (RunMethod::Baseline | RunMethod::Both, Method::Baseline)
        )
    }
}

impl std::str::FromStr for RunMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "metaqa" => Ok(RunMethod::Metaqa),
            "baseline" => Ok(RunMethod::Baseline),
            "both" => Ok(RunMethod::Both),
            other => Err(format!(
                "unknown method `{other}` (expected metaqa, baseline, or both)"
            )),
        }
    }
}

/// Outcome of a dataset run.
pub struct RunOutcome {
    pub records: Vec<RunRecord>,
    pub usage: UsageReport,
    pub degraded_questions: u64,
    pub failed_questions: Vec<(String, String)>,
}

/// Processes every record in order. Questions run on a worker pool bounded
/// by the gateway's in-flight limit; records land in the output in dataset
/// order regardless of completion order. A question whose pipeline errors is
/// reported and skipped rather than aborting the run.
pub fn run_dataset(ctx: &PipelineCtx, records: &[QaRecord], method: RunMethod) -> RunOutcome {
    let results = bounded_map(
        records.to_vec(),
        ctx.config.max_in_flight.max(1),
        |_, record| {
            let input = DetectInput {
                question_id: &record.id,
                question: &record.question,
                answer: None,
            };
            let mut out: Vec<RunRecord> = Vec::new();
            let mut errors: Vec<(String, String)> = Vec::new();
            if method.includes(Method::Metaqa) {
                match detect(ctx, &input) {
                    Ok(trace) => out.push(RunRecord::Metaqa { trace }),
                    Err(e) => errors.push((record.id.clone(), e.to_string())),
                }
            }
            if method.includes(Method::Baseline) {
                match detect_baseline(ctx, &input) {
                    Ok(trace) => out.push(RunRecord::Baseline { trace }),
                    Err(e) => errors.push((record.id.clone(), e.to_string())),
                }
            }
            (out, errors)
        },
    );

    let mut records_out = Vec::new();
    let mut failed = Vec::new();
    let mut degraded = 0;
    for (out, errors) in results {
        for record in out {
            let is_degraded = match &record {
                RunRecord::Metaqa { trace } => trace.degraded,
                RunRecord::Baseline { trace } => trace.degraded,
            };
            if is_degraded {
                degraded += 1;
            }
            records_out.push(record);
        }
        failed.extend(errors);
    }
    RunOutcome {
        records: records_out,
        usage: ctx.gateway.usage_report(),
        degraded_questions: degraded,
        failed_questions: failed,
    }
}

/// Builds the stable usage footer for a run file from attributed usage.
pub fn usage_footer(usage: &UsageReport, questions: u64) -> crate::stream::UsageFooter {
    let per_tag: BTreeMap<StepTag, TagUsage> = usage.attributed.clone();
    crate::stream::UsageFooter {
        kind: crate::stream::USAGE_FOOTER_KIND.into(),
        questions,
        per_tag,
        total: usage.attributed_total(),
    }
}
