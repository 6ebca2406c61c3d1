//! Mutation generation: synonymous and antonymous rewrites of a base
//! response, produced by the LLM from the catalog templates, then sanitized
//! and screened for suspected double negations.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatRequest, Gateway, GatewayError, StepTag, TokenUsage};
use crate::prompts::{parse_numbered_list, Bindings, PromptCatalog, PromptStep};
use crate::util::normalized_edit_distance;

/// Metamorphic relation a mutation was generated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Synonymy,
    Antonymy,
}

impl Relation {
    pub fn generation_step(&self) -> PromptStep {
        match self {
            Relation::Synonymy => PromptStep::SynonymGen,
            Relation::Antonymy => PromptStep::AntonymGen,
        }
    }

    pub fn generation_tag(&self) -> StepTag {
        match self {
            Relation::Synonymy => StepTag::MutationSynonym,
            Relation::Antonymy => StepTag::MutationAntonym,
        }
    }

    pub fn verify_step(&self) -> PromptStep {
        match self {
            Relation::Synonymy => PromptStep::VerifySynonym,
            Relation::Antonymy => PromptStep::VerifyAntonym,
        }
    }

    pub fn verify_tag(&self) -> StepTag {
        match self {
            Relation::Synonymy => StepTag::VerifySynonym,
            Relation::Antonymy => StepTag::VerifyAntonym,
        }
    }
}

/// Quality flags attached during sanitization and double-negation screening.
/// Flags are only ever added, never removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationFlag {
    SuspectDoubleNegation,
    DuplicateOfBase,
    NearDuplicate,
}

/// One generated mutation sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mutation {
    pub text: String,
    pub relation: Relation,
    /// Ordinal within its relation batch.
    pub index: usize,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flags: BTreeSet<MutationFlag>,
}

/// Result of one generation call: the mutations kept plus whether the batch
/// fell short of the requested count even after the retry.
#[derive(Debug, Clone)]
pub struct MutationBatch {
    pub mutations: Vec<Mutation>,
    pub shortfall: bool,
    pub usage: TokenUsage,
}

/// Settings shared by both generation calls.
pub struct GenerationSettings<'a> {
    pub model_id: &'a str,
    pub temperature: f64,
    pub max_tokens: u32,
}

/// Asks the LLM for `n` mutations of `base` under `relation`, parses the
/// numbered list, retries once on a short reply, sanitizes, and truncates to
/// `n`. A batch shorter than `n` after all that is returned as-is with
/// `shortfall` set.
pub fn generate_mutations(
    question: &str,
    base: &str,
    relation: Relation,
    n: usize,
    gateway: &Gateway,
    catalog: &PromptCatalog,
    settings: &GenerationSettings<'_>,
) -> Result<MutationBatch, GatewayError> {
    assert!(n >= 1, "mutation count must be at least 1");
    assert!(!base.trim().is_empty(), "base response must be non-empty");

    let bindings = Bindings::new()
        .with("question", question)
        .with("answer", base)
        .with("n", n.to_string());
    let (system_prompt, user_prompt) = catalog
        .render(relation.generation_step(), &bindings)
        .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
    let request = ChatRequest {
        model_id: settings.model_id.to_string(),
        system_prompt,
        user_prompt,
        temperature: settings.temperature,
        max_tokens: settings.max_tokens,
        tag: relation.generation_tag(),
        nonce: None,
    };

    let mut usage = TokenUsage::default();
    let response = gateway.cached_complete(&request)?;
    usage.add(response.usage);
    let mut items = parse_numbered_list(&response.text).unwrap_or_default();

    if items.len() < n {
        // One regeneration attempt under a distinct cache slot; a failing
        // retry degrades to whatever the first call produced.
        let retry = ChatRequest {
            nonce: Some("regen:1".into()),
            ..request
        };
        match gateway.cached_complete(&retry) {
            Ok(retry_response) => {
                usage.add(retry_response.usage);
                if let Ok(more) = parse_numbered_list(&retry_response.text) {
                    for item in more {
                        if !items.contains(&item) {
                            items.push(item);
                        }
                    }
                }
            }
            Err(err) => log::warn!("mutation regeneration failed, proceeding short: {err}"),
        }
    }

    let mut mutations = sanitize(&items, base, relation);
    mutations.truncate(n);
    for (index, mutation) in mutations.iter_mut().enumerate() {
        mutation.index = index;
    }
    let shortfall = mutations.len() < n;
    if shortfall {
        log::warn!(
            "{relation:?} generation produced {} of {n} requested mutations",
            mutations.len()
        );
    }
    Ok(MutationBatch {
        mutations,
        shortfall,
        usage,
    })
}

/// Cleans a raw item list into mutations: trims whitespace and wrapping
/// quotes, drops exact in-batch duplicates, drops antonym items identical to
/// the base (an antonym cannot equal its source), and flags the rest:
/// `DuplicateOfBase` for synonym items equal to the base, `NearDuplicate`
/// for case-insensitive near-copies of the base (normalized edit distance
/// below 0.1). Idempotent.
pub fn sanitize(raw_items: &[String], base: &str, relation: Relation) -> Vec<Mutation> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for raw in raw_items {
        let text = trim_item(raw);
        if text.is_empty() || !seen.insert(text.clone()) {
            continue;
        }
        let mut flags = BTreeSet::new();
        if text == base {
            if relation == Relation::Antonymy {
                log::warn!("dropping antonym mutation identical to base: {text:?}");
                continue;
            }
            flags.insert(MutationFlag::DuplicateOfBase);
        }
        if text != base
            && normalized_edit_distance(&text.to_lowercase(), &base.to_lowercase()) < 0.1
        {
            flags.insert(MutationFlag::NearDuplicate);
        }
        let mut mutation = Mutation {
            text,
            relation,
            index: out.len(),
            flags,
        };
        if relation == Relation::Antonymy {
            mutation = flag_double_negation(mutation, base);
        }
        out.push(mutation);
    }
    out
}

fn trim_item(raw: &str) -> String {
    let mut s = raw.trim();
    loop {
        let stripped = s
            .strip_prefix('"')
            .and_then(|rest| rest.strip_suffix('"'))
            .or_else(|| {
                s.strip_prefix('\'')
                    .and_then(|rest| rest.strip_suffix('\''))
            });
        match stripped {
            Some(inner) if !inner.is_empty() => s = inner.trim(),
            _ => return s.to_string(),
        }
    }
}

/// Screens an antonym mutation for a suspected double negation relative to
/// the base sentence.
///
/// Negation markers counted per text: standalone `not`, `no`, `never`,
/// `n't` contractions, and tokens negating a base word morphologically
/// (`un` + a base token, as in `unused` against a base containing `use`);
/// the morphological form counts as two markers since it both embeds a
/// negation and rewrites a base word. The flag is set when the mutation has
/// at least two more markers than the base (in an even difference) or at
/// least two markers inside one clause. Reporting only — flagged mutations
/// are still verified and scored.
pub fn flag_double_negation(mut mutation: Mutation, base: &str) -> Mutation {
    debug_assert_eq!(mutation.relation, Relation::Antonymy);
    let base_tokens = word_tokens(base);
    let mutation_count = negation_marker_count(&mutation.text, &base_tokens);
    let base_count = negation_marker_count(base, &BTreeSet::new());
    let added = mutation_count.saturating_sub(base_count);
    let even_excess = added >= 2 && added.is_multiple_of(2);
    let clustered = mutation
        .text
        .split([',', ';', ':', '.', '!', '?'])
        .any(|clause| negation_marker_count(clause, &base_tokens) >= 2);
    if even_excess || clustered {
        mutation.flags.insert(MutationFlag::SuspectDoubleNegation);
    }
    mutation
}

fn word_tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn stem(token: &str) -> &str {
    for suffix in ["ing", "ed", "es", "s", "d"] {
        if let Some(stripped) = token.strip_suffix(suffix) {
            if stripped.len() >= 3 {
                return stripped;
            }
        }
    }
    token
}

fn negation_marker_count(text: &str, base_tokens: &BTreeSet<String>) -> usize {
    let mut count = 0;
    for token in text
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
    {
        if matches!(token.as_str(), "not" | "no" | "never") || token.ends_with("n't") {
            count += 1;
            continue;
        }
        if let Some(rest) = token.strip_prefix("un") {
            let negates_base = base_tokens.contains(rest)
                || base_tokens.contains(stem(rest))
                || base_tokens.iter().any(|b| stem(b) == stem(rest));
            if rest.len() >= 3 && negates_base {
                count += 2;
            }
        }
    }
    count
}
