//! Independent factuality verification of mutations.
//!
//! Each mutation is checked in its own LLM call whose prompt is a function
//! of the mutation text and relation alone — never the question, the base
//! response, sibling mutations, or earlier verdicts. That independence is
//! what lets a hallucinated base response be contradicted by the model's own
//! knowledge.

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatRequest, Gateway, GatewayError, TokenUsage};
use crate::mutation::Mutation;
use crate::prompts::{parse_verdict, Bindings, PromptCatalog, Verdict, VerdictValue};
use crate::util::bounded_map;

/// A mutation together with its verification outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiedMutation {
    pub mutation: Mutation,
    pub verdict: Verdict,
    pub usage: TokenUsage,
    /// Set when the gateway failed and the verdict fell back to `NotSure`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degraded: bool,
}

/// Settings for verification calls.
pub struct VerifySettings<'a> {
    pub model_id: &'a str,
    pub temperature: f64,
    pub max_tokens: u32,
}

/// Renders the relation's verification prompt for one mutation.
pub fn verification_request(
    mutation: &Mutation,
    catalog: &PromptCatalog,
    settings: &VerifySettings<'_>,
) -> Result<ChatRequest, GatewayError> {
    let bindings = Bindings::new().with("mutation", mutation.text.as_str());
    let (system_prompt, user_prompt) = catalog
        .render(mutation.relation.verify_step(), &bindings)
        .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
    Ok(ChatRequest {
        model_id: settings.model_id.to_string(),
        system_prompt,
        user_prompt,
        temperature: settings.temperature,
        max_tokens: settings.max_tokens,
        tag: mutation.relation.verify_tag(),
        nonce: None,
    })
}

/// Verifies one mutation with a single LLM call.
pub fn verify(
    mutation: &Mutation,
    gateway: &Gateway,
    catalog: &PromptCatalog,
    settings: &VerifySettings<'_>,
) -> Result<VerifiedMutation, GatewayError> {
    let request = verification_request(mutation, catalog, settings)?;
    let response = gateway.cached_complete(&request)?;
    Ok(VerifiedMutation {
        mutation: mutation.clone(),
        verdict: parse_verdict(&response.text),
        usage: response.usage,
        degraded: false,
    })
}

/// Order-preserving verification of a whole batch. Distinct mutations are
/// verified concurrently under the gateway's in-flight bound; a failed call
/// yields `NotSure` with the `degraded` flag instead of aborting the batch.
pub fn verify_all(
    batch: &[Mutation],
    gateway: &Gateway,
    catalog: &PromptCatalog,
    settings: &VerifySettings<'_>,
) -> Vec<VerifiedMutation> {
    bounded_map(batch.to_vec(), 8, |_, mutation| {
        match verify(&mutation, gateway, catalog, settings) {
            Ok(verified) => verified,
            Err(err) => {
                log::warn!("verification failed for {:?}: {err}", mutation.text);
                VerifiedMutation {
                    mutation,
                    verdict: Verdict {
                        value: VerdictValue::NotSure,
                        raw_text: format!("<gateway error: {err}>"),
                        unparsed: true,
                    },
                    usage: TokenUsage::default(),
                    degraded: true,
                }
            }
        }
    })
}
