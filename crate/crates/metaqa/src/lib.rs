//! MetaQA: zero-resource detection of fact-conflicting hallucinations in LLM
//! answers.
//!
//! The detector asks the model a question, collects a concise base response,
//! generates synonymous and antonymous mutations of that response with the
//! same model, verifies each mutation independently, and aggregates the
//! three-valued verdicts into a hallucination score in `[0, 1]`. A response
//! is flagged when the score reaches a configurable threshold.
//!
//! The crate also ships everything needed to evaluate the detector against a
//! sampling-consistency baseline: a dataset store, an automatic labeler with
//! a manual-review workflow, precision/recall/F1 reporting, threshold sweeps,
//! stability and mutation-count sensitivity analyses, and token-cost
//! accounting. All LLM traffic goes through a single gateway that supports a
//! live chat-completions backend, a deterministic scripted mock, and an
//! on-disk response cache.

pub mod baseline;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod gateway;
pub mod label;
pub mod mutation;
pub mod pipeline;
pub mod prompts;
pub mod report;
pub mod score;
pub mod stream;
pub mod verify;

mod util;

pub use config::RunConfig;
pub use gateway::{ChatRequest, ChatResponse, Gateway, StepTag, TokenUsage};
pub use prompts::{PromptCatalog, PromptStep, Verdict, VerdictValue};
pub use score::{DetectionTrace, Score, Threshold};
