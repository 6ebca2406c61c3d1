//! Deterministic scripted backend for tests and offline runs.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendKind, BackendReply, ChatRequest, GatewayError, StepTag, TokenUsage};

/// How a script entry decides whether it answers a request.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptMatcher {
    /// Matches when the user prompt equals `exact` byte-for-byte.
    Exact { exact: String },
    /// Matches when the request carries `tag` and the user prompt contains
    /// `contains`. An empty `contains` matches every prompt with that tag.
    TagContains { tag: StepTag, contains: String },
}

impl ScriptMatcher {
    fn matches(&self, request: &ChatRequest) -> bool {
        match self {
            ScriptMatcher::Exact { exact } => request.user_prompt == *exact,
            ScriptMatcher::TagContains { tag, contains } => {
                request.tag == *tag && request.user_prompt.contains(contains.as_str())
            }
        }
    }
}

/// One scripted reply. `max_uses` limits how many requests the entry may
/// serve; `None` means unlimited.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(flatten)]
    pub matcher: ScriptMatcher,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_uses: Option<u32>,
}

impl ScriptEntry {
    pub fn tag_contains(
        tag: StepTag,
        contains: impl Into<String>,
        response: impl Into<String>,
    ) -> Self {
        Self {
            matcher: ScriptMatcher::TagContains {
                tag,
                contains: contains.into(),
            },
            response: response.into(),
            max_uses: None,
        }
    }

    pub fn exact(prompt: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: ScriptMatcher::Exact {
                exact: prompt.into(),
            },
            response: response.into(),
            max_uses: None,
        }
    }

    pub fn once(mut self) -> Self {
        self.max_uses = Some(1);
        self
    }
}

/// Ordered list of scripted replies. The first entry that matches and still
/// has uses left answers the request.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    pub entries: Vec<ScriptEntry>,
}

impl MockScript {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self { entries }
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            GatewayError::InvalidRequest(format!("mock script {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| {
            GatewayError::InvalidRequest(format!("mock script {}: {e}", path.display()))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }
}

/// Scripted [`Backend`]. Counts calls and captures every request so tests
/// can assert on exactly what was sent.
pub struct MockBackend {
    entries: Mutex<Vec<(ScriptEntry, u32)>>,
    captured: Mutex<Vec<ChatRequest>>,
    calls: AtomicU64,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self {
            entries: Mutex::new(script.entries.into_iter().map(|e| (e, 0)).collect()),
            captured: Mutex::new(Vec::new()),
            calls: AtomicU64::new(0),
        }
    }

    pub fn empty() -> Self {
        Self::new(MockScript::default())
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Every request this backend has served or rejected, in arrival order.
    pub fn captured_requests(&self) -> Vec<ChatRequest> {
        self.captured.lock().unwrap().clone()
    }
}

/// Deterministic stand-in for a tokenizer: roughly four characters per token,
/// minimum one. Keeps mock usage accounting stable across runs.
fn approx_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4).max(1)
}

// Tests keep an `Arc<MockBackend>` handle to inspect call counts and
// captured prompts after handing the gateway its own clone.
impl Backend for std::sync::Arc<MockBackend> {
    fn complete(&self, request: &ChatRequest) -> Result<BackendReply, GatewayError> {
        self.as_ref().complete(request)
    }

    fn kind(&self) -> BackendKind {
        self.as_ref().kind()
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<BackendReply, GatewayError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.captured.lock().unwrap().push(request.clone());
        let mut entries = self.entries.lock().unwrap();
        for (entry, used) in entries.iter_mut() {
            if entry.max_uses.is_some_and(|max| *used >= max) {
                continue;
            }
            if entry.matcher.matches(request) {
                *used += 1;
                let usage = TokenUsage::new(
                    approx_tokens(&request.system_prompt) + approx_tokens(&request.user_prompt),
                    approx_tokens(&entry.response),
                );
                return Ok(BackendReply {
                    text: entry.response.clone(),
                    usage,
                    latency_ms: 0,
                });
            }
        }
        let prompt_head: String = request.user_prompt.chars().take(48).collect();
        Err(GatewayError::ScriptExhausted {
            tag: request.tag,
            prompt_head,
        })
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }
}
