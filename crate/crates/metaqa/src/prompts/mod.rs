//! Prompt catalog, template rendering, and LLM-output parsing.
//!
//! Every prompt the pipeline sends lives in a catalog keyed by step. The
//! built-in catalog ships embedded; a TOML file with the same shape can
//! replace it. Rendering is pure substitution of `{placeholder}` names.
//! Parsing turns the model's free-text replies into typed values: numbered
//! mutation lists and three-valued verdicts.

mod parse;

pub use parse::{parse_numbered_list, parse_verdict};

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pipeline steps that have a prompt template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStep {
    ConciseQa,
    SynonymGen,
    AntonymGen,
    VerifySynonym,
    VerifyAntonym,
    BaselineSample,
    BaselineCheck,
    AutoValidate,
}

impl PromptStep {
    pub const ALL: [PromptStep; 8] = [
        PromptStep::ConciseQa,
        PromptStep::SynonymGen,
        PromptStep::AntonymGen,
        PromptStep::VerifySynonym,
        PromptStep::VerifyAntonym,
        PromptStep::BaselineSample,
        PromptStep::BaselineCheck,
        PromptStep::AutoValidate,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptStep::ConciseQa => "concise_qa",
            PromptStep::SynonymGen => "synonym_gen",
            PromptStep::AntonymGen => "antonym_gen",
            PromptStep::VerifySynonym => "verify_synonym",
            PromptStep::VerifyAntonym => "verify_antonym",
            PromptStep::BaselineSample => "baseline_sample",
            PromptStep::BaselineCheck => "baseline_check",
            PromptStep::AutoValidate => "auto_validate",
        }
    }
}

impl fmt::Display for PromptStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptStep {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptStep::ALL
            .iter()
            .copied()
            .find(|step| step.as_str() == s)
            .ok_or_else(|| PromptError::UnknownStep(s.to_string()))
    }
}

/// Three-valued verification outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictValue {
    Yes,
    No,
    NotSure,
}

impl fmt::Display for VerdictValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictValue::Yes => "Yes",
            VerdictValue::No => "No",
            VerdictValue::NotSure => "Not Sure",
        })
    }
}

/// Parsed verdict plus the model's literal reply. `unparsed` marks replies
/// that matched none of the three tokens and fell back to `NotSure`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub value: VerdictValue,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unparsed: bool,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown prompt step `{0}`")]
    UnknownStep(String),
    #[error("placeholder {{{0}}} is not bound (or bound to an empty value)")]
    MissingPlaceholder(String),
    #[error("no numbered items found in reply")]
    NoItemsFound,
    #[error("prompt catalog {path}: {reason}")]
    BadCatalog { path: String, reason: String },
}

/// One catalog record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub step: PromptStep,
    #[serde(rename = "system")]
    pub system_text: String,
    #[serde(rename = "user")]
    pub user_pattern: String,
}

/// Placeholder bindings for one render call.
#[derive(Debug, Clone, Default)]
pub struct Bindings(BTreeMap<String, String>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: impl Into<String>) -> Self {
        self.0.insert(name.to_string(), value.into());
        self
    }

    fn get(&self, name: &str) -> Option<&str> {
        self.0
            .get(name)
            .map(String::as_str)
            .filter(|v| !v.is_empty())
    }
}

#[derive(Deserialize)]
struct CatalogFile {
    #[serde(rename = "template")]
    templates: Vec<PromptTemplate>,
}

/// Full set of templates, one per step.
#[derive(Debug, Clone)]
pub struct PromptCatalog {
    templates: BTreeMap<PromptStep, PromptTemplate>,
}

const BUILTIN_CATALOG_TOML: &str = include_str!("builtin_catalog.toml");

impl PromptCatalog {
    /// The embedded catalog.
    pub fn builtin() -> &'static PromptCatalog {
        static BUILTIN: OnceLock<PromptCatalog> = OnceLock::new();
        BUILTIN.get_or_init(|| {
            PromptCatalog::from_toml_str(BUILTIN_CATALOG_TOML, "<builtin>")
                .expect("embedded catalog is valid")
        })
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, PromptError> {
        let file: CatalogFile = toml::from_str(text).map_err(|e| PromptError::BadCatalog {
            path: origin.to_string(),
            reason: e.to_string(),
        })?;
        let mut templates = BTreeMap::new();
        for template in file.templates {
            if templates.insert(template.step, template.clone()).is_some() {
                return Err(PromptError::BadCatalog {
                    path: origin.to_string(),
                    reason: format!("duplicate template for step `{}`", template.step),
                });
            }
        }
        for step in PromptStep::ALL {
            if !templates.contains_key(&step) {
                return Err(PromptError::BadCatalog {
                    path: origin.to_string(),
                    reason: format!("missing template for step `{step}`"),
                });
            }
        }
        Ok(Self { templates })
    }

    pub fn from_file(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::BadCatalog {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn template(&self, step: PromptStep) -> &PromptTemplate {
        &self.templates[&step]
    }

    /// Substitutes bindings into the step's pattern and returns
    /// `(system_prompt, user_prompt)`. Pure: same inputs, same outputs.
    pub fn render(
        &self,
        step: PromptStep,
        bindings: &Bindings,
    ) -> Result<(String, String), PromptError> {
        let template = self.template(step);
        let user = substitute(&template.user_pattern, bindings)?;
        let system = substitute(&template.system_text, bindings)?;
        Ok((system, user))
    }
}

/// Replaces every `{name}` occurrence; errors if any referenced name has no
/// non-empty binding.
fn substitute(pattern: &str, bindings: &Bindings) -> Result<String, PromptError> {
    static PLACEHOLDER: OnceLock<regex::Regex> = OnceLock::new();
    let placeholder = PLACEHOLDER.get_or_init(|| regex::Regex::new(r"\{([a-z_]+)\}").unwrap());
    let mut out = String::with_capacity(pattern.len());
    let mut last = 0;
    for captures in placeholder.captures_iter(pattern) {
        let whole = captures.get(0).unwrap();
        let name = &captures[1];
        let value = bindings
            .get(name)
            .ok_or_else(|| PromptError::MissingPlaceholder(name.to_string()))?;
        out.push_str(&pattern[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&pattern[last..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    // The two generation templates, frozen character-for-character. The
    // catalog's user patterns must contain these exact strings.
    pub(crate) const SYNONYM_TEMPLATE: &str = "Generate synonym mutations of the answer based on the context of the question and return a numbered list to me.\nDo not add any information that's not provided in the answer nor asked by the question. Make sure the generated synonyms are meaningful sentences.\nFor example:\nQuestion: What is the most popular sport in Japan?\nAnswer: Baseball is the most popular sport in Japan.\nMutations:\n1. Japan holds baseball as its most widely embraced sport.\n2. The sport with the highest popularity in Japan is baseball.\n3. Baseball reigns as Japan's most favored sport among the populace.\nNotice how the full context is included in each generated synonym. If\nyou generated just 'baseball', it would not make a meaningful sentence.";

    pub(crate) const ANTONYM_TEMPLATE: &str = "Generate negations of the answer based on the context of the question and return a numbered list to me.\nDo not add any information that's not provided in the answer nor asked by the question. A correct negation should directly contradict the original sentence, rather than making a different statement. Make sure the generated antonyms are meaningful sentences.\nFor example:\nQuestion: What is the most popular sport in Japan?\nAnswer: Baseball is the most popular sport in Japan.\nMutations:\n1. The most popular sport in Japan is not baseball.\n2. Baseball is not the most popular sport in Japan.\n3. Japan does not consider baseball as the most popular sport.\nBe careful about double negations which make the sentence semantically same to the provided one. The context of the question is really important. Notice how the negations are meaningful sentences in the example. You should negate the meaning of the sentence based on the question.";

    #[test]
    fn builtin_catalog_parses_and_covers_all_steps() {
        let catalog = PromptCatalog::builtin();
        for step in PromptStep::ALL {
            assert!(!catalog.template(step).user_pattern.is_empty());
        }
    }

    #[test]
    fn generation_templates_match_golden_text() {
        let catalog = PromptCatalog::builtin();
        let synonym = &catalog.template(PromptStep::SynonymGen).user_pattern;
        let antonym = &catalog.template(PromptStep::AntonymGen).user_pattern;
        assert!(
            synonym.starts_with(SYNONYM_TEMPLATE),
            "synonym template drifted from the golden text"
        );
        assert!(
            antonym.starts_with(ANTONYM_TEMPLATE),
            "antonym template drifted from the golden text"
        );
        assert_eq!(
            catalog.template(PromptStep::SynonymGen).system_text,
            "Generate synonym mutations of the base response"
        );
        assert_eq!(
            catalog.template(PromptStep::AntonymGen).system_text,
            "Generate antonym mutations of the base response"
        );
    }

    #[test]
    fn render_substitutes_all_placeholders() {
        let catalog = PromptCatalog::builtin();
        let bindings = Bindings::new()
            .with("question", "What is the most popular sport in Japan?")
            .with("answer", "Baseball is the most popular sport in Japan.")
            .with("n", "3");
        let (system, user) = catalog.render(PromptStep::SynonymGen, &bindings).unwrap();
        assert_eq!(system, "Generate synonym mutations of the base response");
        assert!(user.contains("1. Japan holds baseball as its most widely embraced sport."));
        assert!(user.ends_with("Question: What is the most popular sport in Japan?\nAnswer: Baseball is the most popular sport in Japan.\nMutations:"));
        assert!(!user.contains('{'));

        let (_, antonym_user) = catalog.render(PromptStep::AntonymGen, &bindings).unwrap();
        assert!(antonym_user.contains("Be careful about double negations"));
    }

    #[test]
    fn render_is_pure() {
        let catalog = PromptCatalog::builtin();
        let bindings = Bindings::new().with("mutation", "Baseball is popular.");
        let a = catalog
            .render(PromptStep::VerifySynonym, &bindings)
            .unwrap();
        let b = catalog
            .render(PromptStep::VerifySynonym, &bindings)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unbound_placeholder_is_an_error() {
        let catalog = PromptCatalog::builtin();
        let bindings = Bindings::new().with("question", "q").with("n", "3");
        let err = catalog
            .render(PromptStep::SynonymGen, &bindings)
            .unwrap_err();
        match err {
            PromptError::MissingPlaceholder(name) => assert_eq!(name, "answer"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_binding_counts_as_unbound() {
        let catalog = PromptCatalog::builtin();
        let bindings = Bindings::new().with("question", "");
        assert!(matches!(
            catalog.render(PromptStep::ConciseQa, &bindings),
            Err(PromptError::MissingPlaceholder(_))
        ));
    }

    #[test]
    fn catalog_file_must_define_every_step() {
        let partial = r#"
[[template]]
step = "concise_qa"
system = "s"
user = "{question}"
"#;
        let err = PromptCatalog::from_toml_str(partial, "<test>").unwrap_err();
        assert!(matches!(err, PromptError::BadCatalog { .. }));
    }

    #[test]
    fn duplicate_step_rejected() {
        let dup = r#"
[[template]]
step = "concise_qa"
system = "a"
user = "u"

[[template]]
step = "concise_qa"
system = "b"
user = "u"
"#;
        let err = PromptCatalog::from_toml_str(dup, "<test>").unwrap_err();
        match err {
            PromptError::BadCatalog { reason, .. } => assert!(reason.contains("duplicate")),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn steps_round_trip_through_strings() {
        for step in PromptStep::ALL {
            assert_eq!(step.as_str().parse::<PromptStep>().unwrap(), step);
        }
        assert!("no_such_step".parse::<PromptStep>().is_err());
    }
}
