//! Run configuration: defaults, config-file loading, and validation.
//!
//! The config file is a flat `key = value` TOML document whose keys mirror
//! [`RunConfig`] field names one-for-one. Precedence is flags over file over
//! defaults; the CLI applies flag overrides after loading.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::Threshold;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {reason}")]
    Invalid { path: String, reason: String },
}

/// Everything a run needs. Defaults encode the reference experimental setup
/// (generation temperature 0.1, threshold 0.5, five synonym plus five
/// antonym mutations, ten baseline samples at temperature 0.5), so a bare
/// `run` reproduces the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model_id: String,
    pub endpoint_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    /// Classification threshold as a decimal string (exact, max 4 places).
    pub threshold: String,
    pub syn_count: usize,
    pub ant_count: usize,
    pub baseline_k: usize,
    pub baseline_temperature: f64,
    pub seed: u64,
    pub max_answer_tokens: u32,
    pub max_verdict_tokens: u32,
    pub max_in_flight: usize,
    pub retry_attempts: u32,
    pub retry_initial_backoff_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_catalog_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<PathBuf>,
    /// Scripted mock backend; when set, no live calls are made.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock_script: Option<PathBuf>,
    /// Excluded from output-file config echoes (self-referential).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model_id: "gpt-3.5-turbo-0125".into(),
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "METAQA_API_KEY".into(),
            temperature: 0.1,
            threshold: "0.5".into(),
            syn_count: 5,
            ant_count: 5,
            baseline_k: 10,
            baseline_temperature: 0.5,
            seed: 0,
            max_answer_tokens: 512,
            max_verdict_tokens: 16,
            max_in_flight: 4,
            retry_attempts: 3,
            retry_initial_backoff_ms: 1000,
            cache_dir: Some(PathBuf::from("metaqa-cache")),
            prompt_catalog_path: None,
            dataset_path: None,
            mock_script: None,
            output_path: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Invalid {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let config: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Invalid {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        config.validate().map_err(|reason| ConfigError::Invalid {
            path: path.display().to_string(),
            reason,
        })?;
        Ok(config)
    }

    pub fn threshold(&self) -> Result<Threshold, String> {
        self.threshold
            .parse::<Threshold>()
            .map_err(|e| e.to_string())
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if !(0.0..=2.0).contains(&self.baseline_temperature) {
            return Err(format!(
                "baseline_temperature {} outside [0, 2]",
                self.baseline_temperature
            ));
        }
        self.threshold()?;
        if self.syn_count + self.ant_count == 0 {
            return Err("syn_count + ant_count must be at least 1".into());
        }
        if self.baseline_k == 0 {
            return Err("baseline_k must be at least 1".into());
        }
        if self.max_answer_tokens == 0 || self.max_verdict_tokens == 0 {
            return Err("token limits must be positive".into());
        }
        Ok(())
    }

    /// Copy embedded in output-file headers: everything except the output
    /// path, so reruns to different files stay byte-comparable.
    pub fn echo(&self) -> RunConfig {
        let mut echo = self.clone();
        echo.output_path = None;
        echo
    }
}
