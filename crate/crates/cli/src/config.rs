use std::path::{Path, PathBuf};
use std::time::Duration;

use probe_inject::evaluation::DEFAULT_BETA;
use probe_inject::linear_head::TrainConfig;
use probe_inject::orchestrator::{BackendConfig, BackendKind, InferenceOptions, DEFAULT_AUTH_ENV};
use probe_inject::prompt_injection::Placement;
use serde::Deserialize;

use crate::CliError;

/// Everything a pipeline run can read from a TOML file. Command-line flags
/// take precedence over any value set here.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub train: TrainConfig,
    pub backend: BackendSection,
    pub infer: InferSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub features: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub head: Option<PathBuf>,
    pub responses: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model: String,
    pub timeout_secs: f64,
    pub max_in_flight: usize,
    pub retries: u32,
    pub backoff_ms: u64,
    pub auth_env: String,
}

impl Default for BackendSection {
    fn default() -> Self {
        let d = BackendConfig::default();
        Self {
            kind: d.kind,
            endpoint: d.endpoint,
            model: d.model_name,
            timeout_secs: d.timeout.as_secs_f64(),
            max_in_flight: d.max_in_flight,
            retries: d.retries,
            backoff_ms: d.backoff_base.as_millis() as u64,
            auth_env: DEFAULT_AUTH_ENV.into(),
        }
    }
}

impl BackendSection {
    pub fn to_backend_config(&self, threshold: f64) -> Result<BackendConfig, CliError> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(CliError::Config(format!(
                "backend.timeout_secs must be positive, got {}",
                self.timeout_secs
            )));
        }
        Ok(BackendConfig {
            kind: self.kind,
            endpoint: self.endpoint.clone(),
            model_name: self.model.clone(),
            timeout: Duration::from_secs_f64(self.timeout_secs),
            max_in_flight: self.max_in_flight.max(1),
            retries: self.retries,
            backoff_base: Duration::from_millis(self.backoff_ms),
            auth_env: self.auth_env.clone(),
            mock_threshold: threshold,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferSection {
    pub inject: bool,
    pub placement: Placement,
    pub question: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for InferSection {
    fn default() -> Self {
        let d = InferenceOptions::default();
        Self {
            inject: d.inject,
            placement: d.placement,
            question: d.question,
            max_tokens: d.max_tokens,
            temperature: d.temperature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub beta: f64,
    pub method: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            method: "model".into(),
        }
    }
}

pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::NotFound {
            what: "config",
            path: path.to_path_buf(),
        },
        _ => CliError::io(path, e),
    })?;
    toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.train.learning_rate, 1e-3);
        assert_eq!(c.eval.beta, 1.2);
        assert!(c.infer.inject);
    }

    #[test]
    fn sections_parse() {
        let c: PipelineConfig = toml::from_str(
            r#"
            [paths]
            features = "f.npy"
            [train]
            seed = 7
            max_epochs = 3
            [backend]
            kind = "http"
            endpoint = "http://localhost:1/v1/chat/completions"
            [infer]
            placement = "append"
            inject = false
            "#,
        )
        .unwrap();
        assert_eq!(c.paths.features.as_deref(), Some(Path::new("f.npy")));
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.backend.kind, BackendKind::Http);
        assert_eq!(c.infer.placement, Placement::Append);
        assert!(!c.infer.inject);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("[train]\nlearnin_rate = 1.0").is_err());
        assert!(toml::from_str::<PipelineConfig>("[trian]").is_err());
    }
}
