//! Inference flow: head probability → prompt sentence → chat backend, for
//! every test-split image, with bounded concurrency and manifest-ordered
//! output.

mod backend;

use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::ResponseRecord;
use crate::feature_store::{join, DatasetManifest, FeatureMatrix, Split, StoreError};
use crate::linear_head::{predict_batch, HeadError, HeadParams};
use crate::prompt_injection::{inject_text, render_prompt, InjectError, Placement};

pub use crate::prompt_injection::extract_injected_probability;
pub use backend::{
    parse_completion, HttpBackend, MockBackend, MOCK_DEFAULT_ANSWER, MOCK_FAKE_ANSWER,
    MOCK_REAL_ANSWER,
};

pub const DEFAULT_QUESTION: &str =
    "Is this image real or fake? Explain the visual evidence for your answer.";
pub const DEFAULT_AUTH_ENV: &str = "PROBE_INJECT_API_KEY";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    TransportError(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    /// Image id or path, passed through to the backend untouched.
    pub image_ref: String,
    pub prompt_text: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub image_ref: String,
    pub text: String,
    pub latency: Duration,
    pub backend_id: String,
    /// Attempts beyond the first.
    pub retries: u32,
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mock" => Ok(BackendKind::Mock),
            "http" => Ok(BackendKind::Http),
            other => Err(format!("unknown backend {other:?} (expected mock|http)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model_name: String,
    /// Per-attempt timeout.
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub retries: u32,
    /// First backoff delay; doubles per retry, with ±25% jitter.
    pub backoff_base: Duration,
    /// Environment variable holding a bearer token.
    pub auth_env: String,
    /// Decision threshold used by the mock backend.
    pub mock_threshold: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            model_name: "mock".into(),
            timeout: Duration::from_secs(60),
            max_in_flight: 4,
            retries: 3,
            backoff_base: Duration::from_millis(500),
            auth_env: DEFAULT_AUTH_ENV.into(),
            mock_threshold: 0.5,
        }
    }
}

pub fn build_backend(config: &BackendConfig) -> Result<Box<dyn ChatBackend>, BackendError> {
    Ok(match config.kind {
        BackendKind::Mock => Box::new(MockBackend {
            threshold: config.mock_threshold,
        }),
        BackendKind::Http => Box::new(HttpBackend::new(config.clone())?),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOptions {
    pub inject: bool,
    pub placement: Placement,
    pub question: String,
    pub max_in_flight: usize,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            inject: true,
            placement: Placement::Prepend,
            question: DEFAULT_QUESTION.into(),
            max_in_flight: 4,
            max_tokens: 512,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Inject(#[from] InjectError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub total: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub retries: u64,
}

#[derive(Debug, Clone)]
pub struct InferenceRun {
    pub records: Vec<ResponseRecord>,
    pub summary: RunSummary,
}

impl InferenceRun {
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("response record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Runs every test-split image through head → prompt → backend. A failing
/// backend call becomes an `{image_id, error}` record and never aborts the
/// run. Output order is manifest order at any concurrency level.
pub fn run_inference(
    manifest: &DatasetManifest,
    features: &FeatureMatrix,
    head: &HeadParams,
    backend: &dyn ChatBackend,
    options: &InferenceOptions,
) -> Result<InferenceRun, RunError> {
    let records: Vec<_> = join(features, manifest)?
        .into_iter()
        .filter(|r| r.split == Split::Test)
        .collect();
    let predictions = predict_batch(&records, head)?;
    let requests = predictions
        .iter()
        .map(|p| {
            let prompt_text = if options.inject {
                inject_text(&options.question, &render_prompt(p.probability_fake)?, options.placement)
            } else {
                options.question.clone()
            };
            Ok(ChatRequest {
                image_ref: p.image_id.clone(),
                prompt_text,
                max_tokens: options.max_tokens,
                temperature: options.temperature,
            })
        })
        .collect::<Result<Vec<_>, InjectError>>()?;

    let results = dispatch(backend, &requests, options.max_in_flight.max(1));

    let mut summary = RunSummary {
        total: requests.len(),
        succeeded: 0,
        failed: 0,
        retries: 0,
    };
    let records = requests
        .into_iter()
        .zip(predictions)
        .zip(results)
        .map(|((req, pred), result)| match result {
            Ok(resp) => {
                summary.succeeded += 1;
                summary.retries += resp.retries as u64;
                ResponseRecord {
                    image_id: pred.image_id,
                    probability_fake: Some(pred.probability_fake),
                    prompt: Some(req.prompt_text),
                    response: Some(resp.text),
                    error: None,
                }
            }
            Err(e) => {
                summary.failed += 1;
                ResponseRecord {
                    image_id: pred.image_id,
                    probability_fake: None,
                    prompt: None,
                    response: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();
    Ok(InferenceRun { records, summary })
}

/// Issues the requests with at most `max_in_flight` outstanding calls.
fn dispatch(
    backend: &dyn ChatBackend,
    requests: &[ChatRequest],
    max_in_flight: usize,
) -> Vec<Result<ChatResponse, BackendError>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<ChatResponse, BackendError>>>> =
        Mutex::new(vec![None; requests.len()]);
    let workers = max_in_flight.min(requests.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(req) = requests.get(i) else { break };
                let result = backend.complete(req);
                slots.lock().expect("result slots poisoned")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every request dispatched"))
        .collect()
}
