use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::{json, Value};

use super::{BackendConfig, BackendError, ChatBackend, ChatRequest, ChatResponse};
use crate::prompt_injection::extract_injected_probability;

pub const MOCK_FAKE_ANSWER: &str = "This image is fake. Surfaces are unnaturally smooth and the \
     fine structures around edges and text are distorted.";
pub const MOCK_REAL_ANSWER: &str = "This image is real. Lighting and shadows are consistent and \
     the textures show ordinary sensor noise.";
pub const MOCK_DEFAULT_ANSWER: &str = "This image is real.";

/// Deterministic stand-in for a fine-tuned model: it thresholds the injected
/// classifier probability and otherwise always answers Real.
#[derive(Debug, Clone)]
pub struct MockBackend {
    pub threshold: f64,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

impl ChatBackend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let start = Instant::now();
        let text = match extract_injected_probability(&request.prompt_text) {
            Some(p) if p >= self.threshold => MOCK_FAKE_ANSWER,
            Some(_) => MOCK_REAL_ANSWER,
            None => MOCK_DEFAULT_ANSWER,
        };
        Ok(ChatResponse {
            image_ref: request.image_ref.clone(),
            text: text.to_string(),
            latency: start.elapsed(),
            backend_id: self.id().to_string(),
            retries: 0,
        })
    }
}

/// Chat-completion client over HTTP with per-attempt timeouts and
/// exponential backoff on 429, 5xx, and transport failures.
pub struct HttpBackend {
    config: BackendConfig,
    agent: ureq::Agent,
    token: Option<String>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        if config.endpoint.is_none() {
            return Err(BackendError::TransportError("http backend needs an endpoint".into()));
        }
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        let token = std::env::var(&config.auth_env).ok().filter(|t| !t.is_empty());
        Ok(Self { config, agent, token })
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        json!({
            "model": self.config.model_name,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "image_url", "image_url": {"url": request.image_ref}},
                    {"type": "text", "text": request.prompt_text},
                ],
            }],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        })
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.config.backoff_base.as_secs_f64() * 2f64.powi(attempt as i32);
        let jitter = rand::thread_rng().gen_range(0.75..1.25);
        Duration::from_secs_f64(base * jitter)
    }

    fn attempt(&self, body: &Value) -> Result<String, Attempt> {
        let endpoint = self.config.endpoint.as_deref().unwrap_or_default();
        let mut req = self.agent.post(endpoint);
        if let Some(t) = &self.token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        match req.send_json(body.clone()) {
            Ok(resp) => {
                let text = resp
                    .into_string()
                    .map_err(|e| Attempt::Retry(transport_io(&e)))?;
                parse_completion(&text).map_err(Attempt::Fatal)
            }
            Err(ureq::Error::Status(429, _)) => Attempt::retry(BackendError::RateLimited {
                attempts: 0,
            }),
            Err(ureq::Error::Status(code, _)) if code >= 500 => {
                Attempt::retry(BackendError::TransportError(format!("server returned {code}")))
            }
            Err(ureq::Error::Status(code, _)) => Err(Attempt::Fatal(BackendError::TransportError(
                format!("server returned {code}"),
            ))),
            Err(ureq::Error::Transport(t)) => Attempt::retry(classify_transport(&t)),
        }
    }
}

enum Attempt {
    Retry(BackendError),
    Fatal(BackendError),
}

impl Attempt {
    fn retry<T>(e: BackendError) -> Result<T, Attempt> {
        Err(Attempt::Retry(e))
    }
}

impl ChatBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.config.model_name
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let body = self.request_body(request);
        let start = Instant::now();
        let mut attempt = 0u32;
        loop {
            match self.attempt(&body) {
                Ok(text) => {
                    return Ok(ChatResponse {
                        image_ref: request.image_ref.clone(),
                        text,
                        latency: start.elapsed(),
                        backend_id: self.id().to_string(),
                        retries: attempt,
                    })
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    if attempt >= self.config.retries {
                        return Err(match e {
                            BackendError::RateLimited { .. } => {
                                BackendError::RateLimited { attempts: attempt + 1 }
                            }
                            other => other,
                        });
                    }
                    std::thread::sleep(self.backoff(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

fn transport_io(e: &std::io::Error) -> BackendError {
    if matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) {
        BackendError::Timeout
    } else {
        BackendError::TransportError(e.to_string())
    }
}

fn classify_transport(t: &ureq::Transport) -> BackendError {
    let io = std::error::Error::source(t).and_then(|s| s.downcast_ref::<std::io::Error>());
    match io {
        Some(e) => transport_io(e),
        None if t.to_string().contains("timed out") => BackendError::Timeout,
        None => BackendError::TransportError(t.to_string()),
    }
}

/// Reads `choices[0].message.content`, as a string or a list of text parts.
pub fn parse_completion(body: &str) -> Result<String, BackendError> {
    let malformed = |m: &str| BackendError::MalformedResponse(m.to_string());
    let v: Value = serde_json::from_str(body).map_err(|e| malformed(&e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .ok_or_else(|| malformed("missing choices[0].message.content"))?;
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        _ => return Err(malformed("content is neither a string nor a list of parts")),
    };
    if text.is_empty() {
        return Err(malformed("empty completion text"));
    }
    Ok(text)
}
