//! Chat-completion HTTP backend (OpenAI-style request/response shape).

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::Value;

use super::{strip_persona_tag, BackendConfig, BackendError, ChatBackend, ChatRequest, Role};
use crate::error::{Error, Result};

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

pub struct HttpBackend {
    config: BackendConfig,
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    last_request: Mutex<Option<Instant>>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self> {
        config.validate()?;
        let endpoint = config.endpoint.clone().expect("validated");
        let api_key = match &config.api_key_env {
            Some(var) => match std::env::var(var) {
                Ok(key) => Some(key),
                Err(_) => {
                    return Err(Error::Config(format!(
                        "{}: environment variable {var} is not set",
                        config.model
                    )))
                }
            },
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpBackend {
            config,
            endpoint,
            api_key,
            agent,
            last_request: Mutex::new(None),
        })
    }

    fn wait_for_slot(&self) {
        let min = Duration::from_millis(self.config.min_interval_ms);
        let mut last = self.last_request.lock().expect("rate limiter poisoned");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < min {
                thread::sleep(min - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn send_once(&self, body: &WireRequest<'_>) -> Result<String, BackendError> {
        self.wait_for_slot();
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status, body: text });
        }
        extract_content(&text)
    }
}

fn extract_content(body: &str) -> Result<String, BackendError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| BackendError::BadResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::BadResponse("missing choices[0].message.content".into()))
}

impl ChatBackend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, request: ChatRequest<'_>) -> Result<String, BackendError> {
        let messages = request
            .messages
            .iter()
            .map(|m| WireMessage {
                role: m.role.wire_name(),
                content: match m.role {
                    Role::System => strip_persona_tag(&m.content),
                    _ => &m.content,
                },
            })
            .collect();
        let body = WireRequest {
            model: &self.config.model,
            messages,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let mut attempt = 0;
        loop {
            match self.send_once(&body) {
                Err(e) if e.is_retryable() && attempt < self.config.max_retries => {
                    let delay = self.config.backoff_ms.saturating_mul(1 << attempt.min(16));
                    thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
