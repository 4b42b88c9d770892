//! Scripted benchmark conversations against a chat-completion backend.

#[cfg(feature = "http")]
mod http;
mod mock;
mod runner;
mod transcript;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{read_to_string, Error, Result};

#[cfg(feature = "http")]
pub use http::HttpBackend;
pub use mock::{mock_respond, MockBackend, MockFixture, PersonaRule};
pub use runner::{
    derive_session_seed, run_campaign, run_session, CampaignPlan, DriftSetup, SessionError,
    SessionOptions, SessionOutcome,
};
pub use transcript::{
    read_transcripts, Exchange, Injection, Transcript, TranscriptRecord, TranscriptWriter,
};

pub const DEFAULT_SCRIPT: &str = include_str!("../../assets/script.txt");

/// First line of every system prompt sent by the runner: `[persona: <id>]`.
/// The mock backend keys on it; the HTTP backend strips it before sending.
pub const PERSONA_TAG_PREFIX: &str = "[persona: ";

pub fn persona_tag(persona_id: &str) -> String {
    format!("{PERSONA_TAG_PREFIX}{persona_id}]")
}

/// Reads the persona id from a tagged system prompt.
pub fn parse_persona_tag(system_prompt: &str) -> Option<&str> {
    system_prompt
        .lines()
        .next()?
        .strip_prefix(PERSONA_TAG_PREFIX)?
        .strip_suffix(']')
}

/// Removes the persona tag line, if present.
pub fn strip_persona_tag(system_prompt: &str) -> &str {
    match parse_persona_tag(system_prompt) {
        Some(_) => system_prompt
            .split_once('\n')
            .map(|(_, rest)| rest)
            .unwrap_or(""),
        None => system_prompt,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    Donor,
    Agent,
}

impl Role {
    /// Role name in chat-completion requests.
    pub fn wire_name(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::Donor => "user",
            Role::Agent => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    pub turn_index: usize,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>, turn_index: usize) -> Self {
        ChatMessage {
            role,
            content: content.into(),
            turn_index,
        }
    }
}

/// Fixed, ordered donor utterances used identically across personas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationScript {
    pub id: String,
    utterances: Vec<String>,
}

impl ConversationScript {
    pub fn new(id: impl Into<String>, utterances: Vec<String>) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::InvalidArgument(
                "conversation script is empty".into(),
            ));
        }
        if let Some(i) = utterances.iter().position(|u| u.trim().is_empty()) {
            return Err(Error::InvalidArgument(format!(
                "script utterance {} is empty",
                i + 1
            )));
        }
        Ok(ConversationScript {
            id: id.into(),
            utterances,
        })
    }

    /// One utterance per line; blank lines and `#` comments are ignored.
    pub fn parse(id: impl Into<String>, source: &str) -> Result<Self> {
        let utterances = source
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        ConversationScript::new(id, utterances)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "script".into());
        ConversationScript::parse(id, &read_to_string(path)?)
    }

    pub fn builtin() -> Self {
        ConversationScript::parse("default", DEFAULT_SCRIPT).expect("shipped script is valid")
    }

    pub fn utterances(&self) -> &[String] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("bad response: {0}")]
    BadResponse(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Transport failures and 5xx responses are retried; 4xx never are.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// One chat-completion request: the running conversation plus the session's
/// seed (used by deterministic backends).
#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    pub messages: &'a [ChatMessage],
    pub seed: u64,
}

pub trait ChatBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, request: ChatRequest<'_>) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

/// One backend entry of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Model id recorded in transcripts; also the `model` request field.
    pub model: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    /// Environment variable holding the API key. Keys never live in config.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub min_interval_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    /// Mixed into every session seed of a mock backend.
    #[serde(default)]
    pub seed: u64,
}

fn default_temperature() -> f64 {
    1.0
}
fn default_max_tokens() -> u32 {
    150
}
fn default_timeout_secs() -> f64 {
    60.0
}
fn default_api_key_env() -> Option<String> {
    Some("OPENAI_API_KEY".into())
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}

impl BackendConfig {
    pub fn mock(model: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            model: model.into(),
            endpoint: None,
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            timeout_secs: default_timeout_secs(),
            api_key_env: None,
            min_interval_ms: 0,
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
            fixture: None,
            seed: 0,
        }
    }

    pub fn http(model: impl Into<String>, endpoint: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::Http,
            endpoint: Some(endpoint.into()),
            api_key_env: default_api_key_env(),
            ..BackendConfig::mock(model)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.trim().is_empty() {
            return Err(Error::Config("backend model id is empty".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Config(format!(
                "{}: temperature must be >= 0",
                self.model
            )));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(Error::Config(format!(
                "{}: timeout must be > 0",
                self.model
            )));
        }
        if self.kind == BackendKind::Http && self.endpoint.is_none() {
            return Err(Error::Config(format!(
                "{}: http backend needs an endpoint",
                self.model
            )));
        }
        Ok(())
    }

    /// Instantiates the backend. Relative fixture paths resolve against
    /// `base_dir`; a mock without a fixture uses the shipped demo fixture.
    pub fn build(&self, base_dir: &Path) -> Result<Arc<dyn ChatBackend>> {
        self.validate()?;
        match self.kind {
            BackendKind::Mock => {
                let fixture = match &self.fixture {
                    Some(p) => MockFixture::load(&base_dir.join(p))?,
                    None => MockFixture::builtin(),
                };
                Ok(Arc::new(
                    MockBackend::new(&self.model, fixture).with_seed(self.seed),
                ))
            }
            #[cfg(feature = "http")]
            BackendKind::Http => Ok(Arc::new(HttpBackend::new(self.clone())?)),
            #[cfg(not(feature = "http"))]
            BackendKind::Http => Err(Error::Config(
                "this build has no HTTP backend support".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_script_has_ten_utterances() {
        let s = ConversationScript::builtin();
        assert_eq!(s.len(), 10);
    }

    #[test]
    fn empty_script_rejected() {
        assert!(matches!(
            ConversationScript::new("x", vec![]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            ConversationScript::parse("x", "# only comments\n\n"),
            Err(Error::InvalidArgument(_))
        ));
        assert!(ConversationScript::new("x", vec!["hi".into(), " ".into()]).is_err());
    }

    #[test]
    fn persona_tag_round_trip() {
        let prompt = format!("{}\nAct as...", persona_tag("opt-sub-aff"));
        assert_eq!(parse_persona_tag(&prompt), Some("opt-sub-aff"));
        assert_eq!(strip_persona_tag(&prompt), "Act as...");
        assert_eq!(strip_persona_tag("plain"), "plain");
    }

    #[test]
    fn retry_classification() {
        assert!(BackendError::Transport("reset".into()).is_retryable());
        assert!(BackendError::Status {
            status: 503,
            body: String::new()
        }
        .is_retryable());
        assert!(!BackendError::Status {
            status: 400,
            body: String::new()
        }
        .is_retryable());
        assert!(!BackendError::Status {
            status: 429,
            body: String::new()
        }
        .is_retryable());
        assert!(!BackendError::BadResponse("x".into()).is_retryable());
    }

    #[test]
    fn backend_config_validation() {
        let mut c = BackendConfig::http("m", "http://localhost:1/v1/chat/completions");
        c.validate().unwrap();
        c.temperature = -0.5;
        assert!(c.validate().is_err());
        let mut c = BackendConfig::mock("m");
        c.timeout_secs = 0.0;
        assert!(c.validate().is_err());
        let mut c = BackendConfig::http("m", "x");
        c.endpoint = None;
        assert!(c.validate().is_err());
    }

    #[test]
    fn backend_config_from_toml() {
        let c: BackendConfig = toml::from_str(
            "kind = \"http\"\nmodel = \"gpt-4\"\nendpoint = \"https://api.example.com/v1/chat/completions\"\n",
        )
        .unwrap();
        assert_eq!(c.temperature, 1.0);
        assert_eq!(c.max_tokens, 150);
        assert_eq!(c.max_retries, 3);
        assert_eq!(c.api_key_env.as_deref(), Some("OPENAI_API_KEY"));
        assert!(toml::from_str::<BackendConfig>(
            "kind = \"mock\"\nmodel = \"m\"\napi_key = \"sk\"\n"
        )
        .is_err());
    }
}
