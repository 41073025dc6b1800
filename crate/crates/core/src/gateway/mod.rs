//! Uniform completion interface over a live chat-completions endpoint and a
//! deterministic scripted backend.
//!
//! The gateway only transports text. Callers that need structured output
//! parse and validate it themselves.

mod live;
mod scripted;

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use live::LiveConfig;
pub use scripted::{ScriptConfig, ScriptEntry, ScriptReply, ScriptedFailure};

pub const ENV_API_KEY: &str = "MENTIGO_API_KEY";
pub const ENV_API_BASE: &str = "MENTIGO_API_BASE";
pub const ENV_MODEL: &str = "MENTIGO_MODEL";

pub const CONTROLLER_TEMPERATURE: f32 = 0.2;
pub const MENTOR_TEMPERATURE: f32 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Student,
    Mentor,
    System,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

impl ChatMessage {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        ChatMessage {
            role,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_text: String,
    pub messages: Vec<ChatMessage>,
    /// Describes the expected structured output. Informational only: the
    /// gateway does not enforce it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_schema: Option<serde_json::Value>,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn new(system_text: impl Into<String>, temperature: f32, max_tokens: u32) -> Self {
        CompletionRequest {
            system_text: system_text.into(),
            messages: Vec::new(),
            response_schema: None,
            temperature,
            max_tokens,
        }
    }

    pub fn with_messages(mut self, messages: Vec<ChatMessage>) -> Self {
        self.messages = messages;
        self
    }

    pub fn with_schema(mut self, schema: serde_json::Value) -> Self {
        self.response_schema = Some(schema);
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.system_text.is_empty() && self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest(
                "messages must be non-empty when system_text is empty".into(),
            ));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_tokens must be at least 1".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(
                "temperature must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// All request text, used by scripted matchers.
    pub fn full_text(&self) -> String {
        let mut s = self.system_text.clone();
        for m in &self.messages {
            s.push('\n');
            s.push_str(&m.text);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Complete,
    Truncated,
    Filtered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("backend timed out after {attempts} attempt(s): {detail}")]
    BackendTimeout { attempts: u32, detail: String },
    #[error("backend refused the request (HTTP {status}): {detail}")]
    BackendRefused { status: u16, detail: String },
    #[error("scripted backend has no matching entry and no default")]
    ScriptExhausted,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
}

/// Anything that can answer a completion request.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Live(LiveConfig),
    Scripted(ScriptConfig),
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        match self {
            BackendConfig::Live(c) => c.validate(),
            BackendConfig::Scripted(c) => c.validate(),
        }
    }

    /// Scripted config that answers every request with `text`.
    pub fn always(text: impl Into<String>) -> Self {
        BackendConfig::Scripted(ScriptConfig::with_default(ScriptReply::Text(text.into())))
    }

    /// Scripted config whose every call fails as a timeout.
    pub fn unavailable() -> Self {
        BackendConfig::Scripted(ScriptConfig::with_default(ScriptReply::Fail(
            ScriptedFailure::Timeout,
        )))
    }
}

/// One logged call.
#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub request: CompletionRequest,
    pub outcome: Result<CompletionResponse, GatewayError>,
}

enum Transport {
    Live(live::LiveBackend),
    Scripted(scripted::ScriptedBackend),
}

/// A configured backend plus an inspectable call log.
pub struct Gateway {
    transport: Transport,
    log: Mutex<Vec<CallRecord>>,
}

impl Gateway {
    pub fn new(cfg: BackendConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let transport = match cfg {
            BackendConfig::Live(c) => Transport::Live(live::LiveBackend::new(c)),
            BackendConfig::Scripted(c) => Transport::Scripted(scripted::ScriptedBackend::new(c)),
        };
        Ok(Gateway {
            transport,
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn scripted(cfg: ScriptConfig) -> Result<Self, GatewayError> {
        Self::new(BackendConfig::Scripted(cfg))
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_live(&self) -> bool {
        matches!(self.transport, Transport::Live(_))
    }
}

impl LlmBackend for Gateway {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        req.validate()?;
        let outcome = match &self.transport {
            Transport::Live(b) => b.complete(req),
            Transport::Scripted(b) => b.complete(req),
        };
        self.log
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(CallRecord {
                request: req.clone(),
                outcome: outcome.clone(),
            });
        outcome
    }
}

impl<T: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<T> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        (**self).complete(req)
    }
}

/// Delay before retry number `retry` (0-based): `base · 2^retry` plus up to
/// half of that again as jitter.
pub fn backoff_delay(base: Duration, retry: u32, jitter_unit: f64) -> Duration {
    let exp = base.saturating_mul(2u32.saturating_pow(retry));
    let jitter = exp.mul_f64(0.5 * jitter_unit.clamp(0.0, 1.0));
    exp + jitter
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_path_logs_one_call() {
        let gw = Gateway::new(BackendConfig::always("OK")).unwrap();
        let resp = gw
            .complete(&CompletionRequest::new("anything", 0.2, 16))
            .unwrap();
        assert_eq!(resp.text, "OK");
        assert_eq!(resp.finish_reason, FinishReason::Complete);
        assert_eq!(gw.call_count(), 1);
    }

    #[test]
    fn request_validation() {
        let gw = Gateway::new(BackendConfig::always("OK")).unwrap();
        let empty = CompletionRequest::new("", 0.2, 16);
        assert!(matches!(
            gw.complete(&empty),
            Err(GatewayError::InvalidRequest(_))
        ));
        let zero = CompletionRequest::new("x", 0.2, 0);
        assert!(matches!(
            gw.complete(&zero),
            Err(GatewayError::InvalidRequest(_))
        ));
        assert_eq!(gw.call_count(), 0);
    }

    #[test]
    fn call_log_reproduces_request() {
        let gw = Gateway::new(BackendConfig::always("OK")).unwrap();
        let req = CompletionRequest::new("sys ✓", 0.8, 32)
            .with_messages(vec![ChatMessage::new(Role::Student, "héllo\n")]);
        gw.complete(&req).unwrap();
        assert_eq!(gw.call_log()[0].request, req);
    }

    #[test]
    fn backoff_grows_geometrically() {
        let base = Duration::from_millis(500);
        assert_eq!(backoff_delay(base, 0, 0.0), Duration::from_millis(500));
        assert_eq!(backoff_delay(base, 1, 0.0), Duration::from_millis(1000));
        assert_eq!(backoff_delay(base, 2, 1.0), Duration::from_millis(3000));
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = BackendConfig::Scripted(ScriptConfig {
            entries: vec![ScriptEntry::new("stage decision", "{\"advance\":true}")],
            default: None,
        });
        let text = serde_json::to_string(&cfg).unwrap();
        let back: BackendConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
