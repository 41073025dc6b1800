use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    backoff_delay, CompletionRequest, CompletionResponse, FinishReason, GatewayError, Role,
    ENV_API_BASE, ENV_API_KEY, ENV_MODEL,
};

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_retries() -> u32 {
    3
}

fn default_backoff_base_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveConfig {
    /// Full chat-completions URL, or a base URL that `/chat/completions` is appended to.
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    /// Bearer token; never serialized.
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl LiveConfig {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        LiveConfig {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_base_ms(),
            api_key: None,
        }
    }

    /// Read `MENTIGO_API_BASE`, `MENTIGO_API_KEY` and (optionally) `MENTIGO_MODEL`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let base = std::env::var(ENV_API_BASE)
            .map_err(|_| GatewayError::InvalidConfig(format!("{ENV_API_BASE} is not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4o".to_string());
        let mut cfg = LiveConfig::new(base, model);
        cfg.api_key = std::env::var(ENV_API_KEY).ok();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.endpoint_url.trim().is_empty() {
            return Err(GatewayError::InvalidConfig(
                "live backend needs an endpoint".into(),
            ));
        }
        if self.model_name.trim().is_empty() {
            return Err(GatewayError::InvalidConfig(
                "live backend needs a model name".into(),
            ));
        }
        if self.timeout_ms == 0 {
            return Err(GatewayError::InvalidConfig(
                "timeout_ms must be positive".into(),
            ));
        }
        Ok(())
    }

    fn url(&self) -> String {
        let base = self.endpoint_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

pub(super) struct LiveBackend {
    cfg: LiveConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Retry(String),
    Fatal(GatewayError),
}

impl LiveBackend {
    pub(super) fn new(cfg: LiveConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build();
        LiveBackend { cfg, agent }
    }

    fn wire_body(&self, req: &CompletionRequest) -> serde_json::Value {
        let mut messages = Vec::with_capacity(req.messages.len() + 1);
        if !req.system_text.is_empty() {
            messages.push(json!({"role": "system", "content": req.system_text}));
        }
        for m in &req.messages {
            let role = match m.role {
                Role::Student => "user",
                Role::Mentor => "assistant",
                Role::System => "system",
            };
            messages.push(json!({"role": role, "content": m.text}));
        }
        json!({
            "model": self.cfg.model_name,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        })
    }

    pub(super) fn complete(
        &self,
        req: &CompletionRequest,
    ) -> Result<CompletionResponse, GatewayError> {
        let body = self.wire_body(req);
        let url = self.cfg.url();
        let base = Duration::from_millis(self.cfg.backoff_base_ms);
        let attempts = self.cfg.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let jitter: f64 = rand::thread_rng().gen();
                std::thread::sleep(backoff_delay(base, attempt - 1, jitter));
            }
            let started = Instant::now();
            match self.attempt(&url, &body, started) {
                Ok(resp) => return Ok(resp),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(detail)) => {
                    tracing::debug!(attempt = attempt + 1, %detail, "retryable backend failure");
                    last = detail;
                }
            }
        }
        Err(GatewayError::BackendTimeout {
            attempts,
            detail: last,
        })
    }

    fn attempt(
        &self,
        url: &str,
        body: &serde_json::Value,
        started: Instant,
    ) -> Result<CompletionResponse, Attempt> {
        let mut request = self.agent.post(url).set("Content-Type", "application/json");
        if let Some(key) = &self.cfg.api_key {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        match request.send_json(body) {
            Ok(resp) => {
                let value: serde_json::Value = resp
                    .into_json()
                    .map_err(|e| Attempt::Fatal(GatewayError::MalformedResponse(e.to_string())))?;
                parse_wire_response(&value, started.elapsed()).map_err(Attempt::Fatal)
            }
            Err(ureq::Error::Status(code, resp)) => {
                let detail = resp.into_string().unwrap_or_default();
                if code == 429 || code >= 500 {
                    Err(Attempt::Retry(format!("HTTP {code}: {detail}")))
                } else {
                    Err(Attempt::Fatal(GatewayError::BackendRefused {
                        status: code,
                        detail,
                    }))
                }
            }
            Err(ureq::Error::Transport(t)) => Err(Attempt::Retry(t.to_string())),
        }
    }
}

fn parse_wire_response(
    value: &serde_json::Value,
    elapsed: Duration,
) -> Result<CompletionResponse, GatewayError> {
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::MalformedResponse("no choices in response".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(|c| c.as_str())
        .unwrap_or_default()
        .to_string();
    let finish_reason = match choice.get("finish_reason").and_then(|f| f.as_str()) {
        Some("length") => FinishReason::Truncated,
        Some("content_filter") => FinishReason::Filtered,
        _ => FinishReason::Complete,
    };
    if finish_reason == FinishReason::Complete && text.trim().is_empty() {
        return Err(GatewayError::MalformedResponse("empty completion".into()));
    }
    Ok(CompletionResponse {
        text,
        finish_reason,
        latency_ms: u64::try_from(elapsed.as_millis()).unwrap_or(u64::MAX),
    })
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use super::super::{BackendConfig, Gateway, LlmBackend};
    use super::*;

    /// Serve canned HTTP responses in order, one per connection.
    fn stub_server(
        responses: Vec<(u16, String)>,
    ) -> (String, Arc<AtomicUsize>, Arc<std::sync::Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(std::sync::Mutex::new(Vec::new()));
        let (h, b) = (hits.clone(), bodies.clone());
        std::thread::spawn(move || {
            for (i, stream) in listener.incoming().enumerate() {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                b.lock().unwrap().push(String::from_utf8(body).unwrap());
                h.fetch_add(1, Ordering::SeqCst);
                let (status, text) = responses
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| responses.last().cloned().unwrap());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1"), hits, bodies)
    }

    fn cfg(url: String, retries: u32) -> BackendConfig {
        let mut c = LiveConfig::new(url, "test-model");
        c.max_retries = retries;
        c.backoff_base_ms = 5;
        c.timeout_ms = 2_000;
        c.api_key = Some("secret".into());
        BackendConfig::Live(c)
    }

    fn ok_body(text: &str) -> String {
        json!({"choices":[{"message":{"role":"assistant","content":text},"finish_reason":"stop"}]})
            .to_string()
    }

    #[test]
    fn always_503_times_out_after_retries_plus_one_attempts() {
        let (url, hits, _) = stub_server(vec![(503, "{}".into())]);
        let gw = Gateway::new(cfg(url, 2)).unwrap();
        let err = gw
            .complete(&CompletionRequest::new("hi", 0.2, 8))
            .unwrap_err();
        assert!(
            matches!(err, GatewayError::BackendTimeout { attempts: 3, .. }),
            "{err}"
        );
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn rate_limit_then_success() {
        let (url, hits, bodies) =
            stub_server(vec![(429, "{}".into()), (200, ok_body("Hello there"))]);
        let gw = Gateway::new(cfg(url, 2)).unwrap();
        let req = CompletionRequest::new("sys", 0.8, 50)
            .with_messages(vec![super::super::ChatMessage::new(Role::Student, "hi")]);
        let resp = gw.complete(&req).unwrap();
        assert_eq!(resp.text, "Hello there");
        assert_eq!(hits.load(Ordering::SeqCst), 2);
        let body: serde_json::Value = serde_json::from_str(&bodies.lock().unwrap()[1]).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["max_tokens"], 50);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["role"], "user");
        assert_eq!(body["messages"][1]["content"], "hi");
    }

    #[test]
    fn client_error_is_refused_without_retry() {
        let (url, hits, _) = stub_server(vec![(401, "{\"error\":\"bad key\"}".into())]);
        let gw = Gateway::new(cfg(url, 3)).unwrap();
        let err = gw
            .complete(&CompletionRequest::new("x", 0.2, 8))
            .unwrap_err();
        assert!(matches!(
            err,
            GatewayError::BackendRefused { status: 401, .. }
        ));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn unreachable_endpoint_times_out() {
        // Bind then drop to get a port with nothing listening.
        let port = TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let gw = Gateway::new(cfg(format!("http://127.0.0.1:{port}"), 1)).unwrap();
        let err = gw
            .complete(&CompletionRequest::new("x", 0.2, 8))
            .unwrap_err();
        assert!(matches!(
            err,
            GatewayError::BackendTimeout { attempts: 2, .. }
        ));
    }

    #[test]
    fn finish_reasons_map() {
        let v = json!({"choices":[{"message":{"content":"abc"},"finish_reason":"length"}]});
        assert_eq!(
            parse_wire_response(&v, Duration::ZERO)
                .unwrap()
                .finish_reason,
            FinishReason::Truncated
        );
        let empty = json!({"choices":[{"message":{"content":""},"finish_reason":"stop"}]});
        assert!(parse_wire_response(&empty, Duration::ZERO).is_err());
    }

    #[test]
    fn live_config_requires_endpoint_and_model() {
        assert!(LiveConfig::new("", "m").validate().is_err());
        assert!(LiveConfig::new("http://x", " ").validate().is_err());
        assert_eq!(
            LiveConfig::new("http://x/v1/", "m").url(),
            "http://x/v1/chat/completions"
        );
    }
}
