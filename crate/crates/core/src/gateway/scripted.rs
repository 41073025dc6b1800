use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, CompletionResponse, FinishReason, GatewayError};

/// A canned reply: either text or a forced failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptReply {
    Text(String),
    Fail(ScriptedFailure),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum ScriptedFailure {
    Timeout,
    Refused,
}

/// Fires once, for the first request whose text contains `matcher`
/// (an empty matcher matches everything).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match", default)]
    pub matcher: String,
    pub response: ScriptReply,
}

impl ScriptEntry {
    pub fn new(matcher: impl Into<String>, response: impl Into<String>) -> Self {
        ScriptEntry {
            matcher: matcher.into(),
            response: ScriptReply::Text(response.into()),
        }
    }

    pub fn failing(matcher: impl Into<String>, failure: ScriptedFailure) -> Self {
        ScriptEntry {
            matcher: matcher.into(),
            response: ScriptReply::Fail(failure),
        }
    }

    fn matches(&self, req: &CompletionRequest) -> bool {
        self.matcher.is_empty() || req.full_text().contains(&self.matcher)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScriptConfig {
    #[serde(default)]
    pub entries: Vec<ScriptEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<ScriptReply>,
}

impl ScriptConfig {
    pub fn with_default(reply: ScriptReply) -> Self {
        ScriptConfig {
            entries: Vec::new(),
            default: Some(reply),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.entries.is_empty() && self.default.is_none() {
            return Err(GatewayError::InvalidConfig(
                "scripted backend needs at least one entry or a default response".into(),
            ));
        }
        Ok(())
    }
}

pub(super) struct ScriptedBackend {
    entries: Mutex<Vec<(ScriptEntry, bool)>>,
    default: Option<ScriptReply>,
}

impl ScriptedBackend {
    pub(super) fn new(cfg: ScriptConfig) -> Self {
        ScriptedBackend {
            entries: Mutex::new(cfg.entries.into_iter().map(|e| (e, false)).collect()),
            default: cfg.default,
        }
    }

    pub(super) fn complete(
        &self,
        req: &CompletionRequest,
    ) -> Result<CompletionResponse, GatewayError> {
        // The lock spans match + consume so concurrent callers see a single order.
        let reply = {
            let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
            match entries
                .iter_mut()
                .find(|(entry, used)| !*used && entry.matches(req))
            {
                Some((entry, used)) => {
                    *used = true;
                    entry.response.clone()
                }
                None => self.default.clone().ok_or(GatewayError::ScriptExhausted)?,
            }
        };
        match reply {
            ScriptReply::Text(text) => Ok(CompletionResponse {
                text,
                finish_reason: FinishReason::Complete,
                latency_ms: 0,
            }),
            ScriptReply::Fail(ScriptedFailure::Timeout) => Err(GatewayError::BackendTimeout {
                attempts: 1,
                detail: "scripted timeout".into(),
            }),
            ScriptReply::Fail(ScriptedFailure::Refused) => Err(GatewayError::BackendRefused {
                status: 400,
                detail: "scripted refusal".into(),
            }),
        }
    }
}
