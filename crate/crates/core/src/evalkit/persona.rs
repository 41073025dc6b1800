use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::ScriptConfig;
use crate::kb::StateId;

use super::EvalError;

pub const DEFAULT_TOPIC: &str = "Low-Carbon Campus";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaTurn {
    pub utterance: String,
    pub ground_truth_states: Vec<StateId>,
    /// Seconds of silence before this turn is sent.
    #[serde(default)]
    pub delay_s: f64,
}

/// Scripts for both agents of one episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptBundle {
    pub controller: ScriptConfig,
    pub mentor: ScriptConfig,
}

impl ScriptBundle {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaScript {
    pub name: String,
    #[serde(default = "default_topic")]
    pub task_topic: String,
    pub turns: Vec<PersonaTurn>,
    /// Backend scripts that drive this persona's golden run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<ScriptBundle>,
}

fn default_topic() -> String {
    DEFAULT_TOPIC.to_string()
}

impl PersonaScript {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Persona(format!("{}: {m}", self.name)));
        if self.name.trim().is_empty() {
            return Err(EvalError::Persona("persona name is empty".into()));
        }
        if self.turns.is_empty() {
            return bad("needs at least one turn".into());
        }
        for (i, t) in self.turns.iter().enumerate() {
            if t.utterance.trim().is_empty() {
                return bad(format!("turn {} has an empty utterance", i + 1));
            }
            if !(t.delay_s.is_finite() && t.delay_s >= 0.0) {
                return bad(format!("turn {} has an invalid delay", i + 1));
            }
            if let Some(s) = t.ground_truth_states.iter().find(|s| s.is_sentinel()) {
                return bad(format!("turn {} lists sentinel state {s}", i + 1));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let p: PersonaScript =
            serde_json::from_str(text).map_err(|e| EvalError::Persona(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text).map_err(|e| match e {
            EvalError::Persona(m) => EvalError::Persona(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_validates() {
        let p = PersonaScript::from_json(
            r#"{"name":"p","turns":[{"utterance":"hi","ground_truth_states":[2],"delay_s":3.5}]}"#,
        )
        .unwrap();
        assert_eq!(p.task_topic, DEFAULT_TOPIC);
        assert_eq!(p.turns[0].ground_truth_states, vec![StateId::Listed(2)]);

        for bad in [
            r#"{"name":"p","turns":[]}"#,
            r#"{"name":"p","turns":[{"utterance":"hi","ground_truth_states":["STAGE_START"]}]}"#,
            r#"{"name":"p","turns":[{"utterance":"hi","ground_truth_states":[2],"delay_s":-1}]}"#,
            r#"{"name":"p","turns":[{"utterance":" ","ground_truth_states":[2]}]}"#,
        ] {
            assert!(PersonaScript::from_json(bad).is_err(), "{bad}");
        }
    }
}
