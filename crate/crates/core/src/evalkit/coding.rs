//! Turn coding: speech type and cognitive level for each student turn.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatMessage, CompletionRequest, LlmBackend, Role, CONTROLLER_TEMPERATURE};
use crate::session::{EventBody, SessionEvent};
use crate::template::Template;

use super::EvalError;

pub const BUNDLED_RULES: &str = include_str!("../../../../rules/turn_coding.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpeechType {
    Positive,
    Neutral,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CognitiveLevel {
    Remembering,
    Understanding,
    Applying,
    Analyzing,
    Evaluation,
    Creation,
}

macro_rules! enum_strings {
    ($ty:ty { $($v:ident),* }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$(<$ty>::$v),*];

            pub fn as_str(self) -> &'static str {
                match self { $(<$ty>::$v => stringify!($v)),* }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                let s = s.trim();
                <$ty>::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str().eq_ignore_ascii_case(s))
                    .ok_or_else(|| format!("unknown {} {s:?}", stringify!($ty)))
            }
        }
    };
}

enum_strings!(SpeechType {
    Positive,
    Neutral,
    Negative
});
enum_strings!(CognitiveLevel {
    Remembering,
    Understanding,
    Applying,
    Analyzing,
    Evaluation,
    Creation
});

/// Where a coded turn sits in its session's event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRef {
    pub session_id: String,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodedTurn {
    pub turn_ref: TurnRef,
    pub speech_type: SpeechType,
    pub cognitive_level: CognitiveLevel,
}

#[derive(Debug, Clone, Deserialize)]
struct CategoryDoc {
    #[serde(default)]
    question_mark: bool,
    phrases: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct DimensionDoc {
    order: Vec<String>,
    default: String,
    categories: BTreeMap<String, CategoryDoc>,
}

#[derive(Debug, Clone, Deserialize)]
struct RulesDoc {
    speech_type: DimensionDoc,
    cognitive_level: DimensionDoc,
}

#[derive(Debug, Clone)]
struct Category<T> {
    value: T,
    question_mark: bool,
    phrases: Vec<String>,
}

#[derive(Debug, Clone)]
struct Dimension<T> {
    ordered: Vec<Category<T>>,
    default: T,
}

impl<T: Copy + FromStr<Err = String>> Dimension<T> {
    fn build(doc: DimensionDoc) -> Result<Self, EvalError> {
        let mut ordered = Vec::new();
        for name in &doc.order {
            let value = name.parse().map_err(EvalError::Rules)?;
            let cat = doc
                .categories
                .get(name)
                .ok_or_else(|| EvalError::Rules(format!("no rules for {name}")))?;
            ordered.push(Category {
                value,
                question_mark: cat.question_mark,
                phrases: cat.phrases.iter().map(|p| normalize(p)).collect(),
            });
        }
        Ok(Dimension {
            ordered,
            default: doc.default.parse().map_err(EvalError::Rules)?,
        })
    }

    fn classify(&self, normalized: &str, ends_with_question: bool) -> T {
        self.ordered
            .iter()
            .find(|c| {
                (c.question_mark && ends_with_question)
                    || c.phrases.iter().any(|p| normalized.contains(p.as_str()))
            })
            .map(|c| c.value)
            .unwrap_or(self.default)
    }
}

/// Keyword heuristics loaded from `rules/turn_coding.json`.
#[derive(Debug, Clone)]
pub struct CodingRules {
    speech: Dimension<SpeechType>,
    cognitive: Dimension<CognitiveLevel>,
}

impl CodingRules {
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_RULES).expect("bundled rules are valid")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let doc: RulesDoc =
            serde_json::from_str(text).map_err(|e| EvalError::Rules(e.to_string()))?;
        Ok(CodingRules {
            speech: Dimension::build(doc.speech_type)?,
            cognitive: Dimension::build(doc.cognitive_level)?,
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn classify(&self, text: &str) -> (SpeechType, CognitiveLevel) {
        let norm = normalize(text);
        let question = text.trim_end().ends_with('?') || text.trim_end().ends_with('？');
        (
            self.speech.classify(&norm, question),
            self.cognitive.classify(&norm, question),
        )
    }
}

/// Lower-case words separated and surrounded by single spaces, so phrase
/// matching respects word boundaries.
fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase().replace(['’', '‘'], "'");
    let words: Vec<&str> = lowered
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .collect();
    format!(" {} ", words.join(" "))
}

pub enum Coder<'a> {
    Rules(&'a CodingRules),
    Backend {
        backend: &'a dyn LlmBackend,
        prompt: &'a Template,
    },
}

#[derive(Deserialize)]
struct CodingReply {
    speech_type: String,
    cognitive_level: String,
}

pub fn code_turn(text: &str, turn_ref: TurnRef, coder: &Coder<'_>) -> Result<CodedTurn, EvalError> {
    if text.trim().is_empty() {
        return Err(EvalError::EmptyTurn);
    }
    let (speech_type, cognitive_level) = match coder {
        Coder::Rules(rules) => rules.classify(text),
        Coder::Backend { backend, prompt } => code_with_backend(text, *backend, prompt)?,
    };
    Ok(CodedTurn {
        turn_ref,
        speech_type,
        cognitive_level,
    })
}

fn code_with_backend(
    text: &str,
    backend: &dyn LlmBackend,
    prompt: &Template,
) -> Result<(SpeechType, CognitiveLevel), EvalError> {
    let system = prompt
        .render(&[("utterance", text)])
        .map_err(|e| EvalError::CodingFailed(e.to_string()))?;
    let parse = |reply: &str| -> Result<(SpeechType, CognitiveLevel), String> {
        let body = json_object(reply).ok_or("no JSON object in reply")?;
        let r: CodingReply = serde_json::from_str(body).map_err(|e| e.to_string())?;
        Ok((r.speech_type.parse()?, r.cognitive_level.parse()?))
    };
    let req = CompletionRequest::new(system, CONTROLLER_TEMPERATURE, 100);
    let first = backend
        .complete(&req)
        .map_err(|e| EvalError::CodingFailed(e.to_string()))?;
    let reason = match parse(&first.text) {
        Ok(v) => return Ok(v),
        Err(r) => r,
    };
    let retry = req.with_messages(vec![
        ChatMessage::new(Role::Mentor, first.text),
        ChatMessage::new(
            Role::System,
            format!("That reply could not be used ({reason}). Answer with only the JSON object, using the listed category names."),
        ),
    ]);
    let second = backend
        .complete(&retry)
        .map_err(|e| EvalError::CodingFailed(e.to_string()))?;
    parse(&second.text).map_err(EvalError::CodingFailed)
}

pub(crate) fn json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

/// Code every student turn in a session log.
pub fn code_session(
    events: &[SessionEvent],
    coder: &Coder<'_>,
) -> Result<Vec<CodedTurn>, EvalError> {
    let session_id = match events.first().map(|e| &e.body) {
        Some(EventBody::Created(c)) => c.session_id.clone(),
        _ => return Err(EvalError::Precondition("log has no created event".into())),
    };
    events
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::StudentMsg(p) => Some((e.seq, p.text.as_str())),
            _ => None,
        })
        .map(|(seq, text)| {
            code_turn(
                text,
                TurnRef {
                    session_id: session_id.clone(),
                    seq,
                },
                coder,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{BackendConfig, Gateway, ScriptConfig, ScriptEntry};
    use crate::prompts::PromptSet;

    fn r() -> TurnRef {
        TurnRef {
            session_id: "s".into(),
            seq: 1,
        }
    }

    fn rule_code(text: &str) -> CodedTurn {
        let rules = CodingRules::bundled();
        code_turn(text, r(), &Coder::Rules(&rules)).unwrap()
    }

    #[test]
    fn table_examples() {
        assert_eq!(
            rule_code("Just give me the answer.").speech_type,
            SpeechType::Negative
        );
        assert_eq!(
            rule_code("What if we also measured cafeteria waste?").speech_type,
            SpeechType::Positive
        );
        assert_eq!(
            rule_code("I'm confused about this step").speech_type,
            SpeechType::Neutral
        );
        let rules = CodingRules::bundled();
        assert!(matches!(
            code_turn("  ", r(), &Coder::Rules(&rules)),
            Err(EvalError::EmptyTurn)
        ));
    }

    #[test]
    fn word_boundaries() {
        // "because" must not match the phrase "use it".
        let c = rule_code("because lights stay on");
        assert_eq!(c.cognitive_level, CognitiveLevel::Analyzing);
        assert_eq!(
            rule_code("Lights.").cognitive_level,
            CognitiveLevel::Remembering
        );
    }

    #[test]
    fn backend_mode_with_reask() {
        let prompts = PromptSet::bundled();
        let gw = Gateway::scripted(ScriptConfig {
            entries: vec![
                ScriptEntry::new(
                    "",
                    r#"{"speech_type":"Happy","cognitive_level":"Creation"}"#,
                ),
                ScriptEntry::new(
                    "",
                    r#"{"speech_type":"positive","cognitive_level":"Creation"}"#,
                ),
            ],
            default: None,
        })
        .unwrap();
        let c = code_turn(
            "Let's build a solar bench",
            r(),
            &Coder::Backend {
                backend: &gw,
                prompt: &prompts.eval.turn_coding,
            },
        )
        .unwrap();
        assert_eq!(
            (c.speech_type, c.cognitive_level),
            (SpeechType::Positive, CognitiveLevel::Creation)
        );
        let sent = &gw.call_log()[0].request.system_text;
        assert!(sent.contains("Request AI to provide direct answers"));
        assert!(sent.contains("Let's build a solar bench"));
    }

    #[test]
    fn backend_mode_fails_after_one_reask() {
        let prompts = PromptSet::bundled();
        let gw = Gateway::new(BackendConfig::always("Positive, Creation")).unwrap();
        let err = code_turn(
            "x",
            r(),
            &Coder::Backend {
                backend: &gw,
                prompt: &prompts.eval.turn_coding,
            },
        )
        .unwrap_err();
        assert!(matches!(err, EvalError::CodingFailed(_)));
        assert_eq!(gw.call_count(), 2);
    }

    #[test]
    fn rules_reject_unknown_labels() {
        let bad = BUNDLED_RULES.replacen("\"Negative\", \"Neutral\"", "\"Nasty\", \"Neutral\"", 1);
        assert!(CodingRules::from_json(&bad).is_err());
    }
}
