//! The controller agent.
//!
//! After every student turn the controller makes three structured backend
//! calls, in order: a stage decision, a state determination and a strategy
//! selection. Each call has a deterministic fallback, so a round always ends
//! in a [`ControllerDecision`] that satisfies the mapping and stage rules no
//! matter what the backend returns.

use chrono::TimeDelta;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::clock::Instant;
use crate::gateway::{
    ChatMessage, CompletionRequest, GatewayError, LlmBackend, Role, CONTROLLER_TEMPERATURE,
};
use crate::kb::{KnowledgeBase, StageId, StateId, StrategyId, KICKOFF_STRATEGY, STATE_COUNT};
use crate::prompts::ControllerPrompts;
use crate::template::TemplateError;

/// Turns of history shown to the controller.
pub const HISTORY_WINDOW: usize = 12;
pub const MAX_ACTIVE_STATES: usize = 3;
pub const CONTROLLER_MAX_TOKENS: u32 = 400;

pub fn quiet_threshold() -> TimeDelta {
    TimeDelta::seconds(60)
}

/// State categories checked first when the backend cannot pick a focus.
/// Remaining categories follow in knowledge-base order.
pub const FALLBACK_PRECEDENCE: [&str; 3] = [
    "Fatigue/Burnout/Negative Emotions",
    "Lack of Motivation and Confidence",
    "Task/Goal Definition Unclear",
];

const REASK_PREAMBLE: &str = "Your previous reply could not be used";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Author {
    Student,
    Mentor,
    SystemNudge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub author: Author,
    pub text: String,
    pub timestamp: Instant,
}

impl DialogueTurn {
    pub fn new(author: Author, text: impl Into<String>, timestamp: Instant) -> Self {
        DialogueTurn {
            author,
            text: text.into(),
            timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionContext {
    pub stage: StageId,
    pub history: Vec<DialogueTurn>,
    pub last_student_input_at: Option<Instant>,
    pub task_topic: String,
}

impl SessionContext {
    pub fn validate(&self) -> Result<(), ControllerError> {
        for pair in self.history.windows(2) {
            if pair[1].timestamp < pair[0].timestamp {
                return Err(ControllerError::InvalidContext(
                    "history timestamps decrease".into(),
                ));
            }
        }
        if self
            .history
            .iter()
            .any(|t| t.author != Author::SystemNudge && t.text.trim().is_empty())
        {
            return Err(ControllerError::InvalidContext(
                "student and mentor turns must have text".into(),
            ));
        }
        Ok(())
    }

    pub fn window(&self) -> &[DialogueTurn] {
        let start = self.history.len().saturating_sub(HISTORY_WINDOW);
        &self.history[start..]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerDecision {
    pub stage_before: StageId,
    pub stage_after: StageId,
    pub advanced: bool,
    pub active_states: Vec<StateId>,
    pub focus_state: StateId,
    pub chosen_strategy: StrategyId,
    pub rationale: String,
    /// Set when the backend judged the final stage complete.
    #[serde(default)]
    pub final_stage_complete: bool,
    /// Set when any step fell back to its deterministic default.
    #[serde(default)]
    pub degraded: bool,
}

impl ControllerDecision {
    /// Check every decision invariant against `kb`.
    pub fn check(&self, kb: &KnowledgeBase) -> Result<(), String> {
        let successor = self.stage_before.successor();
        if self.advanced {
            if Some(self.stage_after) != successor {
                return Err(format!(
                    "advanced from {} to {}",
                    self.stage_before, self.stage_after
                ));
            }
            if self.active_states != [StateId::StageStart] {
                return Err("advanced decision must have active states [STAGE_START]".into());
            }
        } else {
            if self.stage_after != self.stage_before {
                return Err("stage changed without advancing".into());
            }
            if self.active_states.contains(&StateId::StageStart) {
                return Err("STAGE_START without advancing".into());
            }
        }
        if self.final_stage_complete && !self.stage_before.is_last() {
            return Err("final-stage completion flagged before the last stage".into());
        }
        if self.active_states.is_empty() {
            return Err("no active states".into());
        }
        if !self.focus_state.is_sentinel() {
            if !self.active_states.contains(&self.focus_state) {
                return Err(format!(
                    "focus {} not among active states",
                    self.focus_state
                ));
            }
            let mapped = kb
                .strategies_for_state(self.focus_state)
                .map_err(|e| e.to_string())?;
            if !mapped.contains(&self.chosen_strategy) {
                return Err(format!(
                    "strategy {} not mapped for state {}",
                    self.chosen_strategy, self.focus_state
                ));
            }
        }
        Ok(())
    }

    /// Whether the chosen strategy complies with the state → strategy mapping.
    pub fn mapping_compliant(&self, kb: &KnowledgeBase) -> bool {
        match self.focus_state {
            StateId::Listed(_) => kb
                .strategies_for_state(self.focus_state)
                .is_ok_and(|m| m.contains(&self.chosen_strategy)),
            StateId::StageStart => self.chosen_strategy == KICKOFF_STRATEGY,
            StateId::Quiet => kb
                .strategies_for_state(StateId::SILENT)
                .is_ok_and(|m| m.contains(&self.chosen_strategy)),
        }
    }
}

/// The structured body every controller call is asked to return. Absent
/// fields default; each call checks the fields it needs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerPayload {
    #[serde(default)]
    pub advance: Option<bool>,
    #[serde(default)]
    pub met_criteria: Vec<String>,
    #[serde(default)]
    pub states: Vec<i64>,
    #[serde(default)]
    pub focus: Option<i64>,
    #[serde(default)]
    pub strategy: Option<i64>,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed controller payload: {0}")]
pub struct PayloadError(pub String);

/// Strictly parse a controller reply. A surrounding code fence or prose is
/// tolerated; the first `{` through the last `}` must be a valid object.
pub fn parse_controller_payload(text: &str) -> Result<ControllerPayload, PayloadError> {
    let start = text
        .find('{')
        .ok_or_else(|| PayloadError("no JSON object in reply".into()))?;
    let end = text
        .rfind('}')
        .filter(|&e| e > start)
        .ok_or_else(|| PayloadError("unterminated JSON object".into()))?;
    serde_json::from_str(&text[start..=end]).map_err(|e| PayloadError(e.to_string()))
}

/// True iff at least `threshold` has elapsed since the last student input.
pub fn detect_quiet(last_student_input_at: Instant, now: Instant, threshold: TimeDelta) -> bool {
    now - last_student_input_at >= threshold
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ControllerError {
    #[error(transparent)]
    Backend(#[from] GatewayError),
    #[error("malformed controller payload after re-ask: {0}")]
    PayloadMalformed(String),
    #[error("invalid session context: {0}")]
    InvalidContext(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub advanced: bool,
    pub stage_after: StageId,
    pub final_stage_complete: bool,
    pub rationale: String,
    /// The error that forced the no-advance fallback, if any.
    pub fallback: Option<ControllerError>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatesOutcome {
    pub states: Vec<StateId>,
    pub rationale: String,
    pub fallback: Option<ControllerError>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyOutcome {
    pub focus: StateId,
    pub strategy: StrategyId,
    pub rationale: String,
    /// The backend named a focus or strategy outside the mapping.
    pub clamped: bool,
    pub fallback: Option<ControllerError>,
}

pub struct Controller<'a> {
    kb: &'a KnowledgeBase,
    prompts: &'a ControllerPrompts,
    backend: &'a dyn LlmBackend,
}

impl<'a> Controller<'a> {
    pub fn new(
        kb: &'a KnowledgeBase,
        prompts: &'a ControllerPrompts,
        backend: &'a dyn LlmBackend,
    ) -> Self {
        Controller {
            kb,
            prompts,
            backend,
        }
    }

    /// Stage decision → state determination → strategy selection.
    pub fn run_round(&self, ctx: &SessionContext) -> Result<ControllerDecision, ControllerError> {
        ctx.validate()?;
        let stage = self.decide_stage(ctx)?;
        let states = self.determine_states(ctx, stage.advanced)?;
        let strategy = self.select_strategy(ctx, &states.states)?;

        let mut rationale = Vec::new();
        for (label, text, fallback) in [
            ("stage", &stage.rationale, &stage.fallback),
            ("states", &states.rationale, &states.fallback),
            ("strategy", &strategy.rationale, &strategy.fallback),
        ] {
            match fallback {
                Some(e) => rationale.push(format!("{label}: fallback ({e})")),
                None if !text.is_empty() => rationale.push(format!("{label}: {text}")),
                None => {}
            }
        }
        let decision = ControllerDecision {
            stage_before: ctx.stage,
            stage_after: stage.stage_after,
            advanced: stage.advanced,
            active_states: states.states,
            focus_state: strategy.focus,
            chosen_strategy: strategy.strategy,
            rationale: rationale.join(" | "),
            final_stage_complete: stage.final_stage_complete,
            degraded: stage.fallback.is_some()
                || states.fallback.is_some()
                || strategy.fallback.is_some()
                || strategy.clamped,
        };
        debug_assert_eq!(decision.check(self.kb), Ok(()));
        Ok(decision)
    }

    /// Advance only when the backend asserts every completion criterion is
    /// met. Any failure keeps the current stage. The last stage never
    /// advances; a positive answer there sets `final_stage_complete`.
    pub fn decide_stage(&self, ctx: &SessionContext) -> Result<StageOutcome, ControllerError> {
        if !ctx.history.iter().any(|t| t.author == Author::Student) {
            return Err(ControllerError::InvalidContext(
                "stage decision needs at least one student turn".into(),
            ));
        }
        let info = self.kb.stage(ctx.stage);
        let criteria = numbered(info.completion_criteria.iter().map(String::as_str));
        let stage_number = ctx.stage.to_string();
        let history = render_history(ctx.window());
        let system = self.prompts.stage_decision.render(&[
            ("task_topic", &ctx.task_topic),
            ("stage_number", &stage_number),
            ("stage_name", &info.name),
            ("stage_definition", &info.definition),
            ("criteria", &criteria),
            ("history", &history),
        ])?;
        let schema =
            json!({"advance": "boolean", "met_criteria": ["string"], "rationale": "string"});
        let n_criteria = info.completion_criteria.len();
        let answer = self.ask(system, schema, |p| {
            let advance = p.advance.ok_or("missing boolean field \"advance\"")?;
            // A partial list of met criteria contradicts advance=true.
            let all_met = p.met_criteria.is_empty() || p.met_criteria.len() >= n_criteria;
            Ok((advance && all_met, p.rationale.clone()))
        });
        Ok(match answer {
            Ok((asserted, rationale)) => {
                let successor = ctx.stage.successor().filter(|_| asserted);
                StageOutcome {
                    advanced: successor.is_some(),
                    stage_after: successor.unwrap_or(ctx.stage),
                    final_stage_complete: asserted && ctx.stage.is_last(),
                    rationale,
                    fallback: None,
                }
            }
            Err(e) => {
                tracing::warn!(error = %e, "stage decision failed; staying in stage {}", ctx.stage);
                StageOutcome {
                    advanced: false,
                    stage_after: ctx.stage,
                    final_stage_complete: false,
                    rationale: String::new(),
                    fallback: Some(e),
                }
            }
        })
    }

    /// `[STAGE_START]` after an advance; otherwise 1–3 listed states from the
    /// backend, de-duplicated in the order given. Falls back to
    /// Normal Progress when nothing usable comes back.
    pub fn determine_states(
        &self,
        ctx: &SessionContext,
        advanced: bool,
    ) -> Result<StatesOutcome, ControllerError> {
        if advanced {
            return Ok(StatesOutcome {
                states: vec![StateId::StageStart],
                rationale: "stage start".into(),
                fallback: None,
            });
        }
        let catalog = self
            .kb
            .states()
            .iter()
            .map(|s| format!("{}. {} / {}: {}", s.id, s.category, s.name, s.definition))
            .collect::<Vec<_>>()
            .join("\n");
        let info = self.kb.stage(ctx.stage);
        let stage_number = ctx.stage.to_string();
        let history = render_history(ctx.window());
        let system = self.prompts.state_determine.render(&[
            ("task_topic", &ctx.task_topic),
            ("stage_number", &stage_number),
            ("stage_name", &info.name),
            ("state_catalog", &catalog),
            ("history", &history),
        ])?;
        let schema = json!({"states": ["integer 1..23"], "rationale": "string"});
        let answer = self.ask(system, schema, |p| {
            let states = sanitize_states(&p.states);
            if states.is_empty() {
                Err("\"states\" must list between 1 and 3 ids from 1 to 23".to_string())
            } else {
                Ok((states, p.rationale.clone()))
            }
        });
        Ok(match answer {
            Ok((states, rationale)) => StatesOutcome {
                states,
                rationale,
                fallback: None,
            },
            Err(e) => {
                tracing::warn!(error = %e, "state determination failed; assuming normal progress");
                StatesOutcome {
                    states: vec![StateId::NORMAL_PROGRESS],
                    rationale: String::new(),
                    fallback: Some(e),
                }
            }
        })
    }

    /// Pick the focus state and a strategy mapped to it.
    pub fn select_strategy(
        &self,
        ctx: &SessionContext,
        active_states: &[StateId],
    ) -> Result<StrategyOutcome, ControllerError> {
        if active_states.is_empty() {
            return Err(ControllerError::InvalidContext("no active states".into()));
        }
        if active_states.contains(&StateId::StageStart) {
            return Ok(StrategyOutcome {
                focus: StateId::StageStart,
                strategy: KICKOFF_STRATEGY,
                rationale: "stage kickoff".into(),
                clamped: false,
                fallback: None,
            });
        }
        // (focus as reported, state whose mapping applies)
        let candidates: Vec<(StateId, StateId)> = active_states
            .iter()
            .map(|&s| {
                if s == StateId::Quiet {
                    (s, StateId::SILENT)
                } else {
                    (s, s)
                }
            })
            .collect();
        for (_, mapped) in &candidates {
            self.kb
                .strategies_for_state(*mapped)
                .map_err(|e| ControllerError::InvalidContext(e.to_string()))?;
        }

        let options = candidates
            .iter()
            .map(|&(focus, mapped)| {
                let info = self.kb.state(mapped).expect("checked above");
                let label = if focus == StateId::Quiet {
                    format!("{} (no input for a while)", info.name)
                } else {
                    info.name.clone()
                };
                let strategies = info
                    .strategy_ids
                    .iter()
                    .map(|id| {
                        let s = self.kb.strategy(*id);
                        format!("  - strategy {}: {} ({})", id, s.name, s.definition)
                    })
                    .collect::<Vec<_>>()
                    .join("\n");
                format!("State {}: {}\n{}", mapped, label, strategies)
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        let info = self.kb.stage(ctx.stage);
        let stage_number = ctx.stage.to_string();
        let history = render_history(ctx.window());
        let system = self.prompts.strategy_select.render(&[
            ("task_topic", &ctx.task_topic),
            ("stage_number", &stage_number),
            ("stage_name", &info.name),
            ("state_options", &options),
            ("history", &history),
        ])?;
        let schema = json!({"focus": "integer state id", "strategy": "integer strategy id", "rationale": "string"});
        let answer = self.ask(system, schema, |p| match (p.focus, p.strategy) {
            (Some(f), Some(s)) => Ok((f, s, p.rationale.clone())),
            _ => Err("both \"focus\" and \"strategy\" are required integers".to_string()),
        });

        match answer {
            Ok((focus_raw, strategy_raw, rationale)) => {
                let chosen = candidates
                    .iter()
                    .find(|(_, mapped)| mapped.ordinal().map(i64::from) == Some(focus_raw))
                    .copied();
                let (focus, mapped, mut clamped) = match chosen {
                    Some((focus, mapped)) => (focus, mapped, false),
                    None => {
                        let (focus, mapped) = self.precedence_focus(&candidates);
                        (focus, mapped, true)
                    }
                };
                let mapping = self.kb.strategies_for_state(mapped).expect("checked above");
                let strategy = match mapping
                    .iter()
                    .find(|id| i64::from(id.ordinal()) == strategy_raw)
                {
                    Some(id) => *id,
                    None => {
                        clamped = true;
                        mapping[0]
                    }
                };
                if clamped {
                    tracing::debug!(focus_raw, strategy_raw, "clamped strategy selection");
                }
                Ok(StrategyOutcome {
                    focus,
                    strategy,
                    rationale,
                    clamped,
                    fallback: None,
                })
            }
            Err(e) => {
                tracing::warn!(error = %e, "strategy selection failed; using precedence fallback");
                let (focus, mapped) = self.precedence_focus(&candidates);
                let strategy = self.kb.strategies_for_state(mapped).expect("checked above")[0];
                Ok(StrategyOutcome {
                    focus,
                    strategy,
                    rationale: String::new(),
                    clamped: false,
                    fallback: Some(e),
                })
            }
        }
    }

    /// The candidate whose category ranks highest; ties go to the earlier one.
    fn precedence_focus(&self, candidates: &[(StateId, StateId)]) -> (StateId, StateId) {
        let order = self.kb.state_categories();
        let rank = |mapped: StateId| -> usize {
            let category = self
                .kb
                .state(mapped)
                .map(|s| s.category.as_str())
                .unwrap_or("");
            FALLBACK_PRECEDENCE
                .iter()
                .position(|c| *c == category)
                .unwrap_or_else(|| {
                    FALLBACK_PRECEDENCE.len()
                        + order
                            .iter()
                            .position(|c| *c == category)
                            .unwrap_or(order.len())
                })
        };
        *candidates
            .iter()
            .enumerate()
            .min_by_key(|(i, (_, mapped))| (rank(*mapped), *i))
            .map(|(_, c)| c)
            .expect("candidates is non-empty")
    }

    /// One backend call, plus one re-ask with a correction preamble if the
    /// reply does not parse or validate.
    fn ask<T>(
        &self,
        system: String,
        schema: serde_json::Value,
        accept: impl Fn(&ControllerPayload) -> Result<T, String>,
    ) -> Result<T, ControllerError> {
        let check = |text: &str| -> Result<T, String> {
            let payload = parse_controller_payload(text).map_err(|e| e.0)?;
            accept(&payload)
        };
        let req = CompletionRequest::new(system, CONTROLLER_TEMPERATURE, CONTROLLER_MAX_TOKENS)
            .with_schema(schema);
        let first = self.backend.complete(&req)?;
        let reason = match check(&first.text) {
            Ok(v) => return Ok(v),
            Err(reason) => reason,
        };
        let retry = req.with_messages(vec![
            ChatMessage::new(Role::Mentor, first.text),
            ChatMessage::new(
                Role::System,
                format!(
                    "{REASK_PREAMBLE}: {reason}. Reply again with only the JSON object in the requested format."
                ),
            ),
        ]);
        let second = self.backend.complete(&retry)?;
        check(&second.text).map_err(ControllerError::PayloadMalformed)
    }
}

/// Keep ids in 1..=23, drop duplicates, cap at three.
pub fn sanitize_states(raw: &[i64]) -> Vec<StateId> {
    let mut out = Vec::new();
    for &n in raw {
        let Some(id) = u8::try_from(n)
            .ok()
            .filter(|n| *n <= STATE_COUNT)
            .and_then(StateId::listed)
        else {
            continue;
        };
        if !out.contains(&id) {
            out.push(id);
        }
        if out.len() == MAX_ACTIVE_STATES {
            break;
        }
    }
    out
}

pub fn render_history(turns: &[DialogueTurn]) -> String {
    if turns.is_empty() {
        return "(no messages yet)".to_string();
    }
    turns
        .iter()
        .map(|t| {
            let who = match t.author {
                Author::Student => "Student",
                Author::Mentor => "Mentor",
                Author::SystemNudge => "Mentor (check-in)",
            };
            format!("{who}: {}", t.text)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn numbered<'s>(items: impl Iterator<Item = &'s str>) -> String {
    items
        .enumerate()
        .map(|(i, c)| format!("{}. {}", i + 1, c))
        .collect::<Vec<_>>()
        .join("\n")
}
