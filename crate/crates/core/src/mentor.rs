//! The mentor agent: prompt assembly and reply generation.

use serde::{Deserialize, Serialize};

use crate::clock::Instant;
use crate::controller::{Author, ControllerDecision, DialogueTurn, HISTORY_WINDOW};
use crate::gateway::{ChatMessage, CompletionRequest, LlmBackend, Role, MENTOR_TEMPERATURE};
use crate::kb::{ExemplarDialogue, KnowledgeBase, StageId, StateId, StrategyId};
use crate::prompts::MentorPrompts;
use crate::template::TemplateError;

pub const EXEMPLAR_LIMIT: usize = 3;
pub const MAX_REPLY_CHARS: usize = 1200;
pub const MENTOR_MAX_TOKENS: u32 = 600;
pub const NUDGE_MAX_TOKENS: u32 = 200;

const SENTENCE_END: [char; 7] = ['.', '!', '?', '。', '！', '？', '…'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentorMessage {
    pub text: String,
    pub stage: StageId,
    pub strategy: StrategyId,
    pub generated_at: Instant,
    /// The text is a canned fallback rather than a backend reply.
    #[serde(default)]
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub character_prompt: String,
    /// The rendered per-stage supplement for `stage_id`.
    pub stage_prompt: String,
    pub strategy_block: String,
    pub strategy_id: StrategyId,
    pub stage_id: StageId,
    pub exemplars: Vec<ExemplarDialogue>,
    pub history_window: Vec<DialogueTurn>,
    pub decision_rationale: String,
    pub task_topic: String,
}

impl PromptBundle {
    pub fn validate(&self) -> Result<(), String> {
        if self.character_prompt.trim().is_empty() {
            return Err("character prompt is empty".into());
        }
        if self.stage_prompt.trim().is_empty() {
            return Err("stage prompt is empty".into());
        }
        if let Some(e) = self
            .exemplars
            .iter()
            .find(|e| e.strategy_id != self.strategy_id)
        {
            return Err(format!(
                "exemplar for strategy {} in a bundle for strategy {}",
                e.strategy_id, self.strategy_id
            ));
        }
        Ok(())
    }
}

pub struct Mentor<'a> {
    kb: &'a KnowledgeBase,
    prompts: &'a MentorPrompts,
}

impl<'a> Mentor<'a> {
    pub fn new(kb: &'a KnowledgeBase, prompts: &'a MentorPrompts) -> Self {
        Mentor { kb, prompts }
    }

    pub fn assemble_prompt(
        &self,
        decision: &ControllerDecision,
        history: &[DialogueTurn],
        task_topic: &str,
    ) -> Result<PromptBundle, TemplateError> {
        let stage = decision.stage_after;
        let strategy = self.kb.strategy(decision.chosen_strategy);

        // Same-stage exemplars first, each group in knowledge-base order.
        let (mut exemplars, other): (Vec<_>, Vec<_>) = strategy
            .exemplars
            .iter()
            .cloned()
            .partition(|e| e.stage_id == stage);
        exemplars.extend(other);
        exemplars.truncate(EXEMPLAR_LIMIT);

        let start = history.len().saturating_sub(HISTORY_WINDOW);
        Ok(PromptBundle {
            character_prompt: self.kb.character_prompt().to_string(),
            stage_prompt: self.stage_block(stage)?,
            strategy_block: format!("{}: {}", strategy.name, strategy.definition),
            strategy_id: strategy.id,
            stage_id: stage,
            exemplars,
            history_window: history[start..].to_vec(),
            decision_rationale: decision.rationale.clone(),
            task_topic: task_topic.to_string(),
        })
    }

    /// One backend call. Any failure or unusable output yields the
    /// strategy's canned fallback line with `degraded` set.
    pub fn generate_reply(
        &self,
        bundle: &PromptBundle,
        backend: &dyn LlmBackend,
        now: Instant,
    ) -> Result<MentorMessage, TemplateError> {
        let strategy = self.kb.strategy(bundle.strategy_id);
        let exemplars = render_exemplars(&bundle.exemplars);
        let rationale = if bundle.decision_rationale.is_empty() {
            "(none)"
        } else {
            &bundle.decision_rationale
        };
        let system = self.prompts.character.render(&[
            ("character_prompt", &bundle.character_prompt),
            ("task_topic", &bundle.task_topic),
            ("stage_block", &bundle.stage_prompt),
            ("strategy_name", &strategy.name),
            ("strategy_definition", &strategy.definition),
            ("exemplars", &exemplars),
            ("rationale", rationale),
        ])?;
        let req = CompletionRequest::new(system, MENTOR_TEMPERATURE, MENTOR_MAX_TOKENS)
            .with_messages(history_messages(&bundle.history_window));

        let text = match backend.complete(&req) {
            Ok(resp) => clean_reply(&resp.text),
            Err(e) => {
                tracing::warn!(error = %e, "mentor generation failed; using fallback line");
                None
            }
        };
        Ok(MentorMessage {
            degraded: text.is_none(),
            text: text.unwrap_or_else(|| strategy.fallback_phrasing().to_string()),
            stage: bundle.stage_id,
            strategy: bundle.strategy_id,
            generated_at: now,
        })
    }

    /// Decision → bundle → reply.
    pub fn respond(
        &self,
        decision: &ControllerDecision,
        history: &[DialogueTurn],
        task_topic: &str,
        backend: &dyn LlmBackend,
        now: Instant,
    ) -> Result<MentorMessage, TemplateError> {
        let bundle = self.assemble_prompt(decision, history, task_topic)?;
        self.generate_reply(&bundle, backend, now)
    }

    /// A short re-engagement message for a quiet student. Uses the first
    /// strategy mapped to the silent state.
    pub fn quiet_nudge(
        &self,
        stage: StageId,
        history: &[DialogueTurn],
        task_topic: &str,
        backend: &dyn LlmBackend,
        now: Instant,
    ) -> Result<MentorMessage, TemplateError> {
        let strategy = self
            .kb
            .strategies_for_state(StateId::SILENT)
            .ok()
            .and_then(|m| m.first().copied())
            .unwrap_or(crate::kb::KICKOFF_STRATEGY);
        let stage_block = self.stage_block(stage)?;
        let system = self.prompts.nudge.render(&[
            ("character_prompt", self.kb.character_prompt()),
            ("task_topic", task_topic),
            ("stage_block", &stage_block),
        ])?;
        let start = history.len().saturating_sub(HISTORY_WINDOW);
        let req = CompletionRequest::new(system, MENTOR_TEMPERATURE, NUDGE_MAX_TOKENS)
            .with_messages(history_messages(&history[start..]));
        let text = match backend.complete(&req) {
            Ok(resp) => clean_reply(&resp.text),
            Err(e) => {
                tracing::warn!(error = %e, "nudge generation failed; using canned line");
                None
            }
        };
        Ok(MentorMessage {
            degraded: text.is_none(),
            text: text.unwrap_or_else(|| self.kb.stage(stage).nudge_line.clone()),
            stage,
            strategy,
            generated_at: now,
        })
    }

    fn stage_block(&self, stage: StageId) -> Result<String, TemplateError> {
        let info = self.kb.stage(stage);
        let criteria = info
            .completion_criteria
            .iter()
            .map(|c| format!("- {c}"))
            .collect::<Vec<_>>()
            .join("\n");
        let number = stage.to_string();
        self.prompts.stages[usize::from(stage.ordinal() - 1)].render(&[
            ("stage_number", &number),
            ("stage_name", &info.name),
            ("stage_definition", &info.definition),
            ("stage_prompt", &info.stage_prompt),
            ("criteria", &criteria),
        ])
    }
}

fn render_exemplars(exemplars: &[ExemplarDialogue]) -> String {
    if exemplars.is_empty() {
        return String::new();
    }
    let mut out = String::from("Example exchanges using this strategy:\n");
    for e in exemplars {
        out.push_str(&format!(
            "Student: {}\nMentor: {}\n",
            e.student_utterance, e.mentor_utterance
        ));
    }
    out
}

fn history_messages(turns: &[DialogueTurn]) -> Vec<ChatMessage> {
    turns
        .iter()
        .map(|t| {
            let role = match t.author {
                Author::Student => Role::Student,
                Author::Mentor | Author::SystemNudge => Role::Mentor,
            };
            ChatMessage::new(role, t.text.clone())
        })
        .collect()
}

/// Trim and cap a backend reply; `None` if it is unusable.
pub fn clean_reply(raw: &str) -> Option<String> {
    let text = raw.trim();
    let unusable = text.is_empty()
        || text.contains("{{")
        || text.contains("```")
        || text.starts_with('{')
        || text.starts_with('[');
    if unusable {
        return None;
    }
    Some(cap_length(text, MAX_REPLY_CHARS))
}

/// Cut `text` to at most `limit` characters, preferring the last sentence
/// end; otherwise the last whitespace, marked with an ellipsis.
pub fn cap_length(text: &str, limit: usize) -> String {
    if text.chars().count() <= limit {
        return text.to_string();
    }
    let head: String = text.chars().take(limit).collect();
    if let Some((i, c)) = head.char_indices().rfind(|(_, c)| SENTENCE_END.contains(c)) {
        let cut = head[..i + c.len_utf8()].trim_end();
        if !cut.is_empty() {
            return cut.to_string();
        }
    }
    let room: String = text.chars().take(limit - 1).collect();
    let cut = match room.rfind(char::is_whitespace) {
        Some(i) if i > 0 => room[..i].trim_end(),
        _ => room.as_str(),
    };
    format!("{cut}…")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::default_epoch;
    use crate::gateway::{BackendConfig, Gateway};
    use crate::prompts::PromptSet;

    fn decision(stage: u8, state: StateId, strategy: u8) -> ControllerDecision {
        let s = StageId::new(stage).unwrap();
        ControllerDecision {
            stage_before: s,
            stage_after: s,
            advanced: false,
            active_states: vec![state],
            focus_state: state,
            chosen_strategy: StrategyId::new(strategy).unwrap(),
            rationale: "test".into(),
            final_stage_complete: false,
            degraded: false,
        }
    }

    fn turns(n: usize) -> Vec<DialogueTurn> {
        (0..n)
            .map(|i| {
                let author = if i % 2 == 0 {
                    Author::Mentor
                } else {
                    Author::Student
                };
                DialogueTurn::new(author, format!("turn {i}"), default_epoch())
            })
            .collect()
    }

    #[test]
    fn probing_guidance_bundle_at_stage_three() {
        let kb = KnowledgeBase::fixture();
        let prompts = PromptSet::bundled();
        let m = Mentor::new(&kb, &prompts.mentor);
        let b = m
            .assemble_prompt(
                &decision(3, StateId::Listed(2), 8),
                &turns(4),
                "Low-Carbon Campus",
            )
            .unwrap();
        assert!(b.strategy_block.starts_with("Probing Guidance: "));
        assert!(b
            .stage_prompt
            .contains(&kb.stage(StageId::new(3).unwrap()).stage_prompt));
        assert_eq!(b.exemplars.len(), 3);
        assert!(b.exemplars[..2].iter().all(|e| e.stage_id.ordinal() == 3));
        assert!(b.exemplars.iter().all(|e| e.strategy_id.ordinal() == 8));
        assert_eq!(b.validate(), Ok(()));
    }

    #[test]
    fn history_window_and_empty_exemplars() {
        let kb = KnowledgeBase::fixture();
        let prompts = PromptSet::bundled();
        let m = Mentor::new(&kb, &prompts.mentor);
        let h = turns(30);
        let b = m
            .assemble_prompt(&decision(2, StateId::Listed(13), 14), &h, "t")
            .unwrap();
        assert_eq!(b.history_window.len(), 12);
        assert_eq!(b.history_window, h[18..]);
        assert!(b.exemplars.is_empty());
    }

    #[test]
    fn passthrough_reply() {
        let kb = KnowledgeBase::fixture();
        let prompts = PromptSet::bundled();
        let m = Mentor::new(&kb, &prompts.mentor);
        let gw = Gateway::new(BackendConfig::always(
            "  Great start! What evidence supports that?\n",
        ))
        .unwrap();
        let d = decision(2, StateId::Listed(13), 15);
        let msg = m.respond(&d, &turns(2), "t", &gw, default_epoch()).unwrap();
        assert_eq!(msg.text, "Great start! What evidence supports that?");
        assert_eq!(
            (msg.stage, msg.strategy),
            (d.stage_after, d.chosen_strategy)
        );
        assert!(!msg.degraded);
        let req = &gw.call_log()[0].request;
        assert_eq!(req.temperature, MENTOR_TEMPERATURE);
        assert!(req.system_text.contains(kb.character_prompt()));
        assert!(!req.system_text.contains("{{"));
        assert_eq!(req.messages.len(), 2);
    }

    #[test]
    fn backend_down_uses_strategy_fallback() {
        let kb = KnowledgeBase::fixture();
        let prompts = PromptSet::bundled();
        let m = Mentor::new(&kb, &prompts.mentor);
        let gw = Gateway::new(BackendConfig::unavailable()).unwrap();
        let d = decision(3, StateId::Listed(23), 18);
        let msg = m.respond(&d, &turns(2), "t", &gw, default_epoch()).unwrap();
        assert!(msg.degraded);
        assert_eq!(
            msg.text,
            kb.strategy(StrategyId::new(18).unwrap()).fallback_line
        );
    }

    #[test]
    fn structured_output_is_rejected() {
        for bad in [
            "",
            "   ",
            "{\"reply\":\"hi\"}",
            "[1]",
            "Hello {{name}}",
            "```\nhi\n```",
        ] {
            assert_eq!(clean_reply(bad), None, "{bad:?}");
        }
    }

    #[test]
    fn long_reply_is_cut_at_sentence_boundary() {
        let sentence = "This is a sentence that keeps going. ";
        let long = sentence.repeat(140);
        assert!(long.len() > 5000);
        let out = clean_reply(&long).unwrap();
        assert!(out.chars().count() <= MAX_REPLY_CHARS);
        assert!(out.ends_with('.'));
    }

    #[test]
    fn cap_without_sentence_end_uses_ellipsis() {
        let long = "word ".repeat(400);
        let out = cap_length(&long, 100);
        assert!(out.chars().count() <= 100);
        assert!(out.ends_with('…'));
        let unbroken = "x".repeat(300);
        assert_eq!(cap_length(&unbroken, 10).chars().count(), 10);
    }

    #[test]
    fn cap_handles_multibyte_text() {
        let long = "你好。".repeat(600);
        let out = cap_length(&long, MAX_REPLY_CHARS);
        assert!(out.chars().count() <= MAX_REPLY_CHARS);
        assert!(out.ends_with('。'));
    }

    #[test]
    fn nudge_carries_stage_prompt() {
        let kb = KnowledgeBase::fixture();
        let prompts = PromptSet::bundled();
        let m = Mentor::new(&kb, &prompts.mentor);
        let gw = Gateway::new(BackendConfig::always("Any new ideas popping up?")).unwrap();
        let stage4 = StageId::new(4).unwrap();
        let msg = m
            .quiet_nudge(stage4, &turns(3), "t", &gw, default_epoch())
            .unwrap();
        assert_eq!(msg.text, "Any new ideas popping up?");
        assert_eq!(msg.strategy, StrategyId::new(1).unwrap());
        let sent = &gw.call_log()[0].request.system_text;
        assert!(sent.contains(&kb.stage(stage4).stage_prompt));
        assert!(sent.contains("brainstorm"));
    }

    #[test]
    fn offline_stage_six_nudge_mentions_report() {
        let kb = KnowledgeBase::fixture();
        let prompts = PromptSet::bundled();
        let m = Mentor::new(&kb, &prompts.mentor);
        let gw = Gateway::new(BackendConfig::unavailable()).unwrap();
        let msg = m
            .quiet_nudge(StageId::LAST, &[], "t", &gw, default_epoch())
            .unwrap();
        assert!(msg.degraded);
        assert!(msg.text.contains("implementation report"));
    }
}
