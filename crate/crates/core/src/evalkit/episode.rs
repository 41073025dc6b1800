//! Persona-driven episodes against the full session service.

use std::sync::Arc;

use chrono::TimeDelta;
use serde::{Deserialize, Serialize};

use crate::clock::{default_epoch, Clock, Instant, ManualClock};
use crate::gateway::{Gateway, LlmBackend};
use crate::kb::{KnowledgeBase, StageId};
use crate::prompts::PromptSet;
use crate::session::{EventKind, Session, SessionEvent, SessionService};

use super::persona::PersonaScript;
use super::EvalError;

/// Clock step used to tick the quiet timer while a persona is silent.
pub const TICK_SECS: i64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub persona: String,
    pub session: Session,
    pub events: Vec<SessionEvent>,
    /// Share of detection rounds whose active states meet the ground truth.
    pub state_accuracy: f64,
    /// Share of non-sentinel decisions whose strategy is mapped to the focus.
    pub mapping_compliance: f64,
    pub stages_reached: StageId,
    pub rounds: usize,
    pub nudges: usize,
}

impl EpisodeResult {
    pub fn summary(&self) -> EpisodeSummary {
        EpisodeSummary {
            persona: self.persona.clone(),
            session_id: self.session.id.clone(),
            rounds: self.rounds as u32,
            stages_reached: self.stages_reached.ordinal(),
            state_accuracy: self.state_accuracy,
            mapping_compliance: self.mapping_compliance,
            nudges: self.nudges as u32,
        }
    }
}

/// One CSV row per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub persona: String,
    pub session_id: String,
    pub rounds: u32,
    pub stages_reached: u8,
    pub state_accuracy: f64,
    pub mapping_compliance: f64,
    pub nudges: u32,
}

/// Backends for one episode: explicit ones, or the persona's own scripts.
pub struct EpisodeBackends {
    pub controller: Arc<dyn LlmBackend>,
    pub mentor: Arc<dyn LlmBackend>,
}

impl EpisodeBackends {
    pub fn from_persona(persona: &PersonaScript) -> Result<Self, EvalError> {
        let script = persona.script.as_ref().ok_or_else(|| {
            EvalError::Persona(format!("{} has no embedded script", persona.name))
        })?;
        let build = |cfg| {
            Gateway::scripted(cfg)
                .map(|g| Arc::new(g) as Arc<dyn LlmBackend>)
                .map_err(|e| EvalError::Persona(format!("{}: {e}", persona.name)))
        };
        Ok(EpisodeBackends {
            controller: build(script.controller.clone())?,
            mentor: build(script.mentor.clone())?,
        })
    }
}

/// Drive one session through every persona turn on a manual clock that
/// starts at the default epoch. Each delay is walked in [`TICK_SECS`] steps
/// with a tick after each, so quiet nudges fire exactly as they would live.
pub fn run_episode(
    persona: &PersonaScript,
    kb: Arc<KnowledgeBase>,
    prompts: Arc<PromptSet>,
    backends: EpisodeBackends,
    seed: u64,
) -> Result<EpisodeResult, EvalError> {
    persona.validate()?;
    let clock = Arc::new(ManualClock::new(default_epoch()));
    let svc = SessionService::new(kb.clone(), prompts, backends.controller, backends.mentor)
        .with_clock(clock.clone())
        .with_seed(seed);
    let session = svc.create_session(&persona.task_topic)?;

    for turn in &persona.turns {
        let target = clock.now() + TimeDelta::milliseconds((turn.delay_s * 1000.0).round() as i64);
        walk_to(&svc, &clock, &session.id, target)?;
        svc.post_student_message(&session.id, &turn.utterance)?;
    }

    let session = svc.get(&session.id)?;
    let events = svc.events(&session.id, 0)?;
    let mut detected = 0usize;
    let mut hits = 0usize;
    for (d, turn) in session.decisions.iter().zip(&persona.turns) {
        if d.active_states.iter().any(|s| s.is_sentinel()) {
            continue;
        }
        detected += 1;
        if d.active_states
            .iter()
            .any(|s| turn.ground_truth_states.contains(s))
        {
            hits += 1;
        }
    }
    let scored: Vec<_> = session
        .decisions
        .iter()
        .filter(|d| !d.focus_state.is_sentinel())
        .collect();
    let compliant = scored.iter().filter(|d| d.mapping_compliant(&kb)).count();

    Ok(EpisodeResult {
        persona: persona.name.clone(),
        state_accuracy: ratio(hits, detected),
        mapping_compliance: ratio(compliant, scored.len()),
        stages_reached: session.stage,
        rounds: session.decisions.len(),
        nudges: events
            .iter()
            .filter(|e| e.kind() == EventKind::Nudge)
            .count(),
        events,
        session,
    })
}

fn walk_to(
    svc: &SessionService,
    clock: &ManualClock,
    id: &str,
    target: Instant,
) -> Result<(), EvalError> {
    let step = TimeDelta::seconds(TICK_SECS);
    while clock.now() + step <= target {
        clock.advance(step);
        svc.tick_at(id, clock.now())?;
    }
    if clock.now() < target {
        clock.set(target);
        svc.tick_at(id, target)?;
    }
    Ok(())
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        1.0
    } else {
        n as f64 / d as f64
    }
}
