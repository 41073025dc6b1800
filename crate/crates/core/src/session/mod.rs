//! Session lifecycle, the inactivity clock and event-sourced persistence.
//!
//! Every change to a [`Session`] is an event. The live service builds each
//! event, applies it with [`Session::apply`] and appends it to the log;
//! [`replay`] folds the same function over a stored log, so a replayed
//! session is equal to the live one by construction.

pub mod events;
pub mod store;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use chrono::TimeDelta;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::clock::{Clock, Instant, SystemClock};
use crate::controller::{
    detect_quiet, quiet_threshold, Author, Controller, ControllerDecision, DialogueTurn,
    SessionContext,
};
use crate::gateway::LlmBackend;
use crate::kb::{KnowledgeBase, StageId, StateId, KICKOFF_STRATEGY};
use crate::mentor::{Mentor, MentorMessage};
use crate::prompts::PromptSet;

pub use events::{CreatedPayload, EventBody, EventKind, SessionEvent, StudentPayload};
pub use store::{EventSink, FileStore, NullSink};

const BROADCAST_CAPACITY: usize = 256;

pub fn abandon_after() -> TimeDelta {
    TimeDelta::hours(24)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Completed,
    Abandoned,
}

impl SessionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::Active => "active",
            SessionStatus::Completed => "completed",
            SessionStatus::Abandoned => "abandoned",
        }
    }
}

/// The four report sections as entered by the student.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportDraft {
    #[serde(default)]
    pub problem_background: String,
    #[serde(default)]
    pub solution_concept: String,
    #[serde(default)]
    pub implementation_plan: String,
    #[serde(default)]
    pub anticipated_challenges: String,
}

impl ReportDraft {
    pub const FIELDS: [&'static str; 4] = [
        "problem_background",
        "solution_concept",
        "implementation_plan",
        "anticipated_challenges",
    ];

    fn sections(&self) -> [&str; 4] {
        [
            &self.problem_background,
            &self.solution_concept,
            &self.implementation_plan,
            &self.anticipated_challenges,
        ]
    }

    /// Names of the sections left blank, in report order.
    pub fn empty_fields(&self) -> Vec<&'static str> {
        Self::FIELDS
            .iter()
            .zip(self.sections())
            .filter(|(_, text)| text.trim().is_empty())
            .map(|(name, _)| *name)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearningReport {
    pub problem_background: String,
    pub solution_concept: String,
    pub implementation_plan: String,
    pub anticipated_challenges: String,
    pub submitted_at: Instant,
}

impl LearningReport {
    pub fn from_draft(draft: ReportDraft, submitted_at: Instant) -> Self {
        LearningReport {
            problem_background: draft.problem_background,
            solution_concept: draft.solution_concept,
            implementation_plan: draft.implementation_plan,
            anticipated_challenges: draft.anticipated_challenges,
            submitted_at,
        }
    }

    pub fn draft(&self) -> ReportDraft {
        ReportDraft {
            problem_background: self.problem_background.clone(),
            solution_concept: self.solution_concept.clone(),
            implementation_plan: self.implementation_plan.clone(),
            anticipated_challenges: self.anticipated_challenges.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub task_topic: String,
    pub created_at: Instant,
    pub updated_at: Instant,
    pub stage: StageId,
    pub status: SessionStatus,
    pub transcript: Vec<DialogueTurn>,
    pub decisions: Vec<ControllerDecision>,
    pub report: Option<LearningReport>,
    /// The controller has judged the last stage complete.
    pub final_stage_complete: bool,
}

impl Session {
    fn created(payload: &CreatedPayload, at: Instant) -> Self {
        Session {
            id: payload.session_id.clone(),
            task_topic: payload.task_topic.clone(),
            created_at: at,
            updated_at: at,
            stage: StageId::FIRST,
            status: SessionStatus::Active,
            transcript: Vec::new(),
            decisions: Vec::new(),
            report: None,
            final_stage_complete: false,
        }
    }

    pub fn student_turns(&self) -> usize {
        self.transcript
            .iter()
            .filter(|t| t.author == Author::Student)
            .count()
    }

    pub fn last_student_input_at(&self) -> Option<Instant> {
        self.transcript
            .iter()
            .rev()
            .find(|t| t.author == Author::Student)
            .map(|t| t.timestamp)
    }

    /// Whether a nudge has been sent since the latest student turn (or since
    /// creation, if the student has not written yet).
    pub fn nudged_since_student(&self) -> bool {
        self.transcript
            .iter()
            .rev()
            .take_while(|t| t.author != Author::Student)
            .any(|t| t.author == Author::SystemNudge)
    }

    /// Apply one event after `created`. Checks every invariant first and
    /// leaves the session untouched on error.
    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), String> {
        if event.at < self.updated_at {
            return Err("event time goes backwards".into());
        }
        let active = self.status == SessionStatus::Active;
        match &event.body {
            EventBody::Created(_) => return Err("duplicate created event".into()),
            EventBody::StudentMsg(p) => {
                if !active {
                    return Err(format!(
                        "student message in {} session",
                        self.status.as_str()
                    ));
                }
                if p.text.trim().is_empty() {
                    return Err("empty student message".into());
                }
                self.transcript
                    .push(DialogueTurn::new(Author::Student, p.text.clone(), event.at));
            }
            EventBody::Decision(d) => {
                if !active {
                    return Err("decision in inactive session".into());
                }
                if self.decisions.len() >= self.student_turns() {
                    return Err("decision without a student turn".into());
                }
                if d.stage_before != self.stage {
                    return Err(format!(
                        "decision starts at stage {} but session is at {}",
                        d.stage_before, self.stage
                    ));
                }
                let expected = if d.advanced {
                    self.stage.successor()
                } else {
                    Some(self.stage)
                };
                if Some(d.stage_after) != expected {
                    return Err(format!(
                        "illegal stage transition {} -> {}",
                        d.stage_before, d.stage_after
                    ));
                }
                if d.final_stage_complete && !self.stage.is_last() {
                    return Err("final-stage flag before the last stage".into());
                }
                self.stage = d.stage_after;
                self.final_stage_complete |= d.final_stage_complete;
                self.decisions.push(d.clone());
            }
            EventBody::MentorMsg(m) | EventBody::Nudge(m) => {
                if !active {
                    return Err("mentor message in inactive session".into());
                }
                if m.text.trim().is_empty() {
                    return Err("empty mentor message".into());
                }
                let author = if event.kind() == EventKind::Nudge {
                    Author::SystemNudge
                } else {
                    Author::Mentor
                };
                self.transcript
                    .push(DialogueTurn::new(author, m.text.clone(), event.at));
            }
            EventBody::ReportSubmitted(r) => {
                if !active {
                    return Err("report for inactive session".into());
                }
                if !self.stage.is_last() {
                    return Err(format!("report submitted at stage {}", self.stage));
                }
                if let Some(field) = r.draft().empty_fields().first() {
                    return Err(format!("report field {field} is empty"));
                }
                self.report = Some(r.clone());
            }
            EventBody::Completed => {
                if !active || !self.final_stage_complete || self.report.is_none() {
                    return Err("completion before final stage and report".into());
                }
                self.status = SessionStatus::Completed;
            }
            EventBody::Abandoned => {
                if !active {
                    return Err("abandoning an inactive session".into());
                }
                self.status = SessionStatus::Abandoned;
            }
        }
        self.updated_at = event.at;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("session {id} is {status}", status = .status.as_str())]
    NotActive { id: String, status: SessionStatus },
    #[error("reports can only be submitted at stage 6 (session is at stage {0})")]
    WrongStage(StageId),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("CorruptLog at seq {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },
    #[error("I/O error: {0}")]
    Io(String),
}

/// Rebuild a session from its event log.
pub fn replay(events: &[SessionEvent]) -> Result<Session, SessionError> {
    let corrupt = |seq: u64, reason: String| SessionError::CorruptLog { seq, reason };
    let first = events
        .first()
        .ok_or_else(|| corrupt(1, "log is empty (no created event)".into()))?;
    let EventBody::Created(created) = &first.body else {
        return Err(corrupt(first.seq, "first event is not created".into()));
    };
    if first.seq != 1 {
        return Err(corrupt(1, format!("log starts at seq {}", first.seq)));
    }
    let mut session = Session::created(created, first.at);
    for (i, event) in events.iter().enumerate().skip(1) {
        let expected = i as u64 + 1;
        if event.seq != expected {
            return Err(corrupt(
                expected,
                format!("expected seq {expected}, found {}", event.seq),
            ));
        }
        session.apply(event).map_err(|r| corrupt(event.seq, r))?;
    }
    Ok(session)
}

enum IdSource {
    Random,
    Seeded(Box<ChaCha8Rng>),
}

impl IdSource {
    fn next(&mut self) -> String {
        let n: u64 = match self {
            IdSource::Random => rand::random(),
            IdSource::Seeded(rng) => rng.gen(),
        };
        format!("s-{n:016x}")
    }
}

struct Slot {
    session: Session,
    events: Vec<SessionEvent>,
    tx: broadcast::Sender<SessionEvent>,
}

pub struct SessionService {
    kb: Arc<KnowledgeBase>,
    prompts: Arc<PromptSet>,
    controller_backend: Arc<dyn LlmBackend>,
    mentor_backend: Arc<dyn LlmBackend>,
    clock: Arc<dyn Clock>,
    ids: Mutex<IdSource>,
    sink: Arc<dyn EventSink>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Slot>>>>,
}

impl SessionService {
    pub fn new(
        kb: Arc<KnowledgeBase>,
        prompts: Arc<PromptSet>,
        controller_backend: Arc<dyn LlmBackend>,
        mentor_backend: Arc<dyn LlmBackend>,
    ) -> Self {
        SessionService {
            kb,
            prompts,
            controller_backend,
            mentor_backend,
            clock: Arc::new(SystemClock),
            ids: Mutex::new(IdSource::Random),
            sink: Arc::new(NullSink),
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Derive session ids from `seed` instead of OS randomness.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.ids = Mutex::new(IdSource::Seeded(Box::new(ChaCha8Rng::seed_from_u64(seed))));
        self
    }

    pub fn with_sink(mut self, sink: Arc<dyn EventSink>) -> Self {
        self.sink = sink;
        self
    }

    pub fn kb(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn now(&self) -> Instant {
        self.clock.now()
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.read_map().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn create_session(&self, task_topic: &str) -> Result<Session, SessionError> {
        let topic = task_topic.trim();
        if topic.is_empty() {
            return Err(SessionError::Validation(
                "task_topic must not be empty".into(),
            ));
        }
        let now = self.clock.now();
        let mut map = self.sessions.write().unwrap_or_else(|e| e.into_inner());
        let id = {
            let mut ids = self.ids.lock().unwrap_or_else(|e| e.into_inner());
            let mut id = ids.next();
            while map.contains_key(&id) {
                id = ids.next();
            }
            id
        };
        let created = SessionEvent {
            seq: 1,
            at: now,
            body: EventBody::Created(CreatedPayload {
                session_id: id.clone(),
                task_topic: topic.to_string(),
            }),
        };
        self.persist(&id, &created)?;
        let (tx, _) = broadcast::channel(BROADCAST_CAPACITY);
        let slot = Arc::new(Mutex::new(Slot {
            session: Session::created(
                &CreatedPayload {
                    session_id: id.clone(),
                    task_topic: topic.to_string(),
                },
                now,
            ),
            events: vec![created],
            tx,
        }));
        map.insert(id.clone(), slot.clone());
        drop(map);

        let mut slot = lock(&slot);
        let greeting = self.mentor().respond(
            &kickoff_decision(),
            &[],
            topic,
            self.mentor_backend.as_ref(),
            now,
        );
        let greeting =
            greeting.unwrap_or_else(|e| self.template_fallback(&e, &kickoff_decision(), now));
        self.emit(&mut slot, now, EventBody::MentorMsg(greeting))?;
        tracing::info!(session = %id, topic, "session created");
        Ok(slot.session.clone())
    }

    /// Run one full round: controller decision, then the mentor reply.
    pub fn post_student_message(
        &self,
        session_id: &str,
        text: &str,
    ) -> Result<(MentorMessage, ControllerDecision), SessionError> {
        if text.trim().is_empty() {
            return Err(SessionError::Validation(
                "message text must not be empty".into(),
            ));
        }
        let slot = self.slot(session_id)?;
        let mut slot = lock(&slot);
        ensure_active(&slot.session)?;

        let now = self.event_time(&slot.session);
        self.emit(
            &mut slot,
            now,
            EventBody::StudentMsg(StudentPayload {
                text: text.to_string(),
            }),
        )?;

        let ctx = SessionContext {
            stage: slot.session.stage,
            history: slot.session.transcript.clone(),
            last_student_input_at: Some(now),
            task_topic: slot.session.task_topic.clone(),
        };
        let controller = Controller::new(
            &self.kb,
            &self.prompts.controller,
            self.controller_backend.as_ref(),
        );
        let decision = controller.run_round(&ctx).unwrap_or_else(|e| {
            tracing::error!(session = session_id, error = %e, "controller round failed");
            self.fallback_decision(ctx.stage)
        });
        let at = self.event_time(&slot.session);
        self.emit(&mut slot, at, EventBody::Decision(decision.clone()))?;

        let at = self.event_time(&slot.session);
        let reply = self
            .mentor()
            .respond(
                &decision,
                &slot.session.transcript,
                &ctx.task_topic,
                self.mentor_backend.as_ref(),
                at,
            )
            .unwrap_or_else(|e| self.template_fallback(&e, &decision, at));
        self.emit(&mut slot, at, EventBody::MentorMsg(reply.clone()))?;

        if slot.session.final_stage_complete && slot.session.report.is_some() {
            self.emit(&mut slot, at, EventBody::Completed)?;
        }
        Ok((reply, decision))
    }

    pub fn tick(&self, session_id: &str) -> Result<Option<MentorMessage>, SessionError> {
        self.tick_at(session_id, self.clock.now())
    }

    /// Send a quiet nudge if the student has been silent for the threshold
    /// and has not been nudged since their last turn. Long-idle sessions are
    /// marked abandoned.
    pub fn tick_at(
        &self,
        session_id: &str,
        now: Instant,
    ) -> Result<Option<MentorMessage>, SessionError> {
        let slot = self.slot(session_id)?;
        let mut slot = lock(&slot);
        let session = &slot.session;
        if session.status != SessionStatus::Active || now < session.updated_at {
            return Ok(None);
        }
        if now - session.updated_at > abandon_after() {
            self.emit(&mut slot, now, EventBody::Abandoned)?;
            tracing::info!(session = session_id, "session abandoned");
            return Ok(None);
        }
        let since = session
            .last_student_input_at()
            .unwrap_or(session.created_at);
        if !detect_quiet(since, now, quiet_threshold()) || session.nudged_since_student() {
            return Ok(None);
        }
        let nudge = self
            .mentor()
            .quiet_nudge(
                session.stage,
                &session.transcript,
                &session.task_topic,
                self.mentor_backend.as_ref(),
                now,
            )
            .unwrap_or_else(|e| {
                tracing::error!(error = %e, "nudge template failed");
                MentorMessage {
                    text: self.kb.stage(session.stage).nudge_line.clone(),
                    stage: session.stage,
                    strategy: KICKOFF_STRATEGY,
                    generated_at: now,
                    degraded: true,
                }
            });
        self.emit(&mut slot, now, EventBody::Nudge(nudge.clone()))?;
        Ok(Some(nudge))
    }

    /// Tick every session; returns the nudges sent.
    pub fn tick_all(&self) -> Vec<(String, MentorMessage)> {
        let now = self.clock.now();
        self.session_ids()
            .into_iter()
            .filter_map(|id| match self.tick_at(&id, now) {
                Ok(Some(m)) => Some((id, m)),
                Ok(None) => None,
                Err(e) => {
                    tracing::warn!(session = %id, error = %e, "tick failed");
                    None
                }
            })
            .collect()
    }

    pub fn submit_report(
        &self,
        session_id: &str,
        draft: ReportDraft,
    ) -> Result<Session, SessionError> {
        let slot = self.slot(session_id)?;
        let mut slot = lock(&slot);
        ensure_active(&slot.session)?;
        if !slot.session.stage.is_last() {
            return Err(SessionError::WrongStage(slot.session.stage));
        }
        let missing = draft.empty_fields();
        if !missing.is_empty() {
            return Err(SessionError::Validation(format!(
                "{} must not be empty",
                missing.join(", ")
            )));
        }
        let now = self.event_time(&slot.session);
        let report = LearningReport::from_draft(draft, now);
        self.emit(&mut slot, now, EventBody::ReportSubmitted(report))?;
        if slot.session.final_stage_complete {
            self.emit(&mut slot, now, EventBody::Completed)?;
        }
        Ok(slot.session.clone())
    }

    pub fn get(&self, session_id: &str) -> Result<Session, SessionError> {
        let slot = self.slot(session_id)?;
        let session = lock(&slot).session.clone();
        Ok(session)
    }

    /// Events with `seq > after`.
    pub fn events(&self, session_id: &str, after: u64) -> Result<Vec<SessionEvent>, SessionError> {
        let slot = self.slot(session_id)?;
        let slot = lock(&slot);
        Ok(slot
            .events
            .iter()
            .filter(|e| e.seq > after)
            .cloned()
            .collect())
    }

    /// The backlog after `after` plus a receiver for everything later,
    /// taken atomically so nothing is missed or duplicated.
    pub fn subscribe(
        &self,
        session_id: &str,
        after: u64,
    ) -> Result<(Vec<SessionEvent>, broadcast::Receiver<SessionEvent>), SessionError> {
        let slot = self.slot(session_id)?;
        let slot = lock(&slot);
        let backlog = slot
            .events
            .iter()
            .filter(|e| e.seq > after)
            .cloned()
            .collect();
        Ok((backlog, slot.tx.subscribe()))
    }

    /// Load a session from a stored log. The log is not re-persisted.
    pub fn restore(&self, events: Vec<SessionEvent>) -> Result<Session, SessionError> {
        let session = replay(&events)?;
        let (tx, _) = broadcast::channel(BROADCAST_CAPACITY);
        let mut map = self.sessions.write().unwrap_or_else(|e| e.into_inner());
        if map.contains_key(&session.id) {
            return Err(SessionError::Validation(format!(
                "session {} already loaded",
                session.id
            )));
        }
        map.insert(
            session.id.clone(),
            Arc::new(Mutex::new(Slot {
                session: session.clone(),
                events,
                tx,
            })),
        );
        Ok(session)
    }

    /// Restore every log in `store`'s directory.
    pub fn restore_all(&self, store: &FileStore) -> Result<usize, SessionError> {
        let paths = store
            .log_paths()
            .map_err(|e| SessionError::Io(e.to_string()))?;
        for path in &paths {
            self.restore(store::read_log(path)?)?;
        }
        Ok(paths.len())
    }

    fn mentor(&self) -> Mentor<'_> {
        Mentor::new(&self.kb, &self.prompts.mentor)
    }

    fn slot(&self, id: &str) -> Result<Arc<Mutex<Slot>>, SessionError> {
        self.read_map()
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    fn read_map(&self) -> std::sync::RwLockReadGuard<'_, HashMap<String, Arc<Mutex<Slot>>>> {
        self.sessions.read().unwrap_or_else(|e| e.into_inner())
    }

    fn event_time(&self, session: &Session) -> Instant {
        self.clock.now().max(session.updated_at)
    }

    fn persist(&self, id: &str, event: &SessionEvent) -> Result<(), SessionError> {
        self.sink
            .append(id, event)
            .map_err(|e| SessionError::Io(format!("persisting event {}: {e}", event.seq)))
    }

    fn emit(&self, slot: &mut Slot, at: Instant, body: EventBody) -> Result<(), SessionError> {
        let event = SessionEvent {
            seq: slot.events.len() as u64 + 1,
            at,
            body,
        };
        slot.session
            .apply(&event)
            .map_err(SessionError::Validation)?;
        slot.events.push(event.clone());
        self.persist(&slot.session.id, &event)?;
        // No receivers is fine.
        let _ = slot.tx.send(event);
        Ok(())
    }

    fn fallback_decision(&self, stage: StageId) -> ControllerDecision {
        let focus = StateId::NORMAL_PROGRESS;
        let strategy = self
            .kb
            .strategies_for_state(focus)
            .ok()
            .and_then(|m| m.first().copied())
            .unwrap_or(KICKOFF_STRATEGY);
        ControllerDecision {
            stage_before: stage,
            stage_after: stage,
            advanced: false,
            active_states: vec![focus],
            focus_state: focus,
            chosen_strategy: strategy,
            rationale: "controller unavailable".into(),
            final_stage_complete: false,
            degraded: true,
        }
    }

    fn template_fallback(
        &self,
        err: &crate::template::TemplateError,
        decision: &ControllerDecision,
        at: Instant,
    ) -> MentorMessage {
        tracing::error!(error = %err, "mentor template failed");
        MentorMessage {
            text: self
                .kb
                .strategy(decision.chosen_strategy)
                .fallback_phrasing()
                .to_string(),
            stage: decision.stage_after,
            strategy: decision.chosen_strategy,
            generated_at: at,
            degraded: true,
        }
    }
}

/// The synthetic decision behind the opening greeting.
pub fn kickoff_decision() -> ControllerDecision {
    ControllerDecision {
        stage_before: StageId::FIRST,
        stage_after: StageId::FIRST,
        advanced: false,
        active_states: vec![StateId::StageStart],
        focus_state: StateId::StageStart,
        chosen_strategy: KICKOFF_STRATEGY,
        rationale: "session start".into(),
        final_stage_complete: false,
        degraded: false,
    }
}

fn ensure_active(session: &Session) -> Result<(), SessionError> {
    if session.status == SessionStatus::Active {
        Ok(())
    } else {
        Err(SessionError::NotActive {
            id: session.id.clone(),
            status: session.status,
        })
    }
}

fn lock(slot: &Mutex<Slot>) -> MutexGuard<'_, Slot> {
    slot.lock().unwrap_or_else(|e| e.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::gateway::{BackendConfig, Gateway, ScriptConfig, ScriptEntry, ScriptReply};

    const STAY: &str = r#"{"advance":false,"states":[23],"focus":23,"strategy":18}"#;

    struct Rig {
        svc: SessionService,
        clock: Arc<ManualClock>,
    }

    fn rig_with(controller: BackendConfig) -> Rig {
        let clock = Arc::new(ManualClock::fixed());
        let svc = SessionService::new(
            Arc::new(KnowledgeBase::fixture()),
            Arc::new(PromptSet::bundled()),
            Arc::new(Gateway::new(controller).unwrap()),
            Arc::new(Gateway::new(BackendConfig::always("Tell me more!")).unwrap()),
        )
        .with_clock(clock.clone())
        .with_seed(7);
        Rig { svc, clock }
    }

    fn rig() -> Rig {
        rig_with(BackendConfig::always(STAY))
    }

    fn advancing() -> BackendConfig {
        BackendConfig::always(r#"{"advance":true}"#)
    }

    fn full_draft() -> ReportDraft {
        ReportDraft {
            problem_background: "b".into(),
            solution_concept: "c".into(),
            implementation_plan: "p".into(),
            anticipated_challenges: "a".into(),
        }
    }

    #[test]
    fn create_session_greets() {
        let r = rig();
        let s = r.svc.create_session("Low-Carbon Campus").unwrap();
        assert_eq!(s.stage.ordinal(), 1);
        assert_eq!(s.status, SessionStatus::Active);
        assert!(s.decisions.is_empty());
        assert_eq!(s.transcript.len(), 1);
        assert_eq!(s.transcript[0].author, Author::Mentor);
        let ev = r.svc.events(&s.id, 0).unwrap();
        assert_eq!(
            ev.iter().map(|e| e.kind()).collect::<Vec<_>>(),
            vec![EventKind::Created, EventKind::MentorMsg]
        );
        let EventBody::MentorMsg(m) = &ev[1].body else {
            panic!()
        };
        assert_eq!(m.strategy, KICKOFF_STRATEGY);
    }

    #[test]
    fn empty_topic_and_unique_ids() {
        let r = rig();
        assert!(matches!(
            r.svc.create_session(" "),
            Err(SessionError::Validation(_))
        ));
        let a = r.svc.create_session("x").unwrap();
        let b = r.svc.create_session("x").unwrap();
        assert_ne!(a.id, b.id);
        assert!(a.id.starts_with("s-") && a.id.len() == 18);
    }

    #[test]
    fn round_appends_decision_and_reply() {
        let r = rig();
        let s = r.svc.create_session("t").unwrap();
        let (reply, decision) = r.svc.post_student_message(&s.id, "hello").unwrap();
        assert_eq!(reply.text, "Tell me more!");
        assert_eq!(decision.focus_state, StateId::Listed(23));
        let s = r.svc.get(&s.id).unwrap();
        assert_eq!(s.decisions.len(), 1);
        let authors: Vec<_> = s.transcript.iter().map(|t| t.author).collect();
        assert_eq!(
            authors,
            vec![Author::Mentor, Author::Student, Author::Mentor]
        );
        assert!(matches!(
            r.svc.post_student_message(&s.id, "  "),
            Err(SessionError::Validation(_))
        ));
        assert!(matches!(
            r.svc.post_student_message("s-nope", "x"),
            Err(SessionError::NotFound(_))
        ));
    }

    #[test]
    fn quiet_nudge_rules() {
        let r = rig();
        let s = r.svc.create_session("t").unwrap();
        r.svc.post_student_message(&s.id, "hi").unwrap();
        let t0 = r.clock.now();
        assert!(r
            .svc
            .tick_at(&s.id, t0 + TimeDelta::seconds(10))
            .unwrap()
            .is_none());
        assert!(r
            .svc
            .tick_at(&s.id, t0 + TimeDelta::seconds(61))
            .unwrap()
            .is_some());
        assert!(r
            .svc
            .tick_at(&s.id, t0 + TimeDelta::seconds(66))
            .unwrap()
            .is_none());
        assert!(r
            .svc
            .tick_at(&s.id, t0 + TimeDelta::seconds(200))
            .unwrap()
            .is_none());
        let nudges = r
            .svc
            .events(&s.id, 0)
            .unwrap()
            .iter()
            .filter(|e| e.kind() == EventKind::Nudge)
            .count();
        assert_eq!(nudges, 1);
    }

    #[test]
    fn long_idle_abandons() {
        let r = rig();
        let s = r.svc.create_session("t").unwrap();
        let later = r.clock.now() + TimeDelta::hours(25);
        assert!(r.svc.tick_at(&s.id, later).unwrap().is_none());
        assert_eq!(r.svc.get(&s.id).unwrap().status, SessionStatus::Abandoned);
        assert!(matches!(
            r.svc.post_student_message(&s.id, "back"),
            Err(SessionError::NotActive { .. })
        ));
    }

    #[test]
    fn report_rules() {
        let r = rig_with(advancing());
        let s = r.svc.create_session("t").unwrap();
        r.svc.post_student_message(&s.id, "a").unwrap();
        assert!(matches!(
            r.svc.submit_report(&s.id, full_draft()),
            Err(SessionError::WrongStage(_))
        ));
        for _ in 0..4 {
            r.svc.post_student_message(&s.id, "a").unwrap();
        }
        assert!(r.svc.get(&s.id).unwrap().stage.is_last());
        let mut draft = full_draft();
        draft.implementation_plan = " ".into();
        match r.svc.submit_report(&s.id, draft) {
            Err(SessionError::Validation(m)) => assert!(m.contains("implementation_plan")),
            other => panic!("{other:?}"),
        }
        // Report first, completion flag second.
        let s1 = r.svc.submit_report(&s.id, full_draft()).unwrap();
        assert_eq!(s1.status, SessionStatus::Active);
        r.svc.post_student_message(&s.id, "done").unwrap();
        let s2 = r.svc.get(&s.id).unwrap();
        assert_eq!(s2.status, SessionStatus::Completed);
        assert_eq!(s2.stage.ordinal(), 6);
        assert!(matches!(
            r.svc.post_student_message(&s.id, "more"),
            Err(SessionError::NotActive { .. })
        ));
    }

    #[test]
    fn flag_then_report_completes() {
        let r = rig_with(advancing());
        let s = r.svc.create_session("t").unwrap();
        for _ in 0..6 {
            r.svc.post_student_message(&s.id, "a").unwrap();
        }
        assert!(r.svc.get(&s.id).unwrap().final_stage_complete);
        let done = r.svc.submit_report(&s.id, full_draft()).unwrap();
        assert_eq!(done.status, SessionStatus::Completed);
    }

    #[test]
    fn replay_matches_live() {
        let r = rig_with(advancing());
        let s = r.svc.create_session("t").unwrap();
        for i in 0..7 {
            r.clock.advance(TimeDelta::seconds(70));
            r.svc.tick(&s.id).unwrap();
            r.svc
                .post_student_message(&s.id, &format!("turn {i}"))
                .unwrap();
        }
        r.svc.submit_report(&s.id, full_draft()).unwrap();
        let live = r.svc.get(&s.id).unwrap();
        let events = r.svc.events(&s.id, 0).unwrap();
        assert_eq!(replay(&events).unwrap(), live);
        let text = store::render_log(&events);
        assert_eq!(replay(&store::parse_log(&text).unwrap()).unwrap(), live);
    }

    #[test]
    fn corrupt_logs() {
        let r = rig();
        let s = r.svc.create_session("t").unwrap();
        r.svc.post_student_message(&s.id, "x").unwrap();
        let mut events = r.svc.events(&s.id, 0).unwrap();
        assert!(matches!(
            replay(&[]),
            Err(SessionError::CorruptLog { seq: 1, .. })
        ));
        events.remove(2);
        assert!(matches!(
            replay(&events),
            Err(SessionError::CorruptLog { seq: 3, .. })
        ));
        let mut no_created = r.svc.events(&s.id, 0).unwrap();
        no_created.remove(0);
        assert!(replay(&no_created).is_err());
        // Decision without a student turn.
        let mut bad = r.svc.events(&s.id, 0).unwrap();
        bad.remove(2);
        for (i, e) in bad.iter_mut().enumerate() {
            e.seq = i as u64 + 1;
        }
        assert!(matches!(
            replay(&bad),
            Err(SessionError::CorruptLog { seq: 3, .. })
        ));
    }

    #[test]
    fn truncated_line_is_corrupt_at_its_seq() {
        let r = rig();
        let s = r.svc.create_session("t").unwrap();
        r.svc.post_student_message(&s.id, "x").unwrap();
        let text = store::render_log(&r.svc.events(&s.id, 0).unwrap());
        let cut = &text[..text.len() - 20];
        match store::parse_log(cut) {
            Err(SessionError::CorruptLog { seq, .. }) => assert_eq!(seq, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn backend_down_degrades_but_keeps_turn() {
        let clock = Arc::new(ManualClock::fixed());
        let down: Arc<dyn LlmBackend> =
            Arc::new(Gateway::new(BackendConfig::unavailable()).unwrap());
        let svc = SessionService::new(
            Arc::new(KnowledgeBase::fixture()),
            Arc::new(PromptSet::bundled()),
            down.clone(),
            down,
        )
        .with_clock(clock);
        let s = svc.create_session("t").unwrap();
        let (reply, decision) = svc.post_student_message(&s.id, "hello").unwrap();
        assert!(reply.degraded && decision.degraded);
        assert_eq!(decision.chosen_strategy.ordinal(), 18);
        let events = svc.events(&s.id, 0).unwrap();
        let EventBody::MentorMsg(m) = &events.last().unwrap().body else {
            panic!()
        };
        assert!(m.degraded);
    }

    #[test]
    fn seeded_runs_produce_identical_logs() {
        let run = || {
            let r = rig_with(BackendConfig::Scripted(ScriptConfig {
                entries: vec![ScriptEntry::new("stage decision", r#"{"advance":true}"#)],
                default: Some(ScriptReply::Text(STAY.into())),
            }));
            let s = r.svc.create_session("t").unwrap();
            for _ in 0..3 {
                r.clock.advance(TimeDelta::seconds(5));
                r.svc.post_student_message(&s.id, "x").unwrap();
            }
            store::render_log(&r.svc.events(&s.id, 0).unwrap())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn subscribe_gets_backlog_then_live() {
        let r = rig();
        let s = r.svc.create_session("t").unwrap();
        let (backlog, mut rx) = r.svc.subscribe(&s.id, 1).unwrap();
        assert_eq!(backlog.len(), 1);
        assert_eq!(backlog[0].seq, 2);
        r.svc.post_student_message(&s.id, "x").unwrap();
        let seqs: Vec<u64> = std::iter::from_fn(|| rx.try_recv().ok())
            .map(|e| e.seq)
            .collect();
        assert_eq!(seqs, vec![3, 4, 5]);
    }

    #[test]
    fn concurrent_posts_are_serialized() {
        let r = rig();
        let svc = Arc::new(r.svc);
        let s = svc.create_session("t").unwrap();
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let svc = svc.clone();
                let id = s.id.clone();
                std::thread::spawn(move || svc.post_student_message(&id, &format!("m{i}")).unwrap())
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let s = svc.get(&s.id).unwrap();
        assert_eq!(s.decisions.len(), 8);
        let authors: Vec<_> = s.transcript.iter().skip(1).map(|t| t.author).collect();
        assert!(authors
            .chunks(2)
            .all(|c| c == [Author::Student, Author::Mentor]));
        assert_eq!(replay(&svc.events(&s.id, 0).unwrap()).unwrap(), s);
    }

    #[test]
    fn file_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(FileStore::open(dir.path()).unwrap());
        let r = rig();
        let svc = r.svc.with_sink(store.clone());
        let s = svc.create_session("t").unwrap();
        svc.post_student_message(&s.id, "x").unwrap();
        let on_disk = store::read_log(&store.path_for(&s.id)).unwrap();
        assert_eq!(on_disk, svc.events(&s.id, 0).unwrap());

        let fresh = rig().svc;
        assert_eq!(fresh.restore_all(&store).unwrap(), 1);
        assert_eq!(fresh.get(&s.id).unwrap(), svc.get(&s.id).unwrap());
    }
}
