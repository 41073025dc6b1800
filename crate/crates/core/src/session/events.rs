//! The session event log. One JSON object per line:
//! `{"seq":…,"kind":…,"at":…,"payload":…}`.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::clock::Instant;
use crate::controller::ControllerDecision;
use crate::mentor::MentorMessage;

use super::LearningReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Created,
    StudentMsg,
    Decision,
    MentorMsg,
    Nudge,
    ReportSubmitted,
    Completed,
    Abandoned,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Created => "created",
            EventKind::StudentMsg => "student_msg",
            EventKind::Decision => "decision",
            EventKind::MentorMsg => "mentor_msg",
            EventKind::Nudge => "nudge",
            EventKind::ReportSubmitted => "report_submitted",
            EventKind::Completed => "completed",
            EventKind::Abandoned => "abandoned",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreatedPayload {
    pub session_id: String,
    pub task_topic: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentPayload {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventBody {
    Created(CreatedPayload),
    StudentMsg(StudentPayload),
    Decision(ControllerDecision),
    MentorMsg(MentorMessage),
    Nudge(MentorMessage),
    ReportSubmitted(LearningReport),
    Completed,
    Abandoned,
}

impl EventBody {
    pub fn kind(&self) -> EventKind {
        match self {
            EventBody::Created(_) => EventKind::Created,
            EventBody::StudentMsg(_) => EventKind::StudentMsg,
            EventBody::Decision(_) => EventKind::Decision,
            EventBody::MentorMsg(_) => EventKind::MentorMsg,
            EventBody::Nudge(_) => EventKind::Nudge,
            EventBody::ReportSubmitted(_) => EventKind::ReportSubmitted,
            EventBody::Completed => EventKind::Completed,
            EventBody::Abandoned => EventKind::Abandoned,
        }
    }

    fn payload_json(&self) -> serde_json::Result<serde_json::Value> {
        match self {
            EventBody::Created(p) => serde_json::to_value(p),
            EventBody::StudentMsg(p) => serde_json::to_value(p),
            EventBody::Decision(d) => serde_json::to_value(d),
            EventBody::MentorMsg(m) | EventBody::Nudge(m) => serde_json::to_value(m),
            EventBody::ReportSubmitted(r) => serde_json::to_value(r),
            EventBody::Completed | EventBody::Abandoned => Ok(serde_json::json!({})),
        }
    }

    fn from_parts(kind: EventKind, payload: serde_json::Value) -> serde_json::Result<Self> {
        use serde_json::from_value;
        Ok(match kind {
            EventKind::Created => EventBody::Created(from_value(payload)?),
            EventKind::StudentMsg => EventBody::StudentMsg(from_value(payload)?),
            EventKind::Decision => EventBody::Decision(from_value(payload)?),
            EventKind::MentorMsg => EventBody::MentorMsg(from_value(payload)?),
            EventKind::Nudge => EventBody::Nudge(from_value(payload)?),
            EventKind::ReportSubmitted => EventBody::ReportSubmitted(from_value(payload)?),
            EventKind::Completed => EventBody::Completed,
            EventKind::Abandoned => EventBody::Abandoned,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionEvent {
    pub seq: u64,
    pub at: Instant,
    pub body: EventBody,
}

impl SessionEvent {
    pub fn kind(&self) -> EventKind {
        self.body.kind()
    }

    /// The event as one log line, without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event payloads always serialize")
    }
}

#[derive(Serialize, Deserialize)]
struct Wire {
    seq: u64,
    kind: EventKind,
    at: Instant,
    payload: serde_json::Value,
}

impl Serialize for SessionEvent {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        Wire {
            seq: self.seq,
            kind: self.kind(),
            at: self.at,
            payload: self
                .body
                .payload_json()
                .map_err(serde::ser::Error::custom)?,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SessionEvent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = Wire::deserialize(d)?;
        let body = EventBody::from_parts(w.kind, w.payload)
            .map_err(|e| serde::de::Error::custom(format!("bad {} payload: {e}", w.kind)))?;
        Ok(SessionEvent {
            seq: w.seq,
            at: w.at,
            body,
        })
    }
}
