//! Simulated-student episodes and the measurement instruments: turn coding,
//! engagement metrics, frequency distributions and report scoring.

pub mod coding;
pub mod csv;
pub mod engagement;
pub mod episode;
pub mod persona;
pub mod rubric;

pub use coding::{
    code_session, code_turn, CodedTurn, Coder, CodingRules, CognitiveLevel, SpeechType, TurnRef,
};
pub use csv::{export_csv, read_csv, CsvRecord};
pub use engagement::{compute_engagement, EngagementReport};
pub use episode::{run_episode, EpisodeBackends, EpisodeResult, EpisodeSummary};
pub use persona::{PersonaScript, PersonaTurn, ScriptBundle};
pub use rubric::{score_report, ReportScore};

use crate::session::SessionError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid persona: {0}")]
    Persona(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("turn text is empty")]
    EmptyTurn,
    #[error("coding failed: {0}")]
    CodingFailed(String),
    #[error("scoring failed: {0}")]
    ScoringFailed(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid rules: {0}")]
    Rules(String),
    #[error("CSV sink error: {0}")]
    Sink(String),
    #[error("CSV parse error: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}
