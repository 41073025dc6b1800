//! Mentigo: a stage-aware mentoring engine for project-based learning.
//!
//! A controller agent tracks which of six project stages a student is in,
//! classifies their current learning state and picks a mapped scaffolding
//! strategy. A mentor agent turns that decision into a reply. Sessions are
//! event-sourced and can be served over HTTP/WebSocket.

pub mod clock;
pub mod controller;
pub mod evalkit;
pub mod gateway;
pub mod kb;
pub mod mentor;
pub mod prompts;
pub mod server;
pub mod session;
pub mod template;

pub use kb::{KnowledgeBase, StageId, StateId, StrategyId};
