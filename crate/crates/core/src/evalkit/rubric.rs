//! Four-dimension scoring of learning reports.

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatMessage, CompletionRequest, LlmBackend, Role, CONTROLLER_TEMPERATURE};
use crate::session::ReportDraft;
use crate::template::Template;

use super::coding::json_object;
use super::EvalError;

pub const MIN_SCORE: u8 = 1;
pub const MAX_SCORE: u8 = 5;
pub const DIMENSIONS: [&str; 4] = ["quality", "elaboration", "originality", "human_like"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportScore {
    pub quality: u8,
    pub elaboration: u8,
    pub originality: u8,
    pub human_like: u8,
    pub total: u8,
    /// Dimensions whose backend value was out of range and got clamped.
    #[serde(default)]
    pub clamped: Vec<String>,
}

impl ReportScore {
    /// Build a score from raw values, clamping each into range.
    pub fn from_raw(raw: [i64; 4]) -> Self {
        let mut clamped = Vec::new();
        let mut v = [0u8; 4];
        for (i, r) in raw.iter().enumerate() {
            let c = (*r).clamp(i64::from(MIN_SCORE), i64::from(MAX_SCORE));
            if c != *r {
                clamped.push(DIMENSIONS[i].to_string());
            }
            v[i] = c as u8;
        }
        ReportScore {
            quality: v[0],
            elaboration: v[1],
            originality: v[2],
            human_like: v[3],
            total: v.iter().sum(),
            clamped,
        }
    }

    pub fn dimensions(&self) -> [u8; 4] {
        [
            self.quality,
            self.elaboration,
            self.originality,
            self.human_like,
        ]
    }
}

fn parse_scores(reply: &str) -> Result<[i64; 4], String> {
    let body = json_object(reply).ok_or("no JSON object in reply")?;
    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| e.to_string())?;
    let mut out = [0i64; 4];
    for (i, dim) in DIMENSIONS.iter().enumerate() {
        let n = value
            .get(dim)
            .and_then(serde_json::Value::as_f64)
            .filter(|n| n.is_finite())
            .ok_or_else(|| format!("missing numeric \"{dim}\""))?;
        out[i] = n.round() as i64;
    }
    Ok(out)
}

pub fn score_report(
    report: &ReportDraft,
    backend: &dyn LlmBackend,
    prompt: &Template,
) -> Result<ReportScore, EvalError> {
    let missing = report.empty_fields();
    if !missing.is_empty() {
        return Err(EvalError::Precondition(format!(
            "report is incomplete: {} empty",
            missing.join(", ")
        )));
    }
    let system = prompt
        .render(&[
            ("problem_background", &report.problem_background),
            ("solution_concept", &report.solution_concept),
            ("implementation_plan", &report.implementation_plan),
            ("anticipated_challenges", &report.anticipated_challenges),
        ])
        .map_err(|e| EvalError::ScoringFailed(e.to_string()))?;
    let req = CompletionRequest::new(system, CONTROLLER_TEMPERATURE, 100);
    let first = backend
        .complete(&req)
        .map_err(|e| EvalError::ScoringFailed(e.to_string()))?;
    let raw = match parse_scores(&first.text) {
        Ok(raw) => raw,
        Err(reason) => {
            let retry = req.with_messages(vec![
                ChatMessage::new(Role::Mentor, first.text),
                ChatMessage::new(
                    Role::System,
                    format!("That reply could not be used ({reason}). Answer with only the JSON object of four integer scores."),
                ),
            ]);
            let second = backend
                .complete(&retry)
                .map_err(|e| EvalError::ScoringFailed(e.to_string()))?;
            parse_scores(&second.text).map_err(EvalError::ScoringFailed)?
        }
    };
    let score = ReportScore::from_raw(raw);
    if !score.clamped.is_empty() {
        tracing::warn!(dimensions = ?score.clamped, "clamped out-of-range report scores");
    }
    Ok(score)
}
