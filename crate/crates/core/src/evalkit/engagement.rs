use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::controller::Author;
use crate::kb::StateId;
use crate::session::Session;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementReport {
    pub session_id: String,
    pub duration_min: f64,
    pub rounds: u32,
    pub student_word_count: u32,
    /// Focus-state tallies; stage-start decisions are left out.
    pub state_freq: BTreeMap<u8, u32>,
    /// Chosen-strategy tallies over every decision.
    pub strategy_freq: BTreeMap<u8, u32>,
}

impl EngagementReport {
    pub fn decisions_counted(&self) -> u32 {
        self.strategy_freq.values().sum()
    }
}

pub fn compute_engagement(session: &Session) -> EngagementReport {
    let students = session
        .transcript
        .iter()
        .filter(|t| t.author == Author::Student);
    let rounds = students.clone().count() as u32;
    let student_word_count = students
        .map(|t| t.text.split_whitespace().count() as u32)
        .sum();

    let mut state_freq = BTreeMap::new();
    let mut strategy_freq = BTreeMap::new();
    for d in &session.decisions {
        if let StateId::Listed(n) = d.focus_state {
            *state_freq.entry(n).or_insert(0) += 1;
        }
        *strategy_freq
            .entry(d.chosen_strategy.ordinal())
            .or_insert(0) += 1;
    }
    let elapsed = session.updated_at - session.created_at;
    EngagementReport {
        session_id: session.id.clone(),
        duration_min: elapsed.num_milliseconds() as f64 / 60_000.0,
        rounds,
        student_word_count,
        state_freq,
        strategy_freq,
    }
}

/// A plain-text bar chart, one line per key.
pub fn histogram(title: &str, freq: &BTreeMap<u8, u32>, label: impl Fn(u8) -> String) -> String {
    let max = freq.values().copied().max().unwrap_or(0).max(1);
    let mut out = format!("{title}\n");
    for (k, v) in freq {
        let bar = "#".repeat(((*v as usize) * 40).div_ceil(max as usize));
        out.push_str(&format!("{:>3} {:<42} {:>4} {}\n", k, label(*k), v, bar));
    }
    let total: u32 = freq.values().sum();
    out.push_str(&format!("total {total}\n"));
    out
}
