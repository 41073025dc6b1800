//! Knowledge base: CPS stages, student states, guidance strategies and the
//! state → strategy mapping.
//!
//! A [`KnowledgeBase`] is built once from a JSON document and is immutable
//! afterwards. Loading validates every invariant and reports all violations
//! together.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The bundled fixture knowledge base.
pub const FIXTURE_JSON: &str = include_str!("../../../kb/fixture.json");

pub const STAGE_COUNT: u8 = 6;
pub const STATE_COUNT: u8 = 23;
pub const STRATEGY_COUNT: u8 = 20;
pub const STATE_CATEGORY_COUNT: usize = 8;
pub const STRATEGY_CATEGORY_COUNT: usize = 5;

/// Strategy used for stage kickoff messages. Exempt from the coverage check.
pub const KICKOFF_STRATEGY: StrategyId = StrategyId(1);

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("knowledge base invalid ({} violation(s)): {}", .0.len(), .0.join("; "))]
    Validation(Vec<String>),
    #[error("unknown state {0}")]
    UnknownState(StateId),
    #[error("cannot read knowledge base {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

// ---------------------------------------------------------------------------
// Identifiers
// ---------------------------------------------------------------------------

/// One of the six CPS stages, 1 (Problem Discovery) through 6 (Solution
/// Implementation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StageId(u8);

impl StageId {
    pub const FIRST: StageId = StageId(1);
    pub const LAST: StageId = StageId(STAGE_COUNT);

    pub fn new(ordinal: u8) -> Option<Self> {
        (1..=STAGE_COUNT)
            .contains(&ordinal)
            .then_some(StageId(ordinal))
    }

    pub fn ordinal(self) -> u8 {
        self.0
    }

    /// The following stage; `None` for the terminal stage.
    pub fn successor(self) -> Option<Self> {
        StageId::new(self.0 + 1)
    }

    pub fn is_last(self) -> bool {
        self == Self::LAST
    }

    pub fn all() -> impl Iterator<Item = StageId> {
        (1..=STAGE_COUNT).map(StageId)
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for StageId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.0)
    }
}

impl<'de> Deserialize<'de> for StageId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let n = i64::deserialize(d)?;
        u8::try_from(n)
            .ok()
            .and_then(StageId::new)
            .ok_or_else(|| serde::de::Error::custom(format!("stage id {n} outside 1..=6")))
    }
}

/// A student state. Listed states 1..=23 come from classification; the two
/// sentinels are raised only by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StateId {
    Listed(u8),
    StageStart,
    Quiet,
}

impl StateId {
    pub const SILENT: StateId = StateId::Listed(1);
    pub const NORMAL_PROGRESS: StateId = StateId::Listed(23);

    /// A listed (non-sentinel) state, if `ordinal` is in range.
    pub fn listed(ordinal: u8) -> Option<Self> {
        (1..=STATE_COUNT)
            .contains(&ordinal)
            .then_some(StateId::Listed(ordinal))
    }

    pub fn is_sentinel(self) -> bool {
        !matches!(self, StateId::Listed(_))
    }

    pub fn ordinal(self) -> Option<u8> {
        match self {
            StateId::Listed(n) => Some(n),
            _ => None,
        }
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateId::Listed(n) => write!(f, "{n}"),
            StateId::StageStart => f.write_str("STAGE_START"),
            StateId::Quiet => f.write_str("QUIET"),
        }
    }
}

impl Serialize for StateId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            StateId::Listed(n) => s.serialize_u8(*n),
            StateId::StageStart => s.serialize_str("STAGE_START"),
            StateId::Quiet => s.serialize_str("QUIET"),
        }
    }
}

impl<'de> Deserialize<'de> for StateId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(i64),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => u8::try_from(n)
                .ok()
                .and_then(StateId::listed)
                .ok_or_else(|| serde::de::Error::custom(format!("state id {n} outside 1..=23"))),
            Raw::Name(name) => match name.as_str() {
                "STAGE_START" => Ok(StateId::StageStart),
                "QUIET" => Ok(StateId::Quiet),
                other => Err(serde::de::Error::custom(format!("unknown state {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StrategyId(u8);

impl StrategyId {
    pub fn new(ordinal: u8) -> Option<Self> {
        (1..=STRATEGY_COUNT)
            .contains(&ordinal)
            .then_some(StrategyId(ordinal))
    }

    pub fn ordinal(self) -> u8 {
        self.0
    }

    fn from_i64(n: i64) -> Option<Self> {
        u8::try_from(n).ok().and_then(StrategyId::new)
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for StrategyId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.0)
    }
}

impl<'de> Deserialize<'de> for StrategyId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let n = i64::deserialize(d)?;
        StrategyId::from_i64(n)
            .ok_or_else(|| serde::de::Error::custom(format!("strategy id {n} outside 1..=20")))
    }
}

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSpec {
    pub id: StageId,
    pub name: String,
    pub definition: String,
    /// Checked by the controller backend; all must hold before advancing.
    pub completion_criteria: Vec<String>,
    /// Per-stage supplement for the mentor prompt.
    pub stage_prompt: String,
    /// Canned re-engagement line used when no backend is available.
    pub nudge_line: String,
}

/// A reference to a strategy as written in a state's guidance list: either
/// a name (resolved through strategy names and the alias table) or an id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GuidanceRef {
    Id(i64),
    Name(String),
}

impl fmt::Display for GuidanceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GuidanceRef::Id(n) => write!(f, "#{n}"),
            GuidanceRef::Name(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpec {
    pub id: StateId,
    pub category: String,
    pub name: String,
    pub definition: String,
    /// Guidance entries as written in the document.
    pub guidance: Vec<GuidanceRef>,
    /// Resolved, de-duplicated strategies in listing order.
    pub strategy_ids: Vec<StrategyId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExemplarDialogue {
    pub student_utterance: String,
    pub mentor_utterance: String,
    pub state_id: StateId,
    pub strategy_id: StrategyId,
    pub stage_id: StageId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategySpec {
    pub id: StrategyId,
    pub category: String,
    pub name: String,
    pub definition: String,
    /// Used verbatim when mentor generation fails.
    pub fallback_line: String,
    pub exemplars: Vec<ExemplarDialogue>,
}

impl StrategySpec {
    pub fn fallback_phrasing(&self) -> &str {
        if self.fallback_line.trim().is_empty() {
            &self.definition
        } else {
            &self.fallback_line
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBase {
    stages: Vec<StageSpec>,
    states: Vec<StateSpec>,
    strategies: Vec<StrategySpec>,
    character_prompt: String,
    aliases: BTreeMap<String, i64>,
}

// ---------------------------------------------------------------------------
// Document form
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KbDocument {
    character_prompt: String,
    stages: Vec<StageDoc>,
    strategies: Vec<StrategyDoc>,
    states: Vec<StateDoc>,
    #[serde(default)]
    aliases: BTreeMap<String, i64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StageDoc {
    id: i64,
    name: String,
    definition: String,
    completion_criteria: Vec<String>,
    stage_prompt: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    nudge_line: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct StrategyDoc {
    id: i64,
    category: String,
    name: String,
    definition: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    fallback_line: String,
    #[serde(default)]
    exemplars: Vec<ExemplarDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExemplarDoc {
    student_utterance: String,
    mentor_utterance: String,
    state_id: i64,
    stage_id: i64,
}

#[derive(Debug, Serialize, Deserialize)]
struct StateDoc {
    id: i64,
    category: String,
    name: String,
    definition: String,
    guidance: Vec<GuidanceRef>,
}

fn normalize(name: &str) -> String {
    name.trim().to_lowercase()
}

/// Load and validate a knowledge base from a JSON byte stream.
pub fn load_knowledge_base<R: Read>(mut source: R) -> Result<KnowledgeBase, KbError> {
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| KbError::Parse {
            line: 0,
            column: 0,
            message: e.to_string(),
        })?;
    KnowledgeBase::from_json(&text)
}

impl KnowledgeBase {
    pub fn fixture() -> Self {
        Self::from_json(FIXTURE_JSON).expect("bundled fixture knowledge base is valid")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, KbError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| KbError::Io {
            path: path.display().to_string(),
            source,
        })?;
        load_knowledge_base(file)
    }

    pub fn from_json(text: &str) -> Result<Self, KbError> {
        let doc: KbDocument = serde_json::from_str(text).map_err(|e| KbError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_document(doc)
    }

    fn from_document(doc: KbDocument) -> Result<Self, KbError> {
        let mut violations = Vec::new();

        if doc.character_prompt.trim().is_empty() {
            violations.push("character_prompt is empty".to_string());
        }

        // Stages
        let mut stages = Vec::new();
        let mut seen_stages = BTreeSet::new();
        for s in doc.stages {
            let Some(id) = u8::try_from(s.id).ok().and_then(StageId::new) else {
                violations.push(format!("stage id {} outside 1..=6", s.id));
                continue;
            };
            if !seen_stages.insert(id) {
                violations.push(format!("stage {id} defined more than once"));
                continue;
            }
            if s.name.trim().is_empty() {
                violations.push(format!("stage {id}: name is empty"));
            }
            if s.definition.trim().is_empty() {
                violations.push(format!("stage {id}: definition is empty"));
            }
            if s.completion_criteria.iter().all(|c| c.trim().is_empty()) {
                violations.push(format!("stage {id}: completion_criteria is empty"));
            }
            if s.stage_prompt.trim().is_empty() {
                violations.push(format!("stage {id}: stage_prompt is empty"));
            }
            stages.push(StageSpec {
                id,
                name: s.name,
                definition: s.definition,
                completion_criteria: s.completion_criteria,
                stage_prompt: s.stage_prompt,
                nudge_line: s.nudge_line,
            });
        }
        for id in StageId::all() {
            if !seen_stages.contains(&id) {
                violations.push(format!("stage {id} missing"));
            }
        }
        stages.sort_by_key(|s| s.id);

        // Strategies
        let mut strategies = Vec::new();
        let mut seen_strategies = BTreeSet::new();
        for s in doc.strategies {
            let Some(id) = StrategyId::from_i64(s.id) else {
                violations.push(format!("strategy id {} outside 1..=20", s.id));
                continue;
            };
            if !seen_strategies.insert(id) {
                violations.push(format!("strategy {id} defined more than once"));
                continue;
            }
            if s.name.trim().is_empty() {
                violations.push(format!("strategy {id}: name is empty"));
            }
            if s.category.trim().is_empty() {
                violations.push(format!("strategy {id}: category is empty"));
            }
            let mut exemplars = Vec::new();
            for (i, e) in s.exemplars.into_iter().enumerate() {
                let state = u8::try_from(e.state_id).ok().and_then(StateId::listed);
                let stage = u8::try_from(e.stage_id).ok().and_then(StageId::new);
                match (state, stage) {
                    (Some(state_id), Some(stage_id)) => exemplars.push(ExemplarDialogue {
                        student_utterance: e.student_utterance,
                        mentor_utterance: e.mentor_utterance,
                        state_id,
                        strategy_id: id,
                        stage_id,
                    }),
                    _ => violations.push(format!(
                        "strategy {id} exemplar {i}: state {} / stage {} out of range",
                        e.state_id, e.stage_id
                    )),
                }
            }
            strategies.push(StrategySpec {
                id,
                category: s.category,
                name: s.name,
                definition: s.definition,
                fallback_line: s.fallback_line,
                exemplars,
            });
        }
        for n in 1..=STRATEGY_COUNT {
            let id = StrategyId(n);
            if !seen_strategies.contains(&id) {
                violations.push(format!("strategy {id} missing"));
            }
        }
        strategies.sort_by_key(|s| s.id);

        for (alias, target) in &doc.aliases {
            if StrategyId::from_i64(*target).is_none() {
                violations.push(format!("alias {alias:?} targets unknown strategy {target}"));
            }
        }

        // States
        let mut states = Vec::new();
        let mut seen_states = BTreeSet::new();
        for s in doc.states {
            let Some(id) = u8::try_from(s.id).ok().and_then(StateId::listed) else {
                violations.push(format!("state id {} outside 1..=23", s.id));
                continue;
            };
            if !seen_states.insert(id) {
                violations.push(format!("state {id} defined more than once"));
                continue;
            }
            if s.name.trim().is_empty() {
                violations.push(format!("state {id}: name is empty"));
            }
            if s.category.trim().is_empty() {
                violations.push(format!("state {id}: category is empty"));
            }
            if s.guidance.is_empty() {
                violations.push(format!("state {id}: no guidance strategies"));
            }
            let mut strategy_ids = Vec::new();
            for g in &s.guidance {
                match resolve_guidance(g, &strategies, &doc.aliases) {
                    Some(sid) => {
                        if !strategy_ids.contains(&sid) {
                            strategy_ids.push(sid);
                        }
                    }
                    None => violations.push(format!(
                        "state {id}: guidance {g} does not resolve to a strategy"
                    )),
                }
            }
            states.push(StateSpec {
                id,
                category: s.category,
                name: s.name,
                definition: s.definition,
                guidance: s.guidance,
                strategy_ids,
            });
        }
        for n in 1..=STATE_COUNT {
            if !seen_states.contains(&StateId::Listed(n)) {
                violations.push(format!("state {n} missing"));
            }
        }
        states.sort_by_key(|s| s.id);

        let state_categories: BTreeSet<&str> = states.iter().map(|s| s.category.as_str()).collect();
        if state_categories.len() != STATE_CATEGORY_COUNT {
            violations.push(format!(
                "expected {STATE_CATEGORY_COUNT} state categories, found {}",
                state_categories.len()
            ));
        }
        let strategy_categories: BTreeSet<&str> =
            strategies.iter().map(|s| s.category.as_str()).collect();
        if strategy_categories.len() != STRATEGY_CATEGORY_COUNT {
            violations.push(format!(
                "expected {STRATEGY_CATEGORY_COUNT} strategy categories, found {}",
                strategy_categories.len()
            ));
        }

        // Coverage: every strategy is reachable from some state, or is the kickoff strategy.
        let referenced: BTreeSet<StrategyId> = states
            .iter()
            .flat_map(|s| s.strategy_ids.iter().copied())
            .collect();
        for s in &strategies {
            if s.id != KICKOFF_STRATEGY && !referenced.contains(&s.id) {
                violations.push(format!("strategy {} is not referenced by any state", s.id));
            }
        }

        if !violations.is_empty() {
            return Err(KbError::Validation(violations));
        }
        Ok(KnowledgeBase {
            stages,
            states,
            strategies,
            character_prompt: doc.character_prompt,
            aliases: doc.aliases,
        })
    }

    fn to_document(&self) -> KbDocument {
        KbDocument {
            character_prompt: self.character_prompt.clone(),
            stages: self
                .stages
                .iter()
                .map(|s| StageDoc {
                    id: s.id.ordinal().into(),
                    name: s.name.clone(),
                    definition: s.definition.clone(),
                    completion_criteria: s.completion_criteria.clone(),
                    stage_prompt: s.stage_prompt.clone(),
                    nudge_line: s.nudge_line.clone(),
                })
                .collect(),
            strategies: self
                .strategies
                .iter()
                .map(|s| StrategyDoc {
                    id: s.id.ordinal().into(),
                    category: s.category.clone(),
                    name: s.name.clone(),
                    definition: s.definition.clone(),
                    fallback_line: s.fallback_line.clone(),
                    exemplars: s
                        .exemplars
                        .iter()
                        .map(|e| ExemplarDoc {
                            student_utterance: e.student_utterance.clone(),
                            mentor_utterance: e.mentor_utterance.clone(),
                            state_id: e.state_id.ordinal().unwrap_or(0).into(),
                            stage_id: e.stage_id.ordinal().into(),
                        })
                        .collect(),
                })
                .collect(),
            states: self
                .states
                .iter()
                .map(|s| StateDoc {
                    id: s.id.ordinal().unwrap_or(0).into(),
                    category: s.category.clone(),
                    name: s.name.clone(),
                    definition: s.definition.clone(),
                    guidance: s.guidance.clone(),
                })
                .collect(),
            aliases: self.aliases.clone(),
        }
    }

    /// Serialize back to the document format accepted by [`load_knowledge_base`].
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("document serializes")
    }

    pub fn stages(&self) -> &[StageSpec] {
        &self.stages
    }

    pub fn states(&self) -> &[StateSpec] {
        &self.states
    }

    pub fn strategies(&self) -> &[StrategySpec] {
        &self.strategies
    }

    pub fn character_prompt(&self) -> &str {
        &self.character_prompt
    }

    pub fn aliases(&self) -> &BTreeMap<String, i64> {
        &self.aliases
    }

    pub fn stage(&self, id: StageId) -> &StageSpec {
        // Validated: all six stages present, sorted.
        &self.stages[usize::from(id.ordinal() - 1)]
    }

    pub fn state(&self, id: StateId) -> Option<&StateSpec> {
        let n = id.ordinal()?;
        self.states.get(usize::from(n - 1))
    }

    pub fn strategy(&self, id: StrategyId) -> &StrategySpec {
        &self.strategies[usize::from(id.ordinal() - 1)]
    }

    /// Distinct state categories in listing order.
    pub fn state_categories(&self) -> Vec<&str> {
        ordered_distinct(self.states.iter().map(|s| s.category.as_str()))
    }

    /// Distinct strategy categories in listing order.
    pub fn strategy_categories(&self) -> Vec<&str> {
        ordered_distinct(self.strategies.iter().map(|s| s.category.as_str()))
    }

    /// The mapped strategies for a listed state, in listing order.
    pub fn strategies_for_state(&self, state: StateId) -> Result<&[StrategyId], KbError> {
        self.state(state)
            .map(|s| s.strategy_ids.as_slice())
            .ok_or(KbError::UnknownState(state))
    }

    /// Guidance names that resolve to no strategy, in first-seen order.
    pub fn validate_alias_table(&self) -> Vec<String> {
        let mut unresolved = Vec::new();
        for state in &self.states {
            for g in &state.guidance {
                if let GuidanceRef::Name(name) = g {
                    if resolve_guidance(g, &self.strategies, &self.aliases).is_none()
                        && !unresolved.contains(name)
                    {
                        unresolved.push(name.clone());
                    }
                }
            }
        }
        unresolved
    }

    /// Resolve a strategy name or alias variant to an id.
    pub fn resolve_strategy_name(&self, name: &str) -> Option<StrategyId> {
        resolve_guidance(
            &GuidanceRef::Name(name.to_string()),
            &self.strategies,
            &self.aliases,
        )
    }

    /// Copy with the alias table replaced. Mapping ids are not re-resolved.
    pub fn with_aliases(&self, aliases: BTreeMap<String, i64>) -> Self {
        KnowledgeBase {
            aliases,
            ..self.clone()
        }
    }
}

fn ordered_distinct<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for c in items {
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

fn resolve_guidance(
    g: &GuidanceRef,
    strategies: &[StrategySpec],
    aliases: &BTreeMap<String, i64>,
) -> Option<StrategyId> {
    match g {
        GuidanceRef::Id(n) => {
            let id = StrategyId::from_i64(*n)?;
            strategies.iter().any(|s| s.id == id).then_some(id)
        }
        GuidanceRef::Name(name) => {
            let key = normalize(name);
            if let Some(s) = strategies.iter().find(|s| normalize(&s.name) == key) {
                return Some(s.id);
            }
            let target = aliases
                .iter()
                .find(|(alias, _)| normalize(alias) == key)
                .map(|(_, target)| *target)?;
            let id = StrategyId::from_i64(target)?;
            strategies.iter().any(|s| s.id == id).then_some(id)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u8]) -> Vec<StrategyId> {
        v.iter().map(|&n| StrategyId::new(n).unwrap()).collect()
    }

    fn fixture_value() -> serde_json::Value {
        serde_json::from_str(FIXTURE_JSON).unwrap()
    }

    #[test]
    fn fixture_counts() {
        let kb = KnowledgeBase::fixture();
        assert_eq!(kb.stages().len(), 6);
        assert_eq!(kb.states().len(), 23);
        assert_eq!(kb.strategies().len(), 20);
        assert_eq!(kb.state_categories().len(), 8);
        assert_eq!(kb.strategy_categories().len(), 5);
    }

    #[test]
    fn empty_stream_is_parse_error() {
        let err = load_knowledge_base(&b""[..]).unwrap_err();
        assert!(matches!(err, KbError::Parse { .. }), "{err}");
    }

    #[test]
    fn malformed_document_reports_line() {
        let err = KnowledgeBase::from_json("{\n  \"stages\": [,]\n}").unwrap_err();
        match err {
            KbError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn out_of_range_reference_names_state() {
        let mut v = fixture_value();
        v["states"][4]["guidance"] = serde_json::json!([21]);
        let err = KnowledgeBase::from_json(&v.to_string()).unwrap_err();
        let KbError::Validation(list) = err else {
            panic!("expected validation error")
        };
        assert!(list.iter().any(|m| m.starts_with("state 5:")), "{list:?}");
    }

    #[test]
    fn validation_lists_every_violation() {
        let mut v = fixture_value();
        v["states"].as_array_mut().unwrap().remove(13);
        v["stages"][2]["completion_criteria"] = serde_json::json!([]);
        v["character_prompt"] = serde_json::json!("");
        let KbError::Validation(list) = KnowledgeBase::from_json(&v.to_string()).unwrap_err()
        else {
            panic!("expected validation error")
        };
        assert!(list.iter().any(|m| m == "state 14 missing"), "{list:?}");
        assert!(list
            .iter()
            .any(|m| m.contains("stage 3: completion_criteria")));
        assert!(list.iter().any(|m| m.contains("character_prompt")));
    }

    #[test]
    fn lack_of_confidence_mapping() {
        let kb = KnowledgeBase::fixture();
        let got = kb.strategies_for_state(StateId::Listed(19)).unwrap();
        assert_eq!(got, ids(&[18, 19, 6]).as_slice());
    }

    #[test]
    fn silent_mapping() {
        let kb = KnowledgeBase::fixture();
        assert_eq!(
            kb.strategies_for_state(StateId::SILENT).unwrap(),
            ids(&[1, 2]).as_slice()
        );
    }

    #[test]
    fn sentinels_are_unknown_states() {
        let kb = KnowledgeBase::fixture();
        assert!(matches!(
            kb.strategies_for_state(StateId::StageStart),
            Err(KbError::UnknownState(StateId::StageStart))
        ));
        assert!(kb.strategies_for_state(StateId::Quiet).is_err());
        assert!(kb.strategies_for_state(StateId::Listed(24)).is_err());
    }

    #[test]
    fn fixture_alias_table_resolves() {
        assert!(KnowledgeBase::fixture().validate_alias_table().is_empty());
    }

    #[test]
    fn unmapped_alias_is_reported() {
        let kb = KnowledgeBase::fixture();
        let mut aliases = kb.aliases().clone();
        aliases.remove("Role Guidance");
        let stripped = kb.with_aliases(aliases);
        assert_eq!(
            stripped.validate_alias_table(),
            vec!["Role Guidance".to_string()]
        );
    }

    #[test]
    fn restate_task_resolves_to_task_restatement() {
        let kb = KnowledgeBase::fixture();
        assert_eq!(kb.resolve_strategy_name("Restate Task"), StrategyId::new(2));
        assert_eq!(
            kb.strategy(StrategyId::new(2).unwrap()).name,
            "Task Restatement"
        );
    }

    #[test]
    fn conflicts_arising_collapses_duplicate_aliases() {
        let kb = KnowledgeBase::fixture();
        assert_eq!(
            kb.strategies_for_state(StateId::Listed(22)).unwrap(),
            ids(&[18, 20]).as_slice()
        );
    }

    #[test]
    fn unresolved_alias_fails_load() {
        let mut v = fixture_value();
        v["aliases"]
            .as_object_mut()
            .unwrap()
            .remove("Intergroup Encouragement");
        let KbError::Validation(list) = KnowledgeBase::from_json(&v.to_string()).unwrap_err()
        else {
            panic!()
        };
        assert!(list.iter().any(|m| m.contains("Intergroup Encouragement")));
    }

    #[test]
    fn state_ids_serialize_with_sentinels() {
        let v = serde_json::to_string(&[StateId::Listed(3), StateId::StageStart, StateId::Quiet])
            .unwrap();
        assert_eq!(v, r#"[3,"STAGE_START","QUIET"]"#);
        let back: Vec<StateId> = serde_json::from_str(&v).unwrap();
        assert_eq!(back[1], StateId::StageStart);
        assert!(serde_json::from_str::<StateId>("24").is_err());
    }

    #[test]
    fn stage_successor_is_terminal_at_six() {
        assert_eq!(StageId::new(5).unwrap().successor(), StageId::new(6));
        assert_eq!(StageId::LAST.successor(), None);
        assert!(StageId::new(0).is_none());
        assert!(StageId::new(7).is_none());
    }

    #[test]
    fn strategy_category_counts_follow_taxonomy() {
        let kb = KnowledgeBase::fixture();
        let counts: Vec<usize> = kb
            .strategy_categories()
            .iter()
            .map(|c| kb.strategies().iter().filter(|s| s.category == *c).count())
            .collect();
        assert_eq!(counts, vec![2, 5, 5, 5, 3]);
    }

    #[test]
    fn every_strategy_is_reachable() {
        let kb = KnowledgeBase::fixture();
        let reachable: BTreeSet<_> = kb
            .states()
            .iter()
            .flat_map(|s| s.strategy_ids.iter().copied())
            .collect();
        assert_eq!(reachable.len(), 20);
    }
}
