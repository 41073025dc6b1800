use mentigo::kb::{KbError, KnowledgeBase, FIXTURE_JSON};
use mentigo::{StageId, StateId};
use proptest::prelude::*;
use serde_json::Value;

fn fixture_doc() -> Value {
    serde_json::from_str(FIXTURE_JSON).unwrap()
}

fn load(doc: &Value) -> Result<KnowledgeBase, KbError> {
    KnowledgeBase::from_json(&doc.to_string())
}

#[test]
fn pretty_json_round_trips() {
    let kb = KnowledgeBase::fixture();
    let again = KnowledgeBase::from_json(&kb.to_json_pretty()).unwrap();
    assert_eq!(again, kb);
}

#[test]
fn from_path_matches_bundled() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../kb/fixture.json");
    assert_eq!(
        KnowledgeBase::from_path(path).unwrap(),
        KnowledgeBase::fixture()
    );
    assert!(matches!(
        KnowledgeBase::from_path("/nonexistent/kb.json"),
        Err(KbError::Io { .. })
    ));
}

#[test]
fn parse_errors_carry_position() {
    match KnowledgeBase::from_json("{\n  \"stages\": [,]\n}") {
        Err(KbError::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn every_state_maps_to_a_nonempty_list() {
    let kb = KnowledgeBase::fixture();
    for n in 1..=23 {
        let ids = kb
            .strategies_for_state(StateId::listed(n).unwrap())
            .unwrap();
        assert!(!ids.is_empty(), "state {n}");
    }
    assert!(matches!(
        kb.strategies_for_state(StateId::StageStart),
        Err(KbError::UnknownState(_))
    ));
}

#[test]
fn unresolved_alias_is_a_validation_error() {
    let mut doc = fixture_doc();
    doc["aliases"]
        .as_object_mut()
        .unwrap()
        .remove("Role Guidance");
    match load(&doc) {
        Err(KbError::Validation(v)) => {
            assert!(v.iter().any(|m| m.contains("Role Guidance")), "{v:?}")
        }
        other => panic!("expected validation failure, got {other:?}"),
    }
}

#[test]
fn stage_lookup_covers_all_six() {
    let kb = KnowledgeBase::fixture();
    let names: Vec<_> = StageId::all().map(|s| kb.stage(s).name.as_str()).collect();
    assert_eq!(names.len(), 6);
    assert_eq!(names[0], "Problem Discovery");
    assert_eq!(names[5], "Solution Implementation");
}

#[derive(Debug, Clone)]
enum Mutation {
    DropStage(usize),
    DropState(usize),
    DropStrategy(usize),
    DuplicateState(usize),
    StateIdOutOfRange(usize, i64),
    EmptyStageName(usize),
    UnknownGuidance(usize),
    StrategyIdOutOfRange(usize),
}

fn mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        (0..6usize).prop_map(Mutation::DropStage),
        (0..23usize).prop_map(Mutation::DropState),
        (0..20usize).prop_map(Mutation::DropStrategy),
        (0..23usize).prop_map(Mutation::DuplicateState),
        (0..23usize, prop_oneof![Just(0i64), 24..100i64, -50..0i64])
            .prop_map(|(i, id)| Mutation::StateIdOutOfRange(i, id)),
        (0..6usize).prop_map(Mutation::EmptyStageName),
        (0..23usize).prop_map(Mutation::UnknownGuidance),
        (0..23usize).prop_map(Mutation::StrategyIdOutOfRange),
    ]
}

fn apply(doc: &mut Value, m: &Mutation) {
    match *m {
        Mutation::DropStage(i) => {
            let v = doc["stages"].as_array_mut().unwrap();
            let n = v.len();
            v.remove(i % n);
        }
        Mutation::DropState(i) => {
            let v = doc["states"].as_array_mut().unwrap();
            let n = v.len();
            v.remove(i % n);
        }
        Mutation::DropStrategy(i) => {
            let v = doc["strategies"].as_array_mut().unwrap();
            let n = v.len();
            v.remove(i % n);
        }
        Mutation::DuplicateState(i) => {
            let states = doc["states"].as_array_mut().unwrap();
            let copy = states[i % states.len()].clone();
            states.push(copy);
        }
        Mutation::StateIdOutOfRange(i, id) => {
            let states = doc["states"].as_array_mut().unwrap();
            let n = states.len();
            states[i % n]["id"] = id.into();
        }
        Mutation::EmptyStageName(i) => {
            let stages = doc["stages"].as_array_mut().unwrap();
            let n = stages.len();
            stages[i % n]["name"] = "  ".into();
        }
        Mutation::UnknownGuidance(i) => {
            let states = doc["states"].as_array_mut().unwrap();
            let n = states.len();
            states[i % n]["guidance"]
                .as_array_mut()
                .unwrap()
                .push("Interpretive Dance".into());
        }
        Mutation::StrategyIdOutOfRange(i) => {
            let states = doc["states"].as_array_mut().unwrap();
            let n = states.len();
            states[i % n]["guidance"]
                .as_array_mut()
                .unwrap()
                .push(21.into());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn any_structural_damage_is_rejected(ms in proptest::collection::vec(mutation(), 1..4)) {
        let mut doc = fixture_doc();
        for m in &ms {
            apply(&mut doc, m);
        }
        let result = load(&doc);
        prop_assert!(
            matches!(result, Err(KbError::Validation(ref v)) if !v.is_empty()),
            "{ms:?} loaded: {:?}", result.map(|_| ())
        );
    }

    #[test]
    fn whitespace_and_key_order_do_not_matter(indent in 0usize..6, reverse in any::<bool>()) {
        let doc = fixture_doc();
        let mut obj: Vec<(String, Value)> = doc.as_object().unwrap().clone().into_iter().collect();
        if reverse {
            obj.reverse();
        }
        let pad = " ".repeat(indent);
        let body = obj
            .iter()
            .map(|(k, v)| format!("{pad}{}: {}", serde_json::to_string(k).unwrap(), v))
            .collect::<Vec<_>>()
            .join(",\n");
        let text = format!("{{\n{body}\n}}");
        prop_assert_eq!(KnowledgeBase::from_json(&text).unwrap(), KnowledgeBase::fixture());
    }
}
