mod common;

use std::collections::BTreeMap;

use dst_core::corpus::{
    demo_ontology, derive_state_ops, dialogue_state_ops, generate_corpus, load_corpus, repair_inheritance, replay_ops,
    save_corpus, split_words, BeliefState, CorpusError, CorpusFile, Dialogue, GenShape, Ontology, StateOp, Turn,
    Vocabulary, DONTCARE, NONE,
};
use proptest::prelude::*;

fn abc() -> Ontology {
    Ontology::from_pairs(&[
        ("a", &["x", "y", "z"][..]),
        ("b", &["x", "y"][..]),
        ("c", &["p", "q"][..]),
    ])
    .unwrap()
}

/// Random belief sequence over `abc()`, including dontcare and reversions
/// to none.
fn beliefs() -> impl Strategy<Value = Vec<BeliefState>> {
    let slot_value = |vals: &'static [&'static str]| prop::sample::select(vals.to_vec());
    let state = (
        slot_value(&["none", "dontcare", "x", "y", "z"]),
        slot_value(&["none", "dontcare", "x", "y"]),
        slot_value(&["none", "dontcare", "p", "q"]),
    )
        .prop_map(|(a, b, c)| {
            let mut s = BeliefState::new();
            s.set("a", a);
            s.set("b", b);
            s.set("c", c);
            s
        });
    prop::collection::vec(state, 1..8)
}

fn dialogue_of(states: &[BeliefState]) -> Dialogue {
    Dialogue::new("d", states.iter().map(|b| Turn::new("", "u", b.clone())).collect())
}

fn booking() -> (Ontology, Dialogue) {
    let o = Ontology::from_pairs(&[
        ("restaurant-pricerange", &["cheap", "expensive"][..]),
        ("restaurant-name", &["royal spice", "da vinci pizzeria"][..]),
        ("restaurant-food", &["indian", "italian"][..]),
    ])
    .unwrap();
    let cheap = BeliefState::new().with("restaurant-pricerange", "cheap");
    let royal = cheap
        .clone()
        .with("restaurant-name", "royal spice")
        .with("restaurant-food", "indian");
    let vinci = cheap
        .clone()
        .with("restaurant-name", "da vinci pizzeria")
        .with("restaurant-food", "italian");
    let d = Dialogue::new(
        "booking",
        vec![
            Turn::new("", "i want a cheap restaurant", cheap),
            Turn::new(
                "royal spice or da vinci pizzeria ?",
                "royal spice sounds good",
                royal.clone(),
            ),
            Turn::new("could not book", "how about 14:45 ?", royal),
            Turn::new("booking failed", "the address of da vinci pizzeria please", vinci),
        ],
    );
    (o, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ops_cover_every_slot_and_replay_to_the_beliefs(states in beliefs(), four in any::<bool>()) {
        let o = abc();
        let d = dialogue_of(&states);
        let ops = dialogue_state_ops(&o, &d, four).unwrap();
        for turn in &ops {
            prop_assert_eq!(turn.keys().map(String::as_str).collect::<Vec<_>>(), vec!["a", "b", "c"]);
            if !four {
                prop_assert!(turn.values().all(|&op| op != StateOp::Delete));
            }
        }
        prop_assert_eq!(replay_ops(&ops, &states), states);
    }

    #[test]
    fn derive_matches_case_table(prev in beliefs(), cur in beliefs(), four in any::<bool>()) {
        let o = abc();
        let (p, c) = (&prev[0], &cur[0]);
        let ops = derive_state_ops(&o, p, c, four).unwrap();
        for slot in ["a", "b", "c"] {
            let (pv, cv) = (p.get(slot), c.get(slot));
            let expected = if pv == cv {
                StateOp::Carryover
            } else if cv == DONTCARE {
                StateOp::Dontcare
            } else if cv == NONE && four {
                StateOp::Delete
            } else {
                StateOp::Update
            };
            prop_assert_eq!(ops[slot], expected);
        }
    }

    #[test]
    fn repair_is_idempotent(states in beliefs(), four in any::<bool>()) {
        let (once, _) = repair_inheritance(&dialogue_of(&states), four);
        let (twice, report) = repair_inheritance(&once, four);
        prop_assert_eq!(report.total_modified(), 0);
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn repaired_beliefs_never_drop_values(states in beliefs()) {
        let (r, _) = repair_inheritance(&dialogue_of(&states), false);
        for w in r.turns.windows(2) {
            for (slot, _) in w[0].belief.iter() {
                prop_assert_ne!(w[1].belief.get(slot), NONE);
            }
        }
    }

    #[test]
    fn injected_drops_are_all_recovered(seed in 0u64..500, picks in prop::collection::vec(any::<prop::sample::Index>(), 1..6)) {
        let o = demo_ontology();
        let clean = generate_corpus(&o, 1, seed, &GenShape::default()).unwrap().remove(0);
        let mut inherited = Vec::new();
        for t in 1..clean.turns.len() {
            for (slot, v) in clean.turns[t].belief.iter() {
                if clean.turns[t - 1].belief.get(slot) == v {
                    inherited.push((t, slot.to_string()));
                }
            }
        }
        prop_assume!(!inherited.is_empty());
        let mut chosen: Vec<_> = picks.iter().map(|i| i.get(&inherited).clone()).collect();
        chosen.sort();
        chosen.dedup();
        let mut damaged = clean.clone();
        for (t, slot) in &chosen {
            damaged.turns[*t].belief.set(slot.as_str(), NONE);
        }
        let (repaired, report) = repair_inheritance(&damaged, false);
        prop_assert_eq!(report.total_modified(), chosen.len());
        prop_assert_eq!(repaired, clean);
    }

    #[test]
    fn state_op_text_round_trips(i in 0usize..4) {
        let op = StateOp::from_index(i).unwrap();
        prop_assert_eq!(op.to_string().parse::<StateOp>().unwrap(), op);
        let json = serde_json::to_string(&op).unwrap();
        prop_assert_eq!(json.trim_matches('"'), op.name());
        prop_assert_eq!(op.name(), op.name().to_uppercase());
    }
}

#[test]
fn booking_dialogue_operations() {
    let (o, d) = booking();
    let ops = dialogue_state_ops(&o, &d, false).unwrap();
    let names = |t: usize| -> BTreeMap<&str, StateOp> { ops[t].iter().map(|(k, v)| (k.as_str(), *v)).collect() };
    assert_eq!(names(0)["restaurant-pricerange"], StateOp::Update);
    assert_eq!(names(0)["restaurant-food"], StateOp::Carryover);
    assert_eq!(names(1)["restaurant-food"], StateOp::Update);
    assert_eq!(names(1)["restaurant-name"], StateOp::Update);
    assert_eq!(names(1)["restaurant-pricerange"], StateOp::Carryover);
    assert!(names(2).values().all(|&op| op == StateOp::Carryover));
    assert_eq!(names(3)["restaurant-name"], StateOp::Update);
    assert_eq!(names(3)["restaurant-food"], StateOp::Update);
}

#[test]
fn food_first_assigned_is_update() {
    let (o, _) = booking();
    let ops = derive_state_ops(
        &o,
        &BeliefState::new(),
        &BeliefState::new().with("restaurant-food", "indian"),
        false,
    )
    .unwrap();
    assert_eq!(ops["restaurant-food"], StateOp::Update);
}

#[test]
fn unknown_value_names_slot_and_value() {
    let o = abc();
    let err = derive_state_ops(&o, &BeliefState::new(), &BeliefState::new().with("a", "w"), false).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("\"a\"") && msg.contains("\"w\""), "{msg}");
}

#[test]
fn constant_belief_is_all_carryover_after_first_turn() {
    let s = BeliefState::new().with("a", "x");
    let ops = dialogue_state_ops(&abc(), &dialogue_of(&[s.clone(), s.clone(), s]), false).unwrap();
    assert!(ops[1..].iter().all(|t| t.values().all(|&op| op == StateOp::Carryover)));
}

#[test]
fn repair_fixes_drop_before_change() {
    let states = [
        BeliefState::new().with("a", "x"),
        BeliefState::new(),
        BeliefState::new().with("a", "y"),
    ];
    let (r, report) = repair_inheritance(&dialogue_of(&states), false);
    let got: Vec<&str> = r.beliefs().map(|b| b.get("a")).collect();
    assert_eq!(got, ["x", "x", "y"]);
    assert_eq!(report.total_modified(), 1);
    let ops = dialogue_state_ops(&abc(), &r, false).unwrap();
    let a: Vec<StateOp> = ops.iter().map(|t| t["a"]).collect();
    assert_eq!(a, [StateOp::Update, StateOp::Carryover, StateOp::Update]);
}

#[test]
fn four_class_repair_keeps_annotated_delete() {
    let o = abc();
    let states = [BeliefState::new().with("a", "x"), BeliefState::new()];
    let annotated = dst_core::corpus::annotate_ops(&o, &dialogue_of(&states), true).unwrap();
    let (r, report) = repair_inheritance(&annotated, true);
    assert_eq!(report.total_modified(), 0);
    assert_eq!(r.turns[1].belief.get("a"), NONE);
}

#[test]
fn tokenizer_frames() {
    let v = Vocabulary::new(["hello", "ok"].map(String::from));
    let seq = v.tokenize_turn("", "hello", 64);
    assert_eq!(
        seq.ids,
        [
            Vocabulary::CLS_ID,
            Vocabulary::SEP_ID,
            v.id("hello"),
            Vocabulary::SEP_ID
        ]
    );
    let seq = v.tokenize_turn("ok", "ok", 64);
    assert_eq!(
        seq.ids,
        [
            Vocabulary::CLS_ID,
            v.id("ok"),
            Vocabulary::SEP_ID,
            v.id("ok"),
            Vocabulary::SEP_ID
        ]
    );
    assert_eq!(v.id("unseen"), Vocabulary::UNK_ID);
    assert_eq!(split_words("Hello, World!"), ["hello", ",", "world", "!"]);
}

#[test]
fn long_utterance_truncates_to_exact_length() {
    let v = Vocabulary::new(["w"].map(String::from));
    let user = vec!["w"; 200].join(" ");
    let seq = v.tokenize_turn("a short prompt", &user, 64);
    assert_eq!(seq.len(), 64);
    assert_eq!(seq.ids[0], Vocabulary::CLS_ID);
    assert_eq!(seq.ids.iter().filter(|&&i| i == Vocabulary::SEP_ID).count(), 2);
    assert_eq!(*seq.ids.last().unwrap(), Vocabulary::SEP_ID);
}

#[test]
fn ontology_sentinels_present_once() {
    let o = Ontology::from_pairs(&[("s", &["none", "v"][..])]).unwrap();
    let vals = o.values("s").unwrap();
    assert_eq!(vals.iter().filter(|v| *v == NONE).count(), 1);
    assert_eq!(vals.iter().filter(|v| *v == DONTCARE).count(), 1);
    assert!(Ontology::from_pairs(&[("s", &["v", "v"][..])]).is_err());
}

#[test]
fn generator_is_deterministic_and_consistent() {
    let o = demo_ontology();
    let a = generate_corpus(&o, 1, 7, &GenShape::default()).unwrap();
    let b = generate_corpus(&o, 1, 7, &GenShape::default()).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let many = generate_corpus(&o, 200, 3, &GenShape::default()).unwrap();
    for d in &many {
        assert!((2..=6).contains(&d.turns.len()));
        assert_eq!(repair_inheritance(d, false).1.total_modified(), 0);
    }
    assert!(matches!(
        generate_corpus(&o, 0, 1, &GenShape::default()),
        Err(CorpusError::InvalidArgument(_))
    ));
}

#[test]
fn generated_values_are_grounded_in_the_text() {
    let o = demo_ontology();
    let mut turns = 0;
    let mut seed = 0;
    while turns < 1000 {
        for d in generate_corpus(&o, 50, 100 + seed, &GenShape::default()).unwrap() {
            let mut said = String::new();
            for turn in &d.turns {
                said.push_str(&format!(" {} {} ", turn.system, turn.user));
                for (slot, value) in turn.belief.iter() {
                    assert!(said.contains(value), "{}: {slot}={value} never mentioned", d.id);
                }
                turns += 1;
            }
        }
        seed += 1;
    }
}

#[test]
fn corpus_file_round_trip_and_validation() {
    let o = demo_ontology();
    let corpus = CorpusFile::new(o.clone(), generate_corpus(&o, 20, 4, &GenShape::default()).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    save_corpus(&corpus, &path).unwrap();
    assert_eq!(load_corpus(&path).unwrap(), corpus);

    let text =
        r#"{"ontology": {"a": ["x"]}, "dialogues": [{"id": "d1", "turns": [{"user": "u", "belief": {"zz": "x"}}]}]}"#;
    let msg = CorpusFile::from_json(text).unwrap_err().to_string();
    assert!(msg.contains("zz"), "{msg}");

    let text =
        r#"{"ontology": {"a": ["x"]}, "dialogues": [{"id": "d1", "turns": [{"user": "u", "belief": {"a": "q"}}]}]}"#;
    let msg = CorpusFile::from_json(text).unwrap_err().to_string();
    assert!(msg.contains("\"a\"") && msg.contains("\"q\""), "{msg}");

    let text = r#"{"ontology": {"a": ["x"]}, "dialogues": [{"id": "d7", "turns": [{"user": "u"}, {"belief": {}}]}]}"#;
    let msg = CorpusFile::from_json(text).unwrap_err().to_string();
    assert!(msg.contains("d7") && msg.contains("turn 2"), "{msg}");

    let missing = load_corpus(dir.path().join("absent.json")).unwrap_err().to_string();
    assert!(missing.contains("absent.json"), "{missing}");
}
