use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BeliefState, CorpusError, Dialogue, Ontology, Result, Turn, DONTCARE};

/// Bounds for synthetic dialogues.
#[derive(Clone, Debug, PartialEq)]
pub struct GenShape {
    pub min_turns: usize,
    pub max_turns: usize,
    /// Chance that the user sets a given slot in a given turn.
    pub mention_prob: f64,
    /// Chance that a mention is "dontcare" rather than a value.
    pub dontcare_prob: f64,
    /// Chance that the system utterance offers two candidate values.
    pub distractor_prob: f64,
}

impl Default for GenShape {
    fn default() -> Self {
        Self {
            min_turns: 2,
            max_turns: 6,
            mention_prob: 0.65,
            dontcare_prob: 0.1,
            distractor_prob: 0.5,
        }
    }
}

const VALUE_TEMPLATES: [&str; 4] = [
    "i want {v} for the {n}",
    "the {n} should be {v}",
    "{v} for the {n} please",
    "let us go with {v} for the {n}",
];
const DONTCARE_TEMPLATES: [&str; 2] = ["i dontcare about the {n}", "any {n} is fine , dontcare about the {n}"];
const OFFER_TEMPLATES: [&str; 2] = [
    "i can offer {a} or {b} for the {n}",
    "there is {a} and also {b} for the {n}",
];
const SYSTEM_FILLERS: [&str; 3] = ["anything else ?", "ok , noted .", "how else can i help ?"];
const USER_FILLERS: [&str; 3] = ["thanks , that is all", "yes please", "can you tell me more ?"];

/// Spoken form of a slot: the part after the domain prefix.
fn slot_noun(slot: &str) -> String {
    slot.split_once('-')
        .map(|(_, rest)| rest)
        .unwrap_or(slot)
        .replace('-', " ")
}

fn fill(template: &str, pairs: &[(&str, &str)]) -> String {
    pairs.iter().fold(template.to_string(), |acc, (k, v)| acc.replace(k, v))
}

/// Template dialogues over `ontology`. Every belief value is spoken by the
/// user at or before the turn it first holds, the system may offer
/// distractor values, and belief states carry over unchanged between
/// mentions. Output depends only on the arguments.
pub fn generate_corpus(ontology: &Ontology, count: usize, seed: u64, shape: &GenShape) -> Result<Vec<Dialogue>> {
    if count == 0 {
        return Err(CorpusError::InvalidArgument("count must be at least 1".into()));
    }
    if shape.min_turns == 0 || shape.min_turns > shape.max_turns {
        return Err(CorpusError::InvalidArgument(format!(
            "turn bounds {}..{} are invalid",
            shape.min_turns, shape.max_turns
        )));
    }
    let slots: Vec<&str> = ontology.slots().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|i| generate_dialogue(ontology, &slots, format!("syn-{seed}-{i:05}"), shape, &mut rng))
        .collect())
}

fn generate_dialogue(
    ontology: &Ontology,
    slots: &[&str],
    id: String,
    shape: &GenShape,
    rng: &mut ChaCha8Rng,
) -> Dialogue {
    let n_turns = rng.gen_range(shape.min_turns..=shape.max_turns);
    let mut belief = BeliefState::new();
    let mut turns = Vec::with_capacity(n_turns);
    for t in 0..n_turns {
        let mut mentions: Vec<(&str, String)> = Vec::new();
        for &slot in slots {
            if rng.gen_bool(shape.mention_prob) {
                if let Some(v) = pick_value(ontology, slot, belief.get(slot), shape, rng) {
                    mentions.push((slot, v));
                }
            }
        }
        if t == 0 && mentions.is_empty() {
            let slot = *slots.choose(rng).expect("ontology has slots");
            if let Some(v) = pick_value(ontology, slot, belief.get(slot), shape, rng) {
                mentions.push((slot, v));
            }
        }

        let system = if t == 0 {
            String::new()
        } else if rng.gen_bool(shape.distractor_prob) {
            offer(ontology, slots, &mentions, rng).unwrap_or_else(|| SYSTEM_FILLERS.choose(rng).unwrap().to_string())
        } else {
            SYSTEM_FILLERS.choose(rng).unwrap().to_string()
        };

        let user = if mentions.is_empty() {
            USER_FILLERS.choose(rng).unwrap().to_string()
        } else {
            mentions
                .iter()
                .map(|(slot, v)| {
                    let n = slot_noun(slot);
                    if v == DONTCARE {
                        fill(DONTCARE_TEMPLATES.choose(rng).unwrap(), &[("{n}", &n)])
                    } else {
                        fill(VALUE_TEMPLATES.choose(rng).unwrap(), &[("{v}", v), ("{n}", &n)])
                    }
                })
                .collect::<Vec<_>>()
                .join(" and ")
        };

        for (slot, v) in &mentions {
            belief.set(*slot, v.as_str());
        }
        turns.push(Turn::new(system, user, belief.clone()));
    }
    Dialogue::new(id, turns)
}

fn pick_value(
    ontology: &Ontology,
    slot: &str,
    current: &str,
    shape: &GenShape,
    rng: &mut ChaCha8Rng,
) -> Option<String> {
    let real: Vec<&str> = ontology
        .real_values(slot)
        .into_iter()
        .filter(|v| *v != current)
        .collect();
    if (real.is_empty() || rng.gen_bool(shape.dontcare_prob)) && current != DONTCARE {
        return Some(DONTCARE.to_string());
    }
    real.choose(rng).map(|v| v.to_string())
}

/// System offer of two values for one slot. If the user sets that slot in
/// this turn, the chosen value is one of the two offered.
fn offer(ontology: &Ontology, slots: &[&str], mentions: &[(&str, String)], rng: &mut ChaCha8Rng) -> Option<String> {
    let slot = *slots.choose(rng)?;
    let real = ontology.real_values(slot);
    if real.len() < 2 {
        return None;
    }
    let chosen = mentions
        .iter()
        .find(|(s, v)| *s == slot && v != DONTCARE)
        .map(|(_, v)| v.as_str());
    let (a, b) = match chosen {
        Some(c) => {
            let other: &str = real.iter().filter(|v| **v != c).collect::<Vec<_>>().choose(rng)?;
            if rng.gen_bool(0.5) {
                (c, other)
            } else {
                (other, c)
            }
        }
        None => {
            let pair: Vec<&&str> = real.choose_multiple(rng, 2).collect();
            (*pair[0], *pair[1])
        }
    };
    let n = slot_noun(slot);
    Some(fill(
        OFFER_TEMPLATES.choose(rng).unwrap(),
        &[("{a}", a), ("{b}", b), ("{n}", &n)],
    ))
}

/// Three-slot restaurant ontology with ten values per slot.
pub fn demo_ontology() -> Ontology {
    Ontology::from_pairs(&[
        (
            "restaurant-area",
            &[
                "centre",
                "north",
                "south",
                "east",
                "west",
                "riverside",
                "harbour",
                "airport",
                "downtown",
                "university",
            ][..],
        ),
        (
            "restaurant-food",
            &[
                "indian", "italian", "chinese", "thai", "french", "korean", "mexican", "spanish", "greek", "turkish",
            ][..],
        ),
        (
            "restaurant-name",
            &[
                "royal spice",
                "da vinci pizzeria",
                "golden curry",
                "pizza hut",
                "sitar tandoori",
                "curry garden",
                "rice house",
                "bedouin",
                "nandos",
                "cote",
            ][..],
        ),
    ])
    .expect("static ontology is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::repair_inheritance;

    #[test]
    fn deterministic_per_seed() {
        let o = demo_ontology();
        let a = generate_corpus(&o, 1, 7, &GenShape::default()).unwrap();
        let b = generate_corpus(&o, 1, 7, &GenShape::default()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = generate_corpus(&o, 1, 8, &GenShape::default()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_count_rejected() {
        assert!(generate_corpus(&demo_ontology(), 0, 1, &GenShape::default()).is_err());
    }

    #[test]
    fn turn_bounds_respected() {
        let shape = GenShape::default();
        for d in generate_corpus(&demo_ontology(), 50, 3, &shape).unwrap() {
            assert!((shape.min_turns..=shape.max_turns).contains(&d.turns.len()));
            assert!(d.turns[0].system.is_empty());
        }
    }

    #[test]
    fn generated_dialogues_need_no_repair() {
        let o = demo_ontology();
        for d in generate_corpus(&o, 100, 11, &GenShape::default()).unwrap() {
            d.validate(&o).unwrap();
            let (_, report) = repair_inheritance(&d, false);
            assert_eq!(report.total_modified(), 0);
        }
    }

    #[test]
    fn noun_strips_domain() {
        assert_eq!(slot_noun("restaurant-food"), "food");
        assert_eq!(slot_noun("restaurant-book-time"), "book time");
        assert_eq!(slot_noun("area"), "area");
    }
}
