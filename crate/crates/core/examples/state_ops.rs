//! Operation labels for a hand-written booking dialogue in which the user
//! switches restaurants, then belief states rebuilt from those labels.
//!
//! `cargo run --example state_ops`

use dst_core::corpus::{dialogue_state_ops, replay_ops, BeliefState, Dialogue, Ontology, Turn};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ontology = Ontology::from_pairs(&[
        ("restaurant-pricerange", &["cheap", "moderate", "expensive"][..]),
        ("restaurant-name", &["royal spice", "da vinci pizzeria"][..]),
        ("restaurant-food", &["indian", "italian"][..]),
    ])?;
    let cheap = BeliefState::new().with("restaurant-pricerange", "cheap");
    let royal = cheap
        .clone()
        .with("restaurant-name", "royal spice")
        .with("restaurant-food", "indian");
    let da_vinci = cheap
        .clone()
        .with("restaurant-name", "da vinci pizzeria")
        .with("restaurant-food", "italian");
    let dialogue = Dialogue::new(
        "booking",
        vec![
            Turn::new("", "i want a cheap restaurant in the north", cheap),
            Turn::new(
                "there is royal spice serving indian food and da vinci pizzeria serving italian food",
                "royal spice sounds good , a table for 8 please",
                royal.clone(),
            ),
            Turn::new("i could not book that time", "how about 14:45 ?", royal),
            Turn::new(
                "the booking was unsuccessful",
                "tell me the address of da vinci pizzeria",
                da_vinci,
            ),
        ],
    );

    let ops = dialogue_state_ops(&ontology, &dialogue, false)?;
    for (t, turn_ops) in ops.iter().enumerate() {
        let line: Vec<String> = turn_ops.iter().map(|(s, op)| format!("{s}={}", op.name())).collect();
        println!("turn {}: {}", t + 1, line.join("  "));
    }

    let written: Vec<BeliefState> = dialogue.beliefs().cloned().collect();
    let replayed = replay_ops(&ops, &written);
    println!("\nreplay reproduces every belief state: {}", replayed == written);
    Ok(())
}
