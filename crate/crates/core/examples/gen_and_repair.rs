//! Generates a corpus, knocks out some inherited values and lets the
//! repair procedure restore them.
//!
//! `cargo run --example gen_and_repair -- [dialogues] [seed]`

use dst_core::corpus::{demo_ontology, generate_corpus, repair_corpus, GenShape, NONE};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(100);
    let seed: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(7);

    let ontology = demo_ontology();
    let clean = generate_corpus(&ontology, count, seed, &GenShape::default())?;
    let first = &clean[0];
    println!("dialogue {}:", first.id);
    for (t, turn) in first.turns.iter().enumerate() {
        println!("  [{}] sys: {}", t + 1, turn.system);
        println!("      usr: {}", turn.user);
        let state: Vec<String> = turn.belief.iter().map(|(s, v)| format!("{s}={v}")).collect();
        println!("      state: {}", state.join("; "));
    }

    let (_, report) = repair_corpus(&ontology, &clean, false);
    println!("\nclean corpus: {} values restored", report.total_modified());

    // Every (dialogue, turn, slot) whose value was simply inherited.
    let mut inherited = Vec::new();
    for (d, dialogue) in clean.iter().enumerate() {
        for t in 1..dialogue.turns.len() {
            for (slot, value) in dialogue.turns[t].belief.iter() {
                if dialogue.turns[t - 1].belief.get(slot) == value {
                    inherited.push((d, t, slot.to_string()));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drops: Vec<_> = inherited.choose_multiple(&mut rng, 25).cloned().collect();
    let mut damaged = clean.clone();
    for (d, t, slot) in &drops {
        damaged[*d].turns[*t].belief.set(slot.as_str(), NONE);
    }

    let (repaired, report) = repair_corpus(&ontology, &damaged, false);
    println!(
        "dropped {} inherited values, repair restored {}",
        drops.len(),
        report.total_modified()
    );
    println!("repaired corpus equals the original: {}", repaired == clean);
    for (slot, r) in &report.slots {
        println!("  {slot:<20} {:>3} of {} assignments restored", r.modified, r.total);
    }
    Ok(())
}
