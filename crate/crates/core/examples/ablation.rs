//! Joint training against value-only training over several seeds, scored
//! on a held-out corpus.
//!
//! `cargo run --release --example ablation -- [seeds] [epochs] [train] [held_out]`

use dst_core::corpus::{demo_ontology, generate_corpus, GenShape};
use dst_core::model::ModelConfig;
use dst_core::train::{run_ablation, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let seeds: Vec<u64> = (0..args.first().copied().unwrap_or(3) as u64).collect();
    let epochs = args.get(1).copied().unwrap_or(10);
    let n_train = args.get(2).copied().unwrap_or(100);
    let n_held = args.get(3).copied().unwrap_or(50);

    let ontology = demo_ontology();
    let train_set = generate_corpus(&ontology, n_train, 1, &GenShape::default())?;
    let held_out = generate_corpus(&ontology, n_held, 2, &GenShape::default())?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let table = run_ablation(
        &ontology,
        &train_set,
        &held_out,
        &ModelConfig::default(),
        &cfg,
        &seeds,
        |r| {
            println!(
                "{:<8} seed {}: held-out joint accuracy {:.4}",
                r.variant, r.seed, r.joint_accuracy
            )
        },
    )?;
    println!("\n{}", table.render());
    print!("{}", table.to_csv());
    Ok(())
}
