//! Trains the default model on a generated corpus and reports train and
//! held-out accuracy as it goes.
//!
//! `cargo run --release --example train_synthetic -- [epochs] [train] [held_out]`

use std::time::Instant;

use dst_core::corpus::{demo_ontology, generate_corpus, GenShape, Vocabulary};
use dst_core::heads::DecodeMode;
use dst_core::model::{DstModel, ModelConfig};
use dst_core::train::{evaluate_dialogues, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let epochs = args.first().copied().unwrap_or(30);
    let n_train = args.get(1).copied().unwrap_or(200);
    let n_held = args.get(2).copied().unwrap_or(50);

    let ontology = demo_ontology();
    let shape = GenShape::default();
    let train_set = generate_corpus(&ontology, n_train, 1, &shape)?;
    let held_out = generate_corpus(&ontology, n_held, 2, &shape)?;
    let vocab = Vocabulary::build(&ontology, &train_set);
    println!("vocabulary: {} tokens", vocab.len());

    let mut model = DstModel::new(ModelConfig::default(), ontology, vocab, 0)?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let curve = train(&mut model, &train_set, &cfg, |e| {
        println!(
            "epoch {:>3}  l_sv {:.4}  l_sop {:.4}  l_joint {:.4}  ({:.0?})",
            e.epoch,
            e.l_sv,
            e.l_sop,
            e.l_joint,
            start.elapsed()
        );
    })?;
    let train_m = evaluate_dialogues(&model, &train_set, DecodeMode::Direct)?;
    let held_m = evaluate_dialogues(&model, &held_out, DecodeMode::Direct)?;
    println!(
        "after {} epochs: train joint {:.3} slot {:.3} | held-out joint {:.3} slot {:.3} f1 {:.3}",
        curve.len(),
        train_m.joint_accuracy,
        train_m.slot_accuracy,
        held_m.joint_accuracy,
        held_m.slot_accuracy,
        held_m.f1
    );
    Ok(())
}
