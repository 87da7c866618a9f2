//! Trains briefly, saves a checkpoint directory, reloads it and checks the
//! reloaded model predicts exactly as the original.
//!
//! `cargo run --release --example checkpoint`

use dst_core::checkpoint::{load_checkpoint, load_manifest, save_checkpoint};
use dst_core::corpus::{demo_ontology, generate_corpus, GenShape, Vocabulary};
use dst_core::heads::DecodeMode;
use dst_core::model::{DstModel, ModelConfig};
use dst_core::train::{evaluate_dialogues, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ontology = demo_ontology();
    let data = generate_corpus(&ontology, 40, 3, &GenShape::default())?;
    let vocab = Vocabulary::build(&ontology, &data);
    let mut model = DstModel::new(ModelConfig::default(), ontology, vocab, 11)?;
    let cfg = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    train(&mut model, &data, &cfg, |e| {
        println!("epoch {} l_joint {:.3}", e.epoch, e.l_joint)
    })?;

    let dir = std::env::temp_dir().join("dstc-checkpoint-example");
    save_checkpoint(&model, &dir)?;
    let manifest = load_manifest(&dir)?;
    println!(
        "saved {} tensors to {} (catalog {}...)",
        manifest.tensors.len(),
        dir.display(),
        &manifest.catalog_fingerprint[..12]
    );
    let back = load_checkpoint(&dir)?;
    let same = data
        .iter()
        .all(|d| model.predict(d, DecodeMode::Direct).ok() == back.predict(d, DecodeMode::Direct).ok());
    println!("reloaded model predicts identically: {same}");
    let m = evaluate_dialogues(&back, &data, DecodeMode::Direct)?;
    println!("train joint accuracy after 10 epochs: {:.3}", m.joint_accuracy);
    Ok(())
}
