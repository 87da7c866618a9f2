//! The distance-softmax value head on a hand-made candidate matrix.
//!
//! `cargo run --example value_head`

use dst_core::heads::slot_value_dist;
use dst_core::tensor::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let values = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]])?;
    for query in [[0.1, 0.0], [0.9, 0.1], [0.2, 1.5]] {
        let dist = slot_value_dist(&Tensor::vector(query.to_vec()), &values)?;
        let probs: Vec<String> = dist.probs.iter().map(|p| format!("{p:.3}")).collect();
        println!("query {query:?}: probs [{}], chosen {}", probs.join(", "), dist.chosen);
    }
    let shifted = Tensor::from_rows(&[vec![5.0, 5.0], vec![6.0, 5.0], vec![5.0, 7.0]])?;
    let a = slot_value_dist(&Tensor::vector(vec![0.9, 0.1]), &values)?;
    let b = slot_value_dist(&Tensor::vector(vec![5.9, 5.1]), &shifted)?;
    let drift = a
        .probs
        .iter()
        .zip(&b.probs)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    println!("shifting query and candidates together moves the probabilities by at most {drift:.1e}");
    Ok(())
}
