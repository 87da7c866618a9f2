#![allow(dead_code)]

use dst_core::corpus::{demo_ontology, generate_corpus, CorpusFile, Dialogue, GenShape, Ontology, Vocabulary};
use dst_core::model::{DstModel, ModelConfig};
use dst_core::tensor::{Graph, Tensor, Var};
use dst_core::train::tiny_config;

pub const FD_STEP: f64 = 1e-5;

/// Fixed, non-uniform readout weights so that `sum(w ⊙ out)` exercises
/// every output entry differently.
pub fn readout(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product::<usize>().max(1);
    let data = (0..n).map(|i| 0.3 + ((i as f64) * 0.7 + 0.1).sin()).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Scalar loss `sum(w ⊙ f(inputs))` evaluated on a fresh graph.
pub fn scalar_loss(inputs: &[Tensor], f: &dyn Fn(&mut Graph, &[Var]) -> Var, track: bool) -> (Graph, Vec<Var>, Var) {
    let mut g = if track { Graph::new() } else { Graph::no_grad() };
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), track)).collect();
    let out = f(&mut g, &vars);
    let w = g.constant(readout(g.value(out).shape()));
    let prod = g.mul(out, w).unwrap();
    let loss = g.sum(prod);
    (g, vars, loss)
}

/// Largest `|analytic - numeric| / max(1, |analytic|, |numeric|)` over every
/// input entry, with central differences of step [`FD_STEP`].
pub fn gradient_error(inputs: &[Tensor], f: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let (mut g, vars, loss) = scalar_loss(inputs, f, true);
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (k, (input, grads)) in inputs.iter().zip(&analytic).enumerate() {
        for (i, &a) in grads.iter().enumerate().take(input.numel()) {
            let eval = |delta: f64| {
                let mut moved = inputs.to_vec();
                moved[k].data_mut()[i] += delta;
                let (g, _, loss) = scalar_loss(&moved, f, false);
                g.value(loss).item()
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max((a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs()));
        }
    }
    worst
}

pub fn small_corpus(count: usize, seed: u64) -> (Ontology, Vec<Dialogue>) {
    let ontology = demo_ontology();
    let dialogues = generate_corpus(&ontology, count, seed, &GenShape::default()).unwrap();
    (ontology, dialogues)
}

/// Tiny model over the demo ontology and a generated corpus.
pub fn tiny_model(config: ModelConfig, corpus: &[Dialogue], ontology: &Ontology, seed: u64) -> DstModel {
    let vocab = Vocabulary::build(ontology, corpus);
    DstModel::new(config, ontology.clone(), vocab, seed).unwrap()
}

pub fn tiny_model_for(file: &CorpusFile, seed: u64) -> DstModel {
    tiny_model(tiny_config(), &file.dialogues, &file.ontology, seed)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
