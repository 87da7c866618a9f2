mod common;

use std::collections::BTreeMap;

use common::max_abs_diff;
use dst_core::corpus::{BeliefState, Ontology, StateOp, DONTCARE, NONE};
use dst_core::heads::{
    argmax, decode_state, joint_loss, slot_value_dist, softmax, DecodeMode, LossTerm, OpDecoder, OpDecoderState,
    OpDistribution, SlotValueDistribution,
};
use dst_core::model::LossMode;
use dst_core::tensor::{Graph, ParamStore, Tensor};
use dst_core::train::tiny_corpus;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const D: usize = 6;

fn row(v: &[f64]) -> Tensor {
    Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
}

fn matrix(rows: &[Vec<f64>]) -> Tensor {
    Tensor::new(vec![rows.len(), rows[0].len()], rows.concat()).unwrap()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn exact_match_dominates() {
    let d = vec![0.3, -1.2, 0.7];
    let far: Vec<Vec<f64>> = (1..5).map(|k| d.iter().map(|x| x + 6.0 * k as f64).collect()).collect();
    let mut values = vec![d.clone()];
    values.extend(far);
    let dist = slot_value_dist(&row(&d), &matrix(&values)).unwrap();
    assert_eq!(dist.chosen, 0);
    assert!(dist.probs[0] > 0.9999, "{:?}", dist.probs);
}

#[test]
fn equidistant_candidates_split_evenly() {
    let dist = slot_value_dist(&row(&[0.0, 0.0]), &matrix(&[vec![1.0, 2.0], vec![-2.0, 1.0]])).unwrap();
    assert!((dist.probs[0] - 0.5).abs() < 1e-15 && (dist.probs[1] - 0.5).abs() < 1e-15);
}

#[test]
fn distances_one_and_two() {
    let dist = slot_value_dist(
        &row(&[0.0, 0.0, 0.0]),
        &matrix(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, -2.0]]),
    )
    .unwrap();
    let z = (-1f64).exp() + (-2f64).exp();
    let expected = [(-1f64).exp() / z, (-2f64).exp() / z];
    assert!(max_abs_diff(&dist.probs, &expected) < 1e-12, "{:?}", dist.probs);
    assert!((dist.probs[0] - 0.7311).abs() < 1e-4);
    assert!((dist.loss(1) + expected[1].ln()).abs() < 1e-12);
}

#[test]
fn two_query_rows_are_rejected() {
    assert!(slot_value_dist(&Tensor::zeros(&[2, 2]), &Tensor::zeros(&[3, 2])).is_err());
}

fn draw(rng: &mut impl Rng) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let k = rng.gen_range(2..12);
    let d: Vec<f64> = (0..D).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let values = (0..k)
        .map(|_| (0..D).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let shift = (0..D).map(|_| rng.gen_range(-5.0..5.0)).collect();
    (d, values, shift)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn value_head_is_translation_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, values, shift) = draw(&mut rng);
        let moved_d: Vec<f64> = d.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let moved: Vec<Vec<f64>> = values.iter().map(|v| v.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
        let a = slot_value_dist(&row(&d), &matrix(&values)).unwrap();
        let b = slot_value_dist(&row(&moved_d), &matrix(&moved)).unwrap();
        prop_assert!(max_abs_diff(&a.probs, &b.probs) < 1e-9);
    }

    #[test]
    fn value_head_picks_the_nearest_candidate(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, values, _) = draw(&mut rng);
        let dist = slot_value_dist(&row(&d), &matrix(&values)).unwrap();
        let distances: Vec<f64> = values.iter().map(|v| euclid(&d, v)).collect();
        let mut sorted = distances.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted[1] - sorted[0] > 1e-9);
        let nearest = distances.iter().position(|&x| x == sorted[0]).unwrap();
        prop_assert_eq!(dist.chosen, nearest);
        prop_assert!((dist.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(dist.probs.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn joint_is_the_exact_sum(values in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0), 1..12)) {
        let sv: Vec<LossTerm> = values.iter().enumerate().map(|(i, v)| term(i, "a", v.0)).collect();
        let sop: Vec<LossTerm> = values.iter().enumerate().map(|(i, v)| term(i, "a", v.1)).collect();
        let r = joint_loss(&sv, &sop).unwrap();
        prop_assert_eq!(r.l_joint, r.l_sv + r.l_sop);
        prop_assert!(r.l_sv >= 0.0 && r.l_sop >= 0.0);
    }
}

fn decoder(seed: u64) -> (ParamStore, OpDecoder) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dec = OpDecoder::new(&mut store, "dec", D, 3, &mut rng);
    (store, dec)
}

fn random_row(rng: &mut impl Rng) -> Tensor {
    row(&(0..D).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
}

#[test]
fn zeroed_decoder_gives_uniform_ops() {
    let (mut store, dec) = decoder(1);
    for id in store.trainable_ids() {
        let shape = store.get(id).value.shape().to_vec();
        store.set_value(id, Tensor::zeros(&shape)).unwrap();
    }
    let (dist, next) = dec
        .decode_step(&store, &Tensor::zeros(&[1, D]), &OpDecoderState::zero(D))
        .unwrap();
    assert!(next.hidden.data().iter().all(|&h| h == 0.0));
    assert!(dist.probs.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn decoder_output_depends_on_hidden_state() {
    for seed in 0..5 {
        let (store, dec) = decoder(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let x = random_row(&mut rng);
        let h1 = OpDecoderState {
            hidden: random_row(&mut rng),
        };
        let h2 = OpDecoderState {
            hidden: random_row(&mut rng),
        };
        let (a, _) = dec.decode_step(&store, &x, &h1).unwrap();
        let (b, _) = dec.decode_step(&store, &x, &h2).unwrap();
        assert!(max_abs_diff(&a.probs, &b.probs) > 0.0);
        assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn decoder_streams_replay_bitwise() {
    let (store, dec) = decoder(7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs: Vec<Tensor> = (0..5).map(|_| random_row(&mut rng)).collect();
    let mut state = OpDecoderState::zero(D);
    let mut record = Vec::new();
    for x in &inputs {
        let (dist, next) = dec.decode_step(&store, x, &state).unwrap();
        record.push((x.clone(), state.clone(), dist, next.clone()));
        state = next;
    }
    for (x, before, dist, after) in record.iter().rev() {
        let (d2, a2) = dec.decode_step(&store, x, before).unwrap();
        assert_eq!(&d2, dist);
        assert_eq!(&a2, after);
    }

    let mut g = Graph::no_grad();
    let stacked = g.constant(Tensor::new(vec![5, D], inputs.iter().flat_map(|t| t.data().to_vec()).collect()).unwrap());
    let logits = dec.run(&mut g, &store, stacked).unwrap();
    for (t, (_, _, dist, _)) in record.iter().enumerate() {
        assert_eq!(softmax(g.value(logits).row(t)), dist.probs);
    }
}

#[test]
fn projection_gradient_matches_finite_differences() {
    let (mut store, dec) = decoder(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, h) = (random_row(&mut rng), random_row(&mut rng));
    let gold = [2usize];
    let loss_of = |store: &ParamStore, track: bool| {
        let mut g = if track { Graph::new() } else { Graph::no_grad() };
        let (xv, hv) = (g.constant(x.clone()), g.constant(h.clone()));
        let (logits, _) = dec.step(&mut g, store, xv, hv).unwrap();
        let loss = g.cross_entropy(logits, &gold).unwrap();
        (g, loss)
    };
    store.zero_grad();
    let (mut g, loss) = loss_of(&store, true);
    g.backward(loss).unwrap();
    g.flush_param_grads(&mut store);
    let w = dec.projection.weight;
    let analytic = store.get(w).grad.clone();
    let base = store.get(w).value.clone();
    let step = 1e-5;
    for (i, &a) in analytic.iter().enumerate() {
        let mut eval = |delta: f64| {
            let mut moved = base.clone();
            moved.data_mut()[i] += delta;
            store.set_value(w, moved).unwrap();
            let (g, loss) = loss_of(&store, false);
            g.value(loss).item()
        };
        let numeric = (eval(step) - eval(-step)) / (2.0 * step);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        assert!(rel < 1e-4, "entry {i}: analytic {a} numeric {numeric}");
    }
}

fn term(turn: usize, slot: &str, value: f64) -> LossTerm {
    LossTerm {
        dialogue: 0,
        turn,
        slot: slot.into(),
        value,
    }
}

#[test]
fn joint_loss_examples() {
    let r = joint_loss(&[term(0, "a", 2.0)], &[term(0, "a", 0.5)]).unwrap();
    assert_eq!((r.l_sv, r.l_sop, r.l_joint), (2.0, 0.5, 2.5));
    assert_eq!(r.per_slot["a"].l_sv, 2.0);

    let certain = SlotValueDistribution::from_logits(&[0.0, -1e4, -1e4]);
    let sure_op = OpDistribution::from_logits(&[-1e4, 1e-3, -1e4]);
    let sv = term(0, "a", certain.loss(0));
    let sop = term(0, "a", -sure_op.probs[1].ln());
    assert_eq!(joint_loss(std::slice::from_ref(&sv), &[sop]).unwrap().l_joint, 0.0);

    let uniform = OpDistribution::from_logits(&[0.0; 3]);
    let r = joint_loss(std::slice::from_ref(&sv), &[term(0, "a", -uniform.probs[0].ln())]).unwrap();
    assert!((r.l_sop - 3f64.ln()).abs() < 1e-12);
    assert!((r.l_sop - 1.0986).abs() < 1e-4);

    assert!(joint_loss(std::slice::from_ref(&sv), &[term(1, "a", 0.1)]).is_err());
    assert!(joint_loss(&[sv.clone(), term(1, "a", 0.0)], &[term(0, "a", 0.1)]).is_err());
    assert_eq!(joint_loss(&[sv], &[]).unwrap().l_sop, 0.0);
}

fn onehot(len: usize, hot: usize) -> Vec<f64> {
    (0..len).map(|i| if i == hot { 10.0 } else { 0.0 }).collect()
}

fn booking_ontology() -> Ontology {
    Ontology::from_pairs(&[("food", &["indian", "thai"][..]), ("area", &["north", "south"][..])]).unwrap()
}

#[test]
fn decode_state_case_table() {
    let ontology = booking_ontology();
    let food_values = ontology.values("food").unwrap().to_vec();
    let area_values = ontology.values("area").unwrap().to_vec();
    for prev_food in &food_values {
        let prev = BeliefState::new().with("food", prev_food).with("area", "north");
        for (k, value) in food_values.iter().enumerate() {
            for op_index in 0..StateOp::num_classes(true) {
                let op = StateOp::from_index(op_index).unwrap();
                let north = area_values.iter().position(|v| v == "north").unwrap();
                let sv = BTreeMap::from([
                    (
                        "food".to_string(),
                        SlotValueDistribution::from_logits(&onehot(food_values.len(), k)),
                    ),
                    (
                        "area".to_string(),
                        SlotValueDistribution::from_logits(&onehot(area_values.len(), north)),
                    ),
                ]);
                let ops = BTreeMap::from([
                    ("food".to_string(), OpDistribution::from_logits(&onehot(4, op_index))),
                    (
                        "area".to_string(),
                        OpDistribution::from_logits(&onehot(4, StateOp::Carryover.index())),
                    ),
                ]);
                let direct = decode_state(&ontology, &sv, &ops, &prev, DecodeMode::Direct).unwrap();
                assert_eq!(direct.get("food"), value.as_str());
                let gated = decode_state(&ontology, &sv, &ops, &prev, DecodeMode::OpGated).unwrap();
                let expected = match op {
                    StateOp::Carryover => prev_food.as_str(),
                    StateOp::Dontcare => DONTCARE,
                    StateOp::Delete => NONE,
                    StateOp::Update => value.as_str(),
                };
                assert_eq!(gated.get("food"), expected, "prev {prev_food} op {op:?} argmax {value}");
                assert_eq!(gated.get("area"), "north");
                if op == StateOp::Update && value == prev_food {
                    assert_eq!(gated, prev);
                }
            }
        }
    }
}

#[test]
fn all_carryover_returns_previous_state() {
    let ontology = booking_ontology();
    let prev = BeliefState::new().with("food", "thai").with("area", DONTCARE);
    let mut sv = BTreeMap::new();
    let mut ops = BTreeMap::new();
    for slot in ontology.slots() {
        let n = ontology.values(slot).unwrap().len();
        sv.insert(slot.to_string(), SlotValueDistribution::from_logits(&onehot(n, n - 1)));
        ops.insert(
            slot.to_string(),
            OpDistribution::from_logits(&onehot(3, StateOp::Carryover.index())),
        );
    }
    assert_eq!(
        decode_state(&ontology, &sv, &ops, &prev, DecodeMode::OpGated).unwrap(),
        prev
    );
    ops.clear();
    assert!(decode_state(&ontology, &sv, &ops, &prev, DecodeMode::OpGated).is_err());
    assert!(decode_state(&ontology, &sv, &ops, &prev, DecodeMode::Direct).is_ok());
}

#[test]
fn peaked_distribution_writes_its_value() {
    let ontology = booking_ontology();
    let food = ontology.values("food").unwrap();
    let indian = food.iter().position(|v| v == "indian").unwrap();
    let sv = BTreeMap::from([
        (
            "food".to_string(),
            SlotValueDistribution::from_logits(&onehot(food.len(), indian)),
        ),
        ("area".to_string(), SlotValueDistribution::from_logits(&onehot(4, 0))),
    ]);
    let out = decode_state(
        &ontology,
        &sv,
        &BTreeMap::new(),
        &BeliefState::new(),
        DecodeMode::Direct,
    )
    .unwrap();
    assert_eq!(out.get("food"), "indian");
    assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
}

#[test]
fn small_gradient_step_lowers_the_joint_loss() {
    for seed in 0..5 {
        let corpus = tiny_corpus(seed);
        let mut model = common::tiny_model_for(&corpus, seed);
        let enc = model.encode_dialogue(&corpus.dialogues[0]).unwrap();
        let value = |m: &dst_core::model::DstModel| {
            let mut g = Graph::no_grad();
            let l = m.loss(&mut g, &enc, LossMode::Joint, 0).unwrap();
            g.value(l.total).item()
        };
        let before = value(&model);
        model.store.zero_grad();
        let mut g = Graph::new();
        let l = model.loss(&mut g, &enc, LossMode::Joint, 0).unwrap();
        g.backward(l.total).unwrap();
        g.flush_param_grads(&mut model.store);
        for id in model.store.trainable_ids() {
            let p = model.store.get_mut(id);
            let grad = p.grad.clone();
            p.value
                .data_mut()
                .iter_mut()
                .zip(grad)
                .for_each(|(x, g)| *x -= 1e-4 * g);
        }
        let after = value(&model);
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}
