mod common;

use common::{small_corpus, tiny_model};
use dst_core::corpus::{Ontology, TokenSequence, Vocabulary};
use dst_core::encoders::{
    encode_catalog, positional_encoding, positional_table, EncoderConfig, PositionMode, TurnEncoder,
};
use dst_core::model::{LossMode, ModelConfig};
use dst_core::tensor::{Graph, ParamStore, Role, Tensor};
use dst_core::train::{tiny_config, train, TrainConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn encoder(layers: usize, positions: PositionMode, vocab: usize, seed: u64) -> (ParamStore, TurnEncoder) {
    let cfg = EncoderConfig {
        d_model: 8,
        heads: 2,
        layers,
        ff_dim: 16,
        max_turn_tokens: 16,
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = TurnEncoder::new(&mut store, "enc", &cfg, vocab, positions, Role::Trainable, &mut rng);
    (store, enc)
}

fn sequence(user: &[usize]) -> TokenSequence {
    let mut ids = vec![Vocabulary::CLS_ID, Vocabulary::SEP_ID];
    ids.extend(user);
    ids.push(Vocabulary::SEP_ID);
    let segments = (0..ids.len()).map(|i| usize::from(i >= 2)).collect();
    TokenSequence { ids, segments }
}

fn sorted_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = (0..t.dims2().0).map(|r| t.row(r).to_vec()).collect();
    rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
    rows
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn pooled_is_first_row(user in prop::collection::vec(4usize..12, 1..8), seed in 0u64..100) {
        let (store, enc) = encoder(2, PositionMode::Sinusoidal, 12, seed);
        let mut g = Graph::no_grad();
        let e = enc.encode(&mut g, &store, &sequence(&user)).unwrap();
        prop_assert_eq!(g.value(e.pooled).data(), g.value(e.token_states).row(0));
    }

    #[test]
    fn permuting_tokens_permutes_states_without_positions(
        user in prop::collection::vec(4usize..12, 2..8),
        i in any::<prop::sample::Index>(),
        j in any::<prop::sample::Index>(),
        seed in 0u64..100,
    ) {
        let (store, enc) = encoder(1, PositionMode::Disabled, 12, seed);
        let mut swapped = user.clone();
        swapped.swap(i.index(user.len()), j.index(user.len()));
        let run = |u: &[usize]| {
            let mut g = Graph::no_grad();
            let e = enc.encode(&mut g, &store, &sequence(u)).unwrap();
            sorted_rows(g.value(e.token_states))
        };
        for (a, b) in run(&user).iter().zip(run(&swapped)) {
            prop_assert!(common::max_abs_diff(a, &b) < 1e-12);
        }
    }

    #[test]
    fn encoding_is_deterministic(user in prop::collection::vec(4usize..12, 1..8)) {
        let (store, enc) = encoder(2, PositionMode::Sinusoidal, 12, 1);
        let run = || {
            let mut g = Graph::no_grad();
            let e = enc.encode(&mut g, &store, &sequence(&user)).unwrap();
            g.value(e.token_states).clone()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn sinusoid_is_bounded(pos in 0usize..500, d in 1usize..64) {
        prop_assert!(positional_encoding(pos, d).iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn sinusoid_reference_values() {
    assert_eq!(positional_encoding(0, 6), [0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    assert!((positional_encoding(3, 8)[0] - 3f64.sin()).abs() < 1e-15);
    assert!((positional_encoding(3, 32)[0] - 0.14112).abs() < 1e-5);
}

#[test]
fn zero_layers_is_embedding_plus_position() {
    let (store, enc) = encoder(0, PositionMode::Sinusoidal, 12, 4);
    let seq = sequence(&[5, 6, 7]);
    let mut g = Graph::no_grad();
    let e = enc.encode(&mut g, &store, &seq).unwrap();
    let got = g.value(e.token_states);
    let table = &store.get(enc.token_embedding).value;
    let seg = &store.get(enc.segment_embedding).value;
    let pe = positional_table(seq.len(), 8);
    for (r, (&id, &s)) in seq.ids.iter().zip(&seq.segments).enumerate() {
        let expected: Vec<f64> = (0..8)
            .map(|c| table.row(id)[c] + seg.row(s)[c] + pe.row(r)[c])
            .collect();
        assert_eq!(got.row(r), &expected[..]);
    }
}

#[test]
fn out_of_vocabulary_id_is_rejected() {
    let (store, enc) = encoder(1, PositionMode::Sinusoidal, 12, 0);
    let mut g = Graph::no_grad();
    let err = enc.encode(&mut g, &store, &sequence(&[40])).unwrap_err().to_string();
    assert!(err.contains("40"), "{err}");
}

#[test]
fn embedding_gradient_matches_finite_differences() {
    let (mut store, enc) = encoder(1, PositionMode::Sinusoidal, 10, 9);
    let seq = sequence(&[4, 5, 6, 4]);
    let weights = common::readout(&[seq.len(), 8]);
    let loss = |store: &ParamStore, track: bool| {
        let mut g = if track { Graph::new() } else { Graph::no_grad() };
        let e = enc.encode(&mut g, store, &seq).unwrap();
        let w = g.constant(weights.clone());
        let p = g.mul(e.token_states, w).unwrap();
        let s = g.sum(p);
        (g, s)
    };
    let (mut g, s) = loss(&store, true);
    g.backward(s).unwrap();
    g.flush_param_grads(&mut store);
    let id = enc.token_embedding;
    let analytic = store.get(id).grad.clone();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = store.get(id).value.data()[i];
        let mut at = |v: f64| {
            store.get_mut(id).value.data_mut()[i] = v;
            let (g, s) = loss(&store, false);
            g.value(s).item()
        };
        let numeric = (at(orig + h) - at(orig - h)) / (2.0 * h);
        at(orig);
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(h));
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn catalog_values_are_distinct_for_fifty_values() {
    let values: Vec<String> = (0..50).map(|i| format!("value{i}")).collect();
    let refs: Vec<&str> = values.iter().map(String::as_str).collect();
    let ontology = Ontology::from_pairs(&[("slot", &refs[..])]).unwrap();
    let vocab = Vocabulary::build(&ontology, &[]);
    for seed in 0..3 {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = TurnEncoder::new(
            &mut store,
            "cat",
            &EncoderConfig::default(),
            vocab.len(),
            PositionMode::Sinusoidal,
            Role::Frozen,
            &mut rng,
        );
        let cat = encode_catalog(&ontology, &vocab, &enc, &store, 64).unwrap();
        assert!(cat.separation() > 0.0);
        let again = encode_catalog(&ontology, &vocab, &enc, &store, 64).unwrap();
        assert_eq!(cat, again);
        assert_eq!(cat.fingerprint(), again.fingerprint());
    }
}

#[test]
fn frozen_catalog_gets_no_gradient_and_survives_training() {
    let (ontology, dialogues) = small_corpus(4, 5);
    let mut model = tiny_model(tiny_config(), &dialogues, &ontology, 2);
    let before = model.catalog.fingerprint();
    let enc = model.encode_dialogue(&dialogues[0]).unwrap();
    let mut g = Graph::new();
    let loss = model.loss(&mut g, &enc, LossMode::Joint, 0).unwrap();
    g.backward(loss.total).unwrap();
    g.flush_param_grads(&mut model.store);
    let frozen: Vec<_> = model.store.iter().filter(|(_, p)| p.role == Role::Frozen).collect();
    assert!(!frozen.is_empty());
    assert!(frozen.iter().all(|(_, p)| p.grad.iter().all(|&v| v == 0.0)));

    let frozen_values: Vec<Tensor> = frozen.iter().map(|(_, p)| p.value.clone()).collect();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 2,
        ..TrainConfig::default()
    };
    train(&mut model, &dialogues, &cfg, |_| {}).unwrap();
    let after: Vec<Tensor> = model
        .store
        .iter()
        .filter(|(_, p)| p.role == Role::Frozen)
        .map(|(_, p)| p.value.clone())
        .collect();
    assert_eq!(after, frozen_values);
    model.refresh_catalog().unwrap();
    assert_eq!(model.catalog.fingerprint(), before);
}

#[test]
fn learned_positions_are_available() {
    let (ontology, dialogues) = small_corpus(2, 1);
    let cfg = ModelConfig {
        positions: PositionMode::Learned,
        ..tiny_config()
    };
    let model = tiny_model(cfg, &dialogues, &ontology, 0);
    assert!(model.store.id("turn.position_embedding").is_some());
    assert!(model.store.id("global.turn_position").is_some());
    let enc = model.encode_dialogue(&dialogues[0]).unwrap();
    assert_eq!(model.distributions(&enc).unwrap().len(), dialogues[0].turns.len());
}
