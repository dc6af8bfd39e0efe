//! Cross-module flows through the public API.

use llmlab::activations::softmax_temperature;
use llmlab::attention::{generate, load_blocks, save_blocks, BlockParams, BlockShape};
use llmlab::bpe::{self, TokenSequence};
use llmlab::contexts::{bank_graph, born_probabilities, disambiguate, ContextGraph};
use llmlab::micrograd::{gradient_check, load_params, save_params, train_single, MicroNetParams, MicroNetShape, Target};
use llmlab::numkit::{gaussian_matrix, Rng, Vector};
use llmlab::uattention::{Circuit, Pipeline, Readout, StateVector, UnitaryOp};

#[test]
fn tokenizer_feeds_generation_and_decodes_back() {
    let corpus = "the quick brown fox jumps over the lazy dog ".repeat(10);
    let vocab = bpe::train(corpus.as_bytes(), 280).unwrap();
    let prompt = bpe::encode(&vocab, "the quick");
    let mut rng = Rng::new(1);
    let v = vocab.size();
    let e = gaussian_matrix(&mut rng, v, 8, 1.0);
    let blocks = vec![BlockParams::random(BlockShape::new(8, 2), &mut rng).unwrap()];
    let out = generate(&blocks, &e, &e, &prompt, 0.7, 6, &mut Rng::new(2)).unwrap();
    assert_eq!(&out.ids()[..prompt.len()], prompt.ids());
    let decoded = bpe::decode(&vocab, &TokenSequence::new(out.ids()[..prompt.len()].to_vec())).unwrap();
    assert_eq!(decoded.text, "the quick");
    // generated ids decode to bytes without error even if not valid UTF-8
    assert!(bpe::decode_bytes(&vocab, &out).is_ok());

    let dir = tempfile::tempdir().unwrap();
    save_blocks(&blocks, Some(1), dir.path()).unwrap();
    let (back, seed) = load_blocks(dir.path()).unwrap();
    assert_eq!(seed, Some(1));
    let again = generate(&back, &e, &e, &prompt, 0.7, 6, &mut Rng::new(2)).unwrap();
    assert_eq!(again, out);
}

#[test]
fn trained_network_survives_disk_and_still_checks() {
    let shape = MicroNetShape { vocab: 5, dim: 3, hidden: 4 };
    let p = MicroNetParams::random(shape, &mut Rng::new(9)).unwrap();
    let (trained, history) = train_single(&p, 2, Target::One, 0.5, 50).unwrap();
    assert!(history.last().unwrap() < history.first().unwrap());
    let dir = tempfile::tempdir().unwrap();
    save_params(&trained, Some(9), dir.path()).unwrap();
    let (back, seed) = load_params(dir.path()).unwrap();
    assert_eq!(back, trained);
    assert_eq!(seed, Some(9));
    assert!(gradient_check(&back, 2, Target::One, 1e-5).unwrap().max_relative_error <= 1e-6);
}

#[test]
fn context_graph_round_trips_and_disambiguates() {
    let g = bank_graph().unwrap();
    let back: ContextGraph<f64> = ContextGraph::from_json(&g.to_json().unwrap()).unwrap();
    assert_eq!(back.to_json().unwrap(), g.to_json().unwrap());
    let money_leaning = Vector::new(vec![0.2, 1.0, 0.1]).normalized().unwrap();
    for basis in g.bases() {
        let p = born_probabilities(&money_leaning, basis).unwrap();
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let (word, q) = disambiguate(&money_leaning, &g, basis.label()).unwrap();
        assert_eq!(q, p);
        assert_eq!(basis.position_of_word(&word), Some(q.argmax()));
    }
}

#[test]
fn circuit_readout_equals_softmax_for_prepared_amplitudes() {
    // a permutation only relabels outcomes, so probabilities of a prepared
    // softmax state come back permuted
    let z = Vector::new(vec![0.3, -1.0, 2.0, 0.5]);
    let t = 0.8;
    let p = softmax_temperature(&z, t).unwrap();
    let amps = llmlab::activations::amplitudes_from_logits(&z, t, &Vector::new(vec![0.1, 2.0, -1.0, 0.0])).unwrap();
    let psi = StateVector::new(amps).unwrap();
    let circuit = Circuit {
        dim: 4,
        stages: vec![UnitaryOp::permutation(vec![2, 0, 3, 1]).unwrap()],
        readout: Readout::Standard,
    };
    let pipe: Pipeline = Circuit::from_json(&circuit.to_json().unwrap()).unwrap().pipeline().unwrap();
    let q = pipe.probabilities(&psi).unwrap();
    for (k, &dst) in [2, 0, 3, 1].iter().enumerate() {
        assert!((q.get(dst) - p.get(k)).abs() < 1e-12);
    }
}
