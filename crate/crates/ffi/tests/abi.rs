use std::ffi::{CStr, CString};
use std::ptr;

use llmlab_ffi::*;

fn last_error() -> String {
    let p = llmlab_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn softmax_matches_closed_form() {
    let z = [1.0, 2.0, 3.0];
    let mut p = [0.0; 3];
    let s = unsafe { llmlab_softmax_temperature(z.as_ptr(), 3, 2.0, p.as_mut_ptr()) };
    assert_eq!(s, LlmlabStatus::Ok);
    let w: Vec<f64> = z.iter().map(|x| (x / 2.0f64).exp()).collect();
    let total: f64 = w.iter().sum();
    for (a, b) in p.iter().zip(&w) {
        assert!((a - b / total).abs() < 1e-15);
    }
}

#[test]
fn bad_temperature_sets_thread_local_message() {
    llmlab_clear_last_error();
    assert!(llmlab_last_error_message().is_null());
    let z = [0.0; 2];
    let mut p = [0.0; 2];
    let s = unsafe { llmlab_softmax_temperature(z.as_ptr(), 2, 0.0, p.as_mut_ptr()) };
    assert_eq!(s, LlmlabStatus::InvalidArgument);
    assert!(last_error().contains("temperature"), "{}", last_error());
    // other threads see their own slot
    std::thread::spawn(|| assert!(llmlab_last_error_message().is_null())).join().unwrap();
}

#[test]
fn null_pointers_are_reported_not_dereferenced() {
    let s = unsafe { llmlab_softmax_temperature(ptr::null(), 3, 1.0, ptr::null_mut()) };
    assert_eq!(s, LlmlabStatus::NullPointer);
    assert!(last_error().contains("logits"));
    let s = unsafe { llmlab_greedy_pack(0, 4, 0.1, 2, ptr::null_mut()) };
    assert_eq!(s, LlmlabStatus::NullPointer);
    unsafe {
        llmlab_vocab_free(ptr::null_mut());
        llmlab_micronet_free(ptr::null_mut());
        llmlab_circuit_free(ptr::null_mut());
    }
}

#[test]
fn reduction_plans_disagree_on_cancellation() {
    let data = [1e20, -1e20, 1.0];
    let mut seq = f64::NAN;
    let mut tree = f64::NAN;
    unsafe {
        assert_eq!(llmlab_reduce(data.as_ptr(), 3, LlmlabStrategy::Sequential, 0, LlmlabPrecision::F64, &mut seq), LlmlabStatus::Ok);
        assert_eq!(llmlab_reduce(data.as_ptr(), 3, LlmlabStrategy::PairwiseTree, 0, LlmlabPrecision::F64, &mut tree), LlmlabStatus::Ok);
        assert_eq!(
            llmlab_reduce(data.as_ptr(), 3, LlmlabStrategy::Chunked, 0, LlmlabPrecision::F64, &mut tree),
            LlmlabStatus::InvalidArgument
        );
    }
    assert_eq!(seq, 1.0);
    assert!(!llmlab_version().is_null());
}

#[test]
fn causal_attention_is_lower_triangular() {
    let q = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let mut a = [f64::NAN; 9];
    let s = unsafe { llmlab_attention_weights(q.as_ptr(), q.as_ptr(), 3, 2, true, a.as_mut_ptr()) };
    assert_eq!(s, LlmlabStatus::Ok);
    assert_eq!(&a[..3], &[1.0, 0.0, 0.0]);
    assert_eq!(a[5], 0.0);
    for row in a.chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn born_rule_in_rotated_basis() {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let psi = [1.0, 0.0];
    let basis = [h, h, h, -h];
    let mut p = [0.0; 2];
    let s = unsafe { llmlab_born_probabilities(psi.as_ptr(), ptr::null(), basis.as_ptr(), ptr::null(), 2, p.as_mut_ptr()) };
    assert_eq!(s, LlmlabStatus::Ok);
    assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    // phase on the state does not matter
    let im = [0.0; 4];
    let psi = [0.0, 0.0];
    let psi_im = [1.0, 0.0];
    let s = unsafe { llmlab_born_probabilities(psi.as_ptr(), psi_im.as_ptr(), basis.as_ptr(), im.as_ptr(), 2, p.as_mut_ptr()) };
    assert_eq!(s, LlmlabStatus::Ok);
    assert!((p[0] - 0.5).abs() < 1e-15);
    let skew = [1.0, 0.0, 1.0, 0.0];
    let s = unsafe { llmlab_born_probabilities(psi.as_ptr(), ptr::null(), skew.as_ptr(), ptr::null(), 2, p.as_mut_ptr()) };
    assert_ne!(s, LlmlabStatus::Ok);
}

#[test]
fn packing_is_seeded() {
    let (mut a, mut b) = (0usize, 0usize);
    unsafe {
        assert_eq!(llmlab_greedy_pack(3, 16, 0.3, 5, &mut a), LlmlabStatus::Ok);
        assert_eq!(llmlab_greedy_pack(3, 16, 0.3, 5, &mut b), LlmlabStatus::Ok);
    }
    assert_eq!(a, b);
    assert!(a >= 1);
}

#[test]
fn vocab_round_trip_and_buffer_protocol() {
    let corpus = b"abababab cdcdcd abab";
    let mut v = ptr::null_mut();
    unsafe {
        assert_eq!(llmlab_vocab_train(corpus.as_ptr(), corpus.len(), 260, &mut v), LlmlabStatus::Ok);
        let mut size = 0;
        assert_eq!(llmlab_vocab_size(v, &mut size), LlmlabStatus::Ok);
        assert!(size > 256 && size <= 260);

        let text = "abab cd ☃";
        let mut need = 0;
        let s = llmlab_bpe_encode(v, text.as_ptr(), text.len(), ptr::null_mut(), 0, &mut need);
        assert_eq!(s, LlmlabStatus::BufferTooSmall);
        let mut ids = vec![0u32; need];
        assert_eq!(llmlab_bpe_encode(v, text.as_ptr(), text.len(), ids.as_mut_ptr(), need, &mut need), LlmlabStatus::Ok);
        assert!(need < text.len());

        let mut bytes = vec![0u8; 64];
        let mut got = 0;
        assert_eq!(llmlab_bpe_decode(v, ids.as_ptr(), ids.len(), bytes.as_mut_ptr(), 64, &mut got), LlmlabStatus::Ok);
        assert_eq!(&bytes[..got], text.as_bytes());

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("v.jsonl").to_str().unwrap()).unwrap();
        assert_eq!(llmlab_vocab_save(v, path.as_ptr()), LlmlabStatus::Ok);
        let mut w = ptr::null_mut();
        assert_eq!(llmlab_vocab_load(path.as_ptr(), &mut w), LlmlabStatus::Ok);
        let mut size2 = 0;
        llmlab_vocab_size(w, &mut size2);
        assert_eq!(size, size2);
        let missing = CString::new(dir.path().join("nope").to_str().unwrap()).unwrap();
        let mut x = ptr::null_mut();
        assert_eq!(llmlab_vocab_load(missing.as_ptr(), &mut x), LlmlabStatus::Io);
        assert!(x.is_null());
        llmlab_vocab_free(v);
        llmlab_vocab_free(w);
    }
}

#[test]
fn micronet_gradients_check_out() {
    let mut net = ptr::null_mut();
    unsafe {
        assert_eq!(llmlab_micronet_new(6, 4, 3, 7, &mut net), LlmlabStatus::Ok);
        let mut yhat = 0.0;
        assert_eq!(llmlab_micronet_forward(net, 2, &mut yhat), LlmlabStatus::Ok);
        assert!(yhat > 0.0 && yhat < 1.0);
        let mut err = 1.0;
        assert_eq!(llmlab_micronet_gradcheck(net, 2, 1, 1e-5, &mut err), LlmlabStatus::Ok);
        assert!(err <= 1e-6);
        assert_eq!(llmlab_micronet_gradcheck(net, 2, 2, 1e-5, &mut err), LlmlabStatus::InvalidArgument);
        assert_eq!(llmlab_micronet_forward(net, 6, &mut yhat), LlmlabStatus::InvalidArgument);
        llmlab_micronet_free(net);
    }
}

#[test]
fn circuit_probabilities_and_sampling() {
    let json = CString::new(
        r#"{"dim": 2, "stages": [{"plane_rotation": {"dim": 2, "i": 0, "j": 1, "angle": 0.5235987755982988, "phase": 0.0}}], "readout": "standard"}"#,
    )
    .unwrap();
    let mut c = ptr::null_mut();
    unsafe {
        let s = llmlab_circuit_from_json(json.as_ptr(), &mut c);
        assert_eq!(s, LlmlabStatus::Ok, "{}", last_error());
        let mut dim = 0;
        llmlab_circuit_dim(c, &mut dim);
        assert_eq!(dim, 2);
        let mut p = [0.0; 2];
        assert_eq!(llmlab_circuit_probabilities(c, 0, p.as_mut_ptr()), LlmlabStatus::Ok);
        // cos²(π/6), sin²(π/6)
        assert!((p[0] - 0.75).abs() < 1e-12 && (p[1] - 0.25).abs() < 1e-12);
        let mut counts = [0u64; 2];
        assert_eq!(llmlab_circuit_sample(c, 0, 1, 4000, counts.as_mut_ptr()), LlmlabStatus::Ok);
        assert_eq!(counts[0] + counts[1], 4000);
        // 3 standard errors of a binomial(4000, 0.25)
        let se = (4000.0f64 * 0.25 * 0.75).sqrt();
        assert!((counts[1] as f64 - 1000.0).abs() < 3.0 * se);
        llmlab_circuit_free(c);

        let bad = CString::new("{not json").unwrap();
        let mut d = ptr::null_mut();
        assert_eq!(llmlab_circuit_from_json(bad.as_ptr(), &mut d), LlmlabStatus::Parse);
    }
}
