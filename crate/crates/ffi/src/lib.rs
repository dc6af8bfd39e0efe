//! C ABI over `llmlab`.
//!
//! Conventions:
//! - every function returns an [`LlmlabStatus`]; results go through out-pointers;
//! - on failure, [`llmlab_last_error_message`] describes the most recent
//!   error on the calling thread;
//! - objects are opaque handles created by `*_new` / `*_load` / `*_train`
//!   functions and released by the matching `*_free`;
//! - variable-length outputs take a capacity and report the required length,
//!   returning [`LlmlabStatus::BufferTooSmall`] when the buffer is short;
//! - panics never cross the boundary; they surface as [`LlmlabStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use llmlab::activations::softmax_temperature;
use llmlab::attention::attention_weights;
use llmlab::bpe::{self, TokenId, TokenSequence, Vocabulary};
use llmlab::capacity::greedy_pack;
use llmlab::contexts::{born_probabilities, ContextBasis};
use llmlab::floatlab::{reduce, Precision, ReductionPlan, Strategy};
use llmlab::micrograd::{forward, gradient_check, MicroNetParams, MicroNetShape, Target};
use llmlab::numkit::{Matrix, Rng, Vector};
use llmlab::uattention::{measure, Circuit, Pipeline, StateVector};
use llmlab::Error;
use num_complex::Complex64;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlmlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NotNormalized = 4,
    Io = 5,
    Parse = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlmlabStrategy {
    Sequential = 0,
    PairwiseTree = 1,
    /// `param` is the chunk size.
    Chunked = 2,
    /// `param` is the shuffle seed.
    Shuffled = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlmlabPrecision {
    F32 = 0,
    F64 = 1,
}

/// Byte-pair vocabulary.
pub struct LlmlabVocab(Vocabulary);

/// One-hidden-layer sigmoid network.
pub struct LlmlabMicroNet(MicroNetParams);

/// Unitary circuit with its terminal readout basis.
pub struct LlmlabCircuit(Pipeline);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: LlmlabStatus,
    message: String,
}

impl Failure {
    fn new(status: LlmlabStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::DimensionMismatch { .. } => LlmlabStatus::DimensionMismatch,
            Error::NotNormalized { .. } => LlmlabStatus::NotNormalized,
            Error::Io(_) => LlmlabStatus::Io,
            Error::Json(_) | Error::Parse(_) => LlmlabStatus::Parse,
            _ => LlmlabStatus::InvalidArgument,
        };
        Failure::new(status, e.to_string())
    }
}

type FfiResult = Result<(), Failure>;

fn set_last_error(message: String) {
    // interior NULs would truncate the C string; replace them
    let c = CString::new(message.replace('\0', "\u{FFFD}")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult) -> LlmlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LlmlabStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(failure.message);
            failure.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            LlmlabStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::new(LlmlabStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure::new(LlmlabStatus::InvalidArgument, format!("`{what}` is not UTF-8: {e}")))
}

/// Copies `data` into a caller buffer of `cap` elements, always reporting
/// the required length through `len_out`.
unsafe fn copy_out<T: Copy>(data: &[T], dst: *mut T, cap: usize, len_out: *mut usize) -> FfiResult {
    *out(len_out, "out_len")? = data.len();
    if data.len() > cap {
        return Err(Failure::new(
            LlmlabStatus::BufferTooSmall,
            format!("buffer holds {cap}, needs {}", data.len()),
        ));
    }
    slice_mut(dst, data.len(), "out")?.copy_from_slice(data);
    Ok(())
}

unsafe fn into_handle<T>(value: T, dst: *mut *mut T) -> FfiResult {
    let slot = out(dst, "out")?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(p))));
    }
}

/// Message of the last failed call on this thread, or NULL if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn llmlab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn llmlab_clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn llmlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `out[i] = softmax(logits / temperature)[i]` for `n` logits.
///
/// # Safety
/// `logits` and `out` must point to `n` valid doubles.
#[no_mangle]
pub unsafe extern "C" fn llmlab_softmax_temperature(
    logits: *const f64,
    n: usize,
    temperature: f64,
    out: *mut f64,
) -> LlmlabStatus {
    guard(|| {
        let z = Vector::new(slice(logits, n, "logits")?.to_vec());
        let p = softmax_temperature(&z, temperature)?;
        slice_mut(out, n, "out")?.copy_from_slice(p.as_slice());
        Ok(())
    })
}

/// Sums `n` values under the given reduction plan.
///
/// # Safety
/// `data` must point to `n` doubles; `out` to one.
#[no_mangle]
pub unsafe extern "C" fn llmlab_reduce(
    data: *const f64,
    n: usize,
    strategy: LlmlabStrategy,
    param: u64,
    precision: LlmlabPrecision,
    out_sum: *mut f64,
) -> LlmlabStatus {
    guard(|| {
        let strategy = match strategy {
            LlmlabStrategy::Sequential => Strategy::Sequential,
            LlmlabStrategy::PairwiseTree => Strategy::PairwiseTree,
            LlmlabStrategy::Chunked => Strategy::Chunked(
                usize::try_from(param).map_err(|_| Failure::new(LlmlabStatus::InvalidArgument, "chunk size too large"))?,
            ),
            LlmlabStrategy::Shuffled => Strategy::Shuffled(param),
        };
        let precision = match precision {
            LlmlabPrecision::F32 => Precision::F32,
            LlmlabPrecision::F64 => Precision::F64,
        };
        let plan = ReductionPlan::new(strategy, precision)?;
        *out(out_sum, "out_sum")? = reduce(slice(data, n, "data")?, plan)?;
        Ok(())
    })
}

/// Row-major `n x n` attention weights for row-major `n x d` queries and keys.
///
/// # Safety
/// `q` and `k` must point to `n * d` doubles, `out` to `n * n`.
#[no_mangle]
pub unsafe extern "C" fn llmlab_attention_weights(
    q: *const f64,
    k: *const f64,
    n: usize,
    d: usize,
    causal: bool,
    out: *mut f64,
) -> LlmlabStatus {
    guard(|| {
        let len = n
            .checked_mul(d)
            .ok_or_else(|| Failure::new(LlmlabStatus::InvalidArgument, "n * d overflows"))?;
        let q = Matrix::new(n, d, slice(q, len, "q")?.to_vec())?;
        let k = Matrix::new(n, d, slice(k, len, "k")?.to_vec())?;
        let a = attention_weights(&q, &k, causal)?;
        slice_mut(out, n * n, "out")?.copy_from_slice(a.matrix().data());
        Ok(())
    })
}

/// Born probabilities of `psi` in an orthonormal basis given as `dim` row
/// vectors (row-major `dim x dim`). Imaginary parts may be NULL for real input.
///
/// # Safety
/// Non-null pointers must reference `dim` (state, out) or `dim * dim`
/// (basis) doubles.
#[no_mangle]
pub unsafe extern "C" fn llmlab_born_probabilities(
    psi_re: *const f64,
    psi_im: *const f64,
    basis_re: *const f64,
    basis_im: *const f64,
    dim: usize,
    out: *mut f64,
) -> LlmlabStatus {
    guard(|| {
        let complex = |re: *const f64, im: *const f64, n: usize, what: &str| -> Result<Vec<Complex64>, Failure> {
            let re = slice(re, n, what)?;
            Ok(if im.is_null() {
                re.iter().map(|&x| Complex64::new(x, 0.0)).collect()
            } else {
                re.iter().zip(slice(im, n, what)?).map(|(&a, &b)| Complex64::new(a, b)).collect()
            })
        };
        let cells = dim
            .checked_mul(dim)
            .ok_or_else(|| Failure::new(LlmlabStatus::InvalidArgument, "dim * dim overflows"))?;
        let psi = Vector::new(complex(psi_re, psi_im, dim, "psi")?);
        let flat = complex(basis_re, basis_im, cells, "basis")?;
        let vectors = flat.chunks(dim.max(1)).map(|c| Vector::new(c.to_vec())).collect();
        let words = (0..dim).map(|i| i.to_string()).collect();
        let basis = ContextBasis::new("ffi", vectors, words)?;
        let p = born_probabilities(&psi, &basis)?;
        slice_mut(out, dim, "out")?.copy_from_slice(p.as_slice());
        Ok(())
    })
}

/// Number of unit vectors greedily kept in `R^d` with pairwise `|dot| <= epsilon`.
///
/// # Safety
/// `out_count` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn llmlab_greedy_pack(
    seed: u64,
    d: usize,
    epsilon: f64,
    max_attempts: usize,
    out_count: *mut usize,
) -> LlmlabStatus {
    guard(|| {
        *out(out_count, "out_count")? = greedy_pack(&mut Rng::new(seed), d, epsilon, max_attempts)?;
        Ok(())
    })
}

/// Learns a vocabulary of `target_size` tokens from `len` corpus bytes.
///
/// # Safety
/// `corpus` must point to `len` bytes; `out` to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn llmlab_vocab_train(
    corpus: *const u8,
    len: usize,
    target_size: usize,
    out: *mut *mut LlmlabVocab,
) -> LlmlabStatus {
    guard(|| {
        let v = bpe::train(slice(corpus, len, "corpus")?, target_size)?;
        into_handle(LlmlabVocab(v), out)
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` a handle slot.
#[no_mangle]
pub unsafe extern "C" fn llmlab_vocab_load(path: *const c_char, out: *mut *mut LlmlabVocab) -> LlmlabStatus {
    guard(|| {
        let v = Vocabulary::load(c_str(path, "path")?)?;
        into_handle(LlmlabVocab(v), out)
    })
}

/// # Safety
/// `vocab` must come from this library; `path` must be NUL-terminated UTF-8.
#[no_mangle]
pub unsafe extern "C" fn llmlab_vocab_save(vocab: *const LlmlabVocab, path: *const c_char) -> LlmlabStatus {
    guard(|| {
        handle(vocab, "vocab")?.0.save(c_str(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `vocab` must come from this library; `out_size` must be valid.
#[no_mangle]
pub unsafe extern "C" fn llmlab_vocab_size(vocab: *const LlmlabVocab, out_size: *mut usize) -> LlmlabStatus {
    guard(|| {
        *out(out_size, "out_size")? = handle(vocab, "vocab")?.0.size();
        Ok(())
    })
}

/// Encodes `len` bytes into at most `cap` ids; `out_len` receives the
/// required count even when the buffer is too small.
///
/// # Safety
/// `bytes` must point to `len` bytes, `ids` to `cap` ids.
#[no_mangle]
pub unsafe extern "C" fn llmlab_bpe_encode(
    vocab: *const LlmlabVocab,
    bytes: *const u8,
    len: usize,
    ids: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> LlmlabStatus {
    guard(|| {
        let seq = bpe::encode_bytes(&handle(vocab, "vocab")?.0, slice(bytes, len, "bytes")?);
        copy_out(seq.ids(), ids as *mut TokenId, cap, out_len)
    })
}

/// Decodes `n` ids into raw bytes (not NUL-terminated).
///
/// # Safety
/// `ids` must point to `n` ids, `bytes` to `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn llmlab_bpe_decode(
    vocab: *const LlmlabVocab,
    ids: *const u32,
    n: usize,
    bytes: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> LlmlabStatus {
    guard(|| {
        let seq = TokenSequence::new(slice(ids, n, "ids")?.to_vec());
        let decoded = bpe::decode_bytes(&handle(vocab, "vocab")?.0, &seq)?;
        copy_out(&decoded, bytes, cap, out_len)
    })
}

/// # Safety
/// `vocab` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn llmlab_vocab_free(vocab: *mut LlmlabVocab) {
    free_handle(vocab)
}

/// Randomly initialized network.
///
/// # Safety
/// `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn llmlab_micronet_new(
    vocab: usize,
    dim: usize,
    hidden: usize,
    seed: u64,
    out: *mut *mut LlmlabMicroNet,
) -> LlmlabStatus {
    guard(|| {
        let shape = MicroNetShape { vocab, dim, hidden };
        let p = MicroNetParams::random(shape, &mut Rng::new(seed))?;
        into_handle(LlmlabMicroNet(p), out)
    })
}

/// Prediction `ŷ` for one token.
///
/// # Safety
/// `net` must come from this library; `out_yhat` must be valid.
#[no_mangle]
pub unsafe extern "C" fn llmlab_micronet_forward(
    net: *const LlmlabMicroNet,
    token: usize,
    out_yhat: *mut f64,
) -> LlmlabStatus {
    guard(|| {
        *out(out_yhat, "out_yhat")? = forward(&handle(net, "net")?.0, token)?.yhat;
        Ok(())
    })
}

/// Largest relative deviation between analytic and central-difference
/// gradients at one example. `target` must be 0 or 1.
///
/// # Safety
/// `net` must come from this library; `out_error` must be valid.
#[no_mangle]
pub unsafe extern "C" fn llmlab_micronet_gradcheck(
    net: *const LlmlabMicroNet,
    token: usize,
    target: u8,
    epsilon: f64,
    out_error: *mut f64,
) -> LlmlabStatus {
    guard(|| {
        let y = match target {
            0 => Target::Zero,
            1 => Target::One,
            t => return Err(Failure::new(LlmlabStatus::InvalidArgument, format!("target {t} must be 0 or 1"))),
        };
        let report = gradient_check(&handle(net, "net")?.0, token, y, epsilon)?;
        *out(out_error, "out_error")? = report.max_relative_error;
        Ok(())
    })
}

/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn llmlab_micronet_free(net: *mut LlmlabMicroNet) {
    free_handle(net)
}

/// Parses a circuit description (the JSON written by `llmlab uattention`).
///
/// # Safety
/// `json` must be NUL-terminated UTF-8; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn llmlab_circuit_from_json(json: *const c_char, out: *mut *mut LlmlabCircuit) -> LlmlabStatus {
    guard(|| {
        let pipeline = Circuit::from_json(c_str(json, "json")?)?.pipeline()?;
        into_handle(LlmlabCircuit(pipeline), out)
    })
}

/// # Safety
/// `circuit` must come from this library; `out_dim` must be valid.
#[no_mangle]
pub unsafe extern "C" fn llmlab_circuit_dim(circuit: *const LlmlabCircuit, out_dim: *mut usize) -> LlmlabStatus {
    guard(|| {
        *out(out_dim, "out_dim")? = handle(circuit, "circuit")?.0.dim();
        Ok(())
    })
}

/// Outcome probabilities for standard basis input `input`.
///
/// # Safety
/// `out` must hold the circuit dimension's worth of doubles.
#[no_mangle]
pub unsafe extern "C" fn llmlab_circuit_probabilities(
    circuit: *const LlmlabCircuit,
    input: usize,
    out: *mut f64,
) -> LlmlabStatus {
    guard(|| {
        let p = &handle(circuit, "circuit")?.0;
        let probs = p.probabilities(&StateVector::basis(p.dim(), input)?)?;
        slice_mut(out, p.dim(), "out")?.copy_from_slice(probs.as_slice());
        Ok(())
    })
}

/// Histogram of `shots` seeded terminal measurements.
///
/// # Safety
/// `counts` must hold the circuit dimension's worth of `uint64_t`.
#[no_mangle]
pub unsafe extern "C" fn llmlab_circuit_sample(
    circuit: *const LlmlabCircuit,
    input: usize,
    seed: u64,
    shots: u64,
    counts: *mut u64,
) -> LlmlabStatus {
    guard(|| {
        let p = &handle(circuit, "circuit")?.0;
        let counts = slice_mut(counts, p.dim(), "counts")?;
        counts.fill(0);
        let psi = p.evolve(&StateVector::basis(p.dim(), input)?)?;
        let mut rng = Rng::new(seed);
        for _ in 0..shots {
            let (k, _) = measure(&psi, p.readout(), &mut rng)?;
            counts[k] += 1;
        }
        Ok(())
    })
}

/// # Safety
/// `circuit` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn llmlab_circuit_free(circuit: *mut LlmlabCircuit) {
    free_handle(circuit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_status_codes() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, LlmlabStatus::Panic);
        let msg = unsafe { CStr::from_ptr(llmlab_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "panic: boom");
        assert_eq!(guard(|| Ok(())), LlmlabStatus::Ok);
    }

    #[test]
    fn interior_nul_does_not_lose_the_message() {
        set_last_error("a\0b".into());
        let msg = unsafe { CStr::from_ptr(llmlab_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "a\u{FFFD}b");
    }
}
