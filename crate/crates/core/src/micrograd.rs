//! A one-hidden-layer sigmoid network over token embeddings, trained with
//! half squared error on a binary target.
//!
//! ```text
//! v_k = E[k, :]
//! z2  = W1 v_k + b1        a2 = σ(z2)
//! z3  = W2 a2 + b2         ŷ  = σ(z3)
//! L   = ½ (ŷ - y)²
//! ```
//!
//! [`backward`] evaluates the closed-form gradients. [`finite_difference_grads`]
//! and [`finite_difference_grads_extended`] are independent central-difference
//! oracles; the second evaluates the loss in double-double precision.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::activations::{sigmoid, sigmoid_prime};
use crate::error::{Error, Result};
use crate::numkit::{dot_seq, io, uniform_matrix, Matrix, Rng, Vector};

mod extended;
use extended::Dd;

/// Default central-difference step.
pub const FD_EPSILON: f64 = 1e-5;

/// Binary target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Zero,
    One,
}

impl Target {
    pub fn value(self) -> f64 {
        match self {
            Target::Zero => 0.0,
            Target::One => 1.0,
        }
    }
}

impl TryFrom<f64> for Target {
    type Error = Error;

    fn try_from(y: f64) -> Result<Self> {
        if y == 0.0 {
            Ok(Target::Zero)
        } else if y == 1.0 {
            Ok(Target::One)
        } else {
            Err(Error::param("y", format!("{y} is not a binary target")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroNetParams {
    /// Embedding table, `V x d`.
    pub embedding: Matrix,
    /// Hidden weights, `h x d`.
    pub w1: Matrix,
    pub b1: Vector,
    /// Output weights, `1 x h`.
    pub w2: Matrix,
    pub b2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub k: usize,
    pub v_k: Vector,
    pub z2: Vector,
    pub a2: Vector,
    pub z3: f64,
    pub yhat: f64,
}

/// Loss gradients, shaped like [`MicroNetParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embedding: Matrix,
    pub w1: Matrix,
    pub b1: Vector,
    pub w2: Matrix,
    pub b2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroNetShape {
    pub vocab: usize,
    pub dim: usize,
    pub hidden: usize,
}

impl MicroNetParams {
    pub fn new(embedding: Matrix, w1: Matrix, b1: Vector, w2: Matrix, b2: f64) -> Result<Self> {
        let p = Self {
            embedding,
            w1,
            b1,
            w2,
            b2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(shape: MicroNetShape) -> Self {
        Self {
            embedding: Matrix::zeros(shape.vocab, shape.dim),
            w1: Matrix::zeros(shape.hidden, shape.dim),
            b1: Vector::zeros(shape.hidden),
            w2: Matrix::zeros(1, shape.hidden),
            b2: 0.0,
        }
    }

    /// Every parameter uniform in `[-0.5, 0.5)`.
    pub fn random(shape: MicroNetShape, rng: &mut Rng) -> Result<Self> {
        if shape.vocab == 0 || shape.dim == 0 || shape.hidden == 0 {
            return Err(Error::param("shape", "V, d and h must all be at least 1"));
        }
        let embedding = uniform_matrix(rng, shape.vocab, shape.dim, -0.5, 0.5);
        let w1 = uniform_matrix(rng, shape.hidden, shape.dim, -0.5, 0.5);
        let b1 = Vector::new((0..shape.hidden).map(|_| rng.uniform_range(-0.5, 0.5)).collect());
        let w2 = uniform_matrix(rng, 1, shape.hidden, -0.5, 0.5);
        let b2 = rng.uniform_range(-0.5, 0.5);
        Ok(Self {
            embedding,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn shape(&self) -> MicroNetShape {
        MicroNetShape {
            vocab: self.embedding.rows(),
            dim: self.embedding.cols(),
            hidden: self.w1.rows(),
        }
    }

    fn validate(&self) -> Result<()> {
        let s = self.shape();
        if self.w1.cols() != s.dim {
            return Err(Error::dims("MicroNetParams.w1", format!("{}x{}", s.hidden, s.dim), format!("{:?}", self.w1.shape())));
        }
        if self.b1.dim() != s.hidden {
            return Err(Error::dims("MicroNetParams.b1", s.hidden, self.b1.dim()));
        }
        if self.w2.shape() != (1, s.hidden) {
            return Err(Error::dims("MicroNetParams.w2", format!("1x{}", s.hidden), format!("{:?}", self.w2.shape())));
        }
        Ok(())
    }

    /// Flattened parameter count.
    pub fn len(&self) -> usize {
        let s = self.shape();
        s.vocab * s.dim + s.hidden * s.dim + 2 * s.hidden + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Visits every scalar parameter in a fixed order (E, W1, b1, W2, b2).
    fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        self.embedding.data_mut().iter_mut().for_each(&mut f);
        self.w1.data_mut().iter_mut().for_each(&mut f);
        self.b1.as_mut_slice().iter_mut().for_each(&mut f);
        self.w2.data_mut().iter_mut().for_each(&mut f);
        f(&mut self.b2);
    }

    fn get_flat(&self, idx: usize) -> f64 {
        let s = self.shape();
        let mut i = idx;
        let e = s.vocab * s.dim;
        if i < e {
            return self.embedding.data()[i];
        }
        i -= e;
        let w = s.hidden * s.dim;
        if i < w {
            return self.w1.data()[i];
        }
        i -= w;
        if i < s.hidden {
            return self.b1.get(i);
        }
        i -= s.hidden;
        if i < s.hidden {
            return self.w2.data()[i];
        }
        self.b2
    }

    fn set_flat(&mut self, idx: usize, value: f64) {
        let mut n = 0;
        self.for_each_mut(|x| {
            if n == idx {
                *x = value;
            }
            n += 1;
        });
    }
}

impl Gradients {
    pub fn zeros(shape: MicroNetShape) -> Self {
        let p = MicroNetParams::zeros(shape);
        Self {
            embedding: p.embedding,
            w1: p.w1,
            b1: p.b1,
            w2: p.w2,
            b2: 0.0,
        }
    }

    /// All components in the same flat order as the parameters.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.embedding.data());
        out.extend_from_slice(self.w1.data());
        out.extend_from_slice(self.b1.as_slice());
        out.extend_from_slice(self.w2.data());
        out.push(self.b2);
        out
    }

    /// Rows of the embedding gradient that contain a nonzero entry.
    pub fn nonzero_embedding_rows(&self) -> Vec<usize> {
        (0..self.embedding.rows())
            .filter(|&r| self.embedding.row(r).iter().any(|&x| x != 0.0))
            .collect()
    }

    fn set_flat(&mut self, idx: usize, value: f64) {
        let mut n = 0;
        let mut visit = |x: &mut f64| {
            if n == idx {
                *x = value;
            }
            n += 1;
        };
        self.embedding.data_mut().iter_mut().for_each(&mut visit);
        self.w1.data_mut().iter_mut().for_each(&mut visit);
        self.b1.as_mut_slice().iter_mut().for_each(&mut visit);
        self.w2.data_mut().iter_mut().for_each(&mut visit);
        visit(&mut self.b2);
    }
}

pub fn forward(params: &MicroNetParams, k: usize) -> Result<ForwardTrace> {
    let s = params.shape();
    if k >= s.vocab {
        return Err(Error::OutOfRange {
            what: "token",
            index: k,
            limit: s.vocab,
        });
    }
    let v_k = params.embedding.row_vector(k);
    let z2: Vec<f64> = (0..s.hidden)
        .map(|i| dot_seq(params.w1.row(i), v_k.as_slice()) + params.b1.get(i))
        .collect();
    let a2: Vec<f64> = z2.iter().map(|&z| sigmoid(z)).collect();
    let z3 = dot_seq(params.w2.row(0), &a2) + params.b2;
    Ok(ForwardTrace {
        k,
        v_k,
        z2: Vector::new(z2),
        a2: Vector::new(a2),
        z3,
        yhat: sigmoid(z3),
    })
}

/// `½ (ŷ - y)²`.
pub fn loss(yhat: f64, y: Target) -> f64 {
    let r = yhat - y.value();
    0.5 * r * r
}

/// Output-layer error signal `∂L/∂z3 = (ŷ - y) ŷ (1 - ŷ)`.
pub fn output_delta(yhat: f64, y: Target) -> f64 {
    (yhat - y.value()) * yhat * (1.0 - yhat)
}

pub fn backward(params: &MicroNetParams, trace: &ForwardTrace, y: Target) -> Result<Gradients> {
    let s = params.shape();
    if trace.k >= s.vocab || trace.v_k.dim() != s.dim || trace.z2.dim() != s.hidden || trace.a2.dim() != s.hidden {
        return Err(Error::dims(
            "backward",
            format!("trace for V={} d={} h={}", s.vocab, s.dim, s.hidden),
            format!("k={} |v_k|={} |z2|={}", trace.k, trace.v_k.dim(), trace.z2.dim()),
        ));
    }
    let delta3 = output_delta(trace.yhat, y);

    let w2 = Matrix::new(1, s.hidden, trace.a2.as_slice().iter().map(|&a| delta3 * a).collect())?;
    let delta2: Vec<f64> = (0..s.hidden)
        .map(|j| params.w2.get(0, j) * delta3 * sigmoid_prime(trace.z2.get(j)))
        .collect();
    let w1 = Matrix::from_fn(s.hidden, s.dim, |i, j| delta2[i] * trace.v_k.get(j));

    // ∂L/∂v_k = W1ᵀ δ2, placed in row k only
    let mut embedding = Matrix::zeros(s.vocab, s.dim);
    for j in 0..s.dim {
        let mut acc = 0.0;
        for (i, d) in delta2.iter().enumerate() {
            acc += params.w1.get(i, j) * d;
        }
        embedding.set(trace.k, j, acc);
    }

    Ok(Gradients {
        embedding,
        w1,
        b1: Vector::new(delta2),
        w2,
        b2: delta3,
    })
}

/// Loss for token `k` and target `y`.
pub fn example_loss(params: &MicroNetParams, k: usize, y: Target) -> Result<f64> {
    Ok(loss(forward(params, k)?.yhat, y))
}

/// Central differences `(L(θ+ε) - L(θ-ε)) / 2ε`, one parameter at a time.
pub fn finite_difference_grads(params: &MicroNetParams, k: usize, y: Target, eps: f64) -> Result<Gradients> {
    if !(eps > 0.0) {
        return Err(Error::param("eps", "must be > 0"));
    }
    let shape = params.shape();
    let mut grads = Gradients::zeros(shape);
    let mut probe = params.clone();
    for idx in 0..params.len() {
        let orig = params.get_flat(idx);
        let plus = orig + eps;
        let minus = orig - eps;
        probe.set_flat(idx, plus);
        let lp = example_loss(&probe, k, y)?;
        probe.set_flat(idx, minus);
        let lm = example_loss(&probe, k, y)?;
        probe.set_flat(idx, orig);
        // divide by the step actually taken after rounding
        grads.set_flat(idx, (lp - lm) / (plus - minus));
    }
    Ok(grads)
}

/// Loss evaluated in double-double arithmetic on the same f64 parameters.
fn example_loss_extended(params: &MicroNetParams, k: usize, y: Target) -> Result<Dd> {
    let s = params.shape();
    if k >= s.vocab {
        return Err(Error::OutOfRange {
            what: "token",
            index: k,
            limit: s.vocab,
        });
    }
    let v = params.embedding.row(k);
    let dot = |w: &[f64], x: &[Dd]| {
        w.iter()
            .zip(x)
            .fold(Dd::ZERO, |acc, (&a, &b)| acc + Dd::from_f64(a) * b)
    };
    let v: Vec<Dd> = v.iter().map(|&x| Dd::from_f64(x)).collect();
    let a2: Vec<Dd> = (0..s.hidden)
        .map(|i| (dot(params.w1.row(i), &v) + Dd::from_f64(params.b1.get(i))).sigmoid())
        .collect();
    let yhat = (dot(params.w2.row(0), &a2) + Dd::from_f64(params.b2)).sigmoid();
    let r = yhat - Dd::from_f64(y.value());
    Ok(Dd::from_f64(0.5) * r * r)
}

/// Same central differences as [`finite_difference_grads`], but each loss is
/// evaluated with about 106 bits so the difference `L+ - L-` carries no
/// forward-pass rounding. Only truncation error of the stencil remains.
pub fn finite_difference_grads_extended(params: &MicroNetParams, k: usize, y: Target, eps: f64) -> Result<Gradients> {
    if !(eps > 0.0) {
        return Err(Error::param("eps", "must be > 0"));
    }
    let mut grads = Gradients::zeros(params.shape());
    let mut probe = params.clone();
    for idx in 0..params.len() {
        let orig = params.get_flat(idx);
        let plus = orig + eps;
        let minus = orig - eps;
        probe.set_flat(idx, plus);
        let lp = example_loss_extended(&probe, k, y)?;
        probe.set_flat(idx, minus);
        let lm = example_loss_extended(&probe, k, y)?;
        probe.set_flat(idx, orig);
        grads.set_flat(idx, (lp - lm).to_f64() / (plus - minus));
    }
    Ok(grads)
}

/// Largest `|a - f| / (|a| + 1e-8)` over all components.
pub fn max_relative_error(analytic: &Gradients, numeric: &Gradients) -> f64 {
    analytic
        .flatten()
        .iter()
        .zip(numeric.flatten())
        .map(|(a, f)| (a - f).abs() / (a.abs() + 1e-8))
        .fold(0.0, f64::max)
}

/// `θ ← θ - lr ∇θ`.
pub fn sgd_step(params: &MicroNetParams, grads: &Gradients, lr: f64) -> Result<MicroNetParams> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::param("lr", format!("{lr} must be finite and > 0")));
    }
    if params.shape() != grads_shape(grads) {
        return Err(Error::dims("sgd_step", format!("{:?}", params.shape()), format!("{:?}", grads_shape(grads))));
    }
    let step = |p: &Matrix, g: &Matrix| {
        Matrix::new(
            p.rows(),
            p.cols(),
            p.data().iter().zip(g.data()).map(|(&x, &dx)| x - lr * dx).collect(),
        )
    };
    Ok(MicroNetParams {
        embedding: step(&params.embedding, &grads.embedding)?,
        w1: step(&params.w1, &grads.w1)?,
        b1: Vector::new(
            params.b1.as_slice().iter().zip(grads.b1.as_slice()).map(|(&x, &dx)| x - lr * dx).collect(),
        ),
        w2: step(&params.w2, &grads.w2)?,
        b2: params.b2 - lr * grads.b2,
    })
}

fn grads_shape(g: &Gradients) -> MicroNetShape {
    MicroNetShape {
        vocab: g.embedding.rows(),
        dim: g.embedding.cols(),
        hidden: g.w1.rows(),
    }
}

/// Result of [`gradient_check`].
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub vocab: usize,
    pub dim: usize,
    pub hidden: usize,
    pub token: usize,
    pub target: f64,
    pub loss: f64,
    /// Against the extended-precision oracle.
    pub max_relative_error: f64,
    /// Against the plain f64 oracle, for reference.
    pub f64_oracle_max_relative_error: f64,
    pub nonzero_embedding_rows: Vec<usize>,
}

/// Analytic vs central-difference gradients at one example.
pub fn gradient_check(params: &MicroNetParams, k: usize, y: Target, eps: f64) -> Result<GradCheckReport> {
    let trace = forward(params, k)?;
    let analytic = backward(params, &trace, y)?;
    let numeric = finite_difference_grads_extended(params, k, y, eps)?;
    let plain = finite_difference_grads(params, k, y, eps)?;
    let s = params.shape();
    Ok(GradCheckReport {
        vocab: s.vocab,
        dim: s.dim,
        hidden: s.hidden,
        token: k,
        target: y.value(),
        loss: loss(trace.yhat, y),
        max_relative_error: max_relative_error(&analytic, &numeric),
        f64_oracle_max_relative_error: max_relative_error(&analytic, &plain),
        nonzero_embedding_rows: analytic.nonzero_embedding_rows(),
    })
}

/// Repeated gradient steps on a single example; returns the final
/// parameters and the loss before each step plus the final loss.
pub fn train_single(params: &MicroNetParams, k: usize, y: Target, lr: f64, steps: usize) -> Result<(MicroNetParams, Vec<f64>)> {
    let mut p = params.clone();
    let mut history = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let trace = forward(&p, k)?;
        history.push(loss(trace.yhat, y));
        let g = backward(&p, &trace, y)?;
        p = sgd_step(&p, &g, lr)?;
    }
    history.push(example_loss(&p, k, y)?);
    Ok((p, history))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamsManifest {
    vocab: usize,
    dim: usize,
    hidden: usize,
    seed: Option<u64>,
}

/// Writes `E.bin`, `W1.bin`, `b1.bin`, `W2.bin`, `b2.bin` and `manifest.json`.
pub fn save_params(params: &MicroNetParams, seed: Option<u64>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let s = params.shape();
    io::save_binary(&params.embedding, dir.join("E.bin"))?;
    io::save_binary(&params.w1, dir.join("W1.bin"))?;
    io::save_binary(&Matrix::new(1, s.hidden, params.b1.as_slice().to_vec())?, dir.join("b1.bin"))?;
    io::save_binary(&params.w2, dir.join("W2.bin"))?;
    io::save_binary(&Matrix::new(1, 1, vec![params.b2])?, dir.join("b2.bin"))?;
    let manifest = ParamsManifest {
        vocab: s.vocab,
        dim: s.dim,
        hidden: s.hidden,
        seed,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// Inverse of [`save_params`]; returns the parameters and recorded seed.
pub fn load_params(dir: impl AsRef<Path>) -> Result<(MicroNetParams, Option<u64>)> {
    let dir = dir.as_ref();
    let manifest: ParamsManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let b1 = io::load_binary(dir.join("b1.bin"))?;
    let b2 = io::load_binary(dir.join("b2.bin"))?;
    if b2.shape() != (1, 1) {
        return Err(Error::dims("load_params b2", "1x1", format!("{:?}", b2.shape())));
    }
    let params = MicroNetParams::new(
        io::load_binary(dir.join("E.bin"))?,
        io::load_binary(dir.join("W1.bin"))?,
        Vector::new(b1.into_data()),
        io::load_binary(dir.join("W2.bin"))?,
        b2.get(0, 0),
    )?;
    let s = params.shape();
    if (s.vocab, s.dim, s.hidden) != (manifest.vocab, manifest.dim, manifest.hidden) {
        return Err(Error::dims(
            "load_params",
            format!("{}x{}x{}", manifest.vocab, manifest.dim, manifest.hidden),
            format!("{}x{}x{}", s.vocab, s.dim, s.hidden),
        ));
    }
    Ok((params, manifest.seed))
}
