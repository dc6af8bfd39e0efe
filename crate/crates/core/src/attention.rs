//! Scaled dot-product self-attention, multi-head attention, post-norm
//! transformer blocks, and temperature-sampled autoregressive generation.
//!
//! Conventions:
//! * tokens are rows: `X` is `n x d`;
//! * the causal mask replaces every score above the diagonal with
//!   `f64::MIN` before the softmax, which underflows to an exact `0.0`
//!   after max-subtraction;
//! * the position-wise FFN is `σ(Z W_a + b_a) W_b + b_b` (sigmoid);
//! * LayerNorm normalizes each row with population variance and
//!   `LN_EPSILON`;
//! * there are no positional encodings, so the causal mask is the only
//!   source of order sensitivity.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::activations::{sigmoid, softmax_slice, softmax_temperature, ProbabilityVector};
use crate::bpe::{TokenId, TokenSequence};
use crate::error::{Error, Result};
use crate::numkit::{dot_seq, gaussian_matrix, io, matmul, Matrix, Rng, Vector};

pub const LN_EPSILON: f64 = 1e-5;

/// Value the causal mask writes into hidden scores.
pub const MASKED_SCORE: f64 = f64::MIN;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHeadParams {
    /// `d x d_k`
    pub wq: Matrix,
    /// `d x d_k`
    pub wk: Matrix,
    /// `d x d_v`
    pub wv: Matrix,
}

impl AttentionHeadParams {
    pub fn new(wq: Matrix, wk: Matrix, wv: Matrix) -> Result<Self> {
        let h = Self { wq, wk, wv };
        h.validate()?;
        Ok(h)
    }

    fn validate(&self) -> Result<()> {
        let d = self.wq.rows();
        if self.wk.rows() != d || self.wv.rows() != d {
            return Err(Error::dims("attention head", format!("{d} input rows"), format!("{} / {}", self.wk.rows(), self.wv.rows())));
        }
        if self.wq.cols() != self.wk.cols() {
            return Err(Error::dims("attention head d_k", self.wq.cols(), self.wk.cols()));
        }
        if self.wq.cols() == 0 {
            return Err(Error::param("d_k", "must be at least 1"));
        }
        Ok(())
    }

    pub fn model_dim(&self) -> usize {
        self.wq.rows()
    }

    pub fn key_dim(&self) -> usize {
        self.wq.cols()
    }

    pub fn value_dim(&self) -> usize {
        self.wv.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Vector,
    pub bias: Vector,
}

impl LayerNormParams {
    pub fn identity(d: usize) -> Self {
        Self {
            gain: Vector::new(vec![1.0; d]),
            bias: Vector::zeros(d),
        }
    }
}

/// Two-layer position-wise network.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    /// `d x d_ff`
    pub w_a: Matrix,
    pub b_a: Vector,
    /// `d_ff x d`
    pub w_b: Matrix,
    pub b_b: Vector,
}

impl FfnParams {
    pub fn zeros(d: usize, d_ff: usize) -> Self {
        Self {
            w_a: Matrix::zeros(d, d_ff),
            b_a: Vector::zeros(d_ff),
            w_b: Matrix::zeros(d_ff, d),
            b_b: Vector::zeros(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub heads: Vec<AttentionHeadParams>,
    /// `(sum of d_v) x d`
    pub wo: Matrix,
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
    pub ffn: FfnParams,
}

/// Sizes of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockShape {
    pub d: usize,
    pub heads: usize,
    pub d_ff: usize,
}

impl BlockShape {
    /// `d_ff = 4d`.
    pub fn new(d: usize, heads: usize) -> Self {
        Self { d, heads, d_ff: 4 * d }
    }
}

impl BlockParams {
    /// Gaussian projections with variance `1/fan_in`, identity LayerNorms,
    /// zero biases. Heads get `d_k = d_v = d / h`.
    pub fn random(shape: BlockShape, rng: &mut Rng) -> Result<Self> {
        let BlockShape { d, heads, d_ff } = shape;
        if heads == 0 || d == 0 || d % heads != 0 {
            return Err(Error::param("heads", format!("{heads} heads must evenly divide d = {d}")));
        }
        if d_ff == 0 {
            return Err(Error::param("d_ff", "must be at least 1"));
        }
        let dk = d / heads;
        let s_in = 1.0 / (d as f64).sqrt();
        let heads = (0..heads)
            .map(|_| AttentionHeadParams {
                wq: gaussian_matrix(rng, d, dk, s_in),
                wk: gaussian_matrix(rng, d, dk, s_in),
                wv: gaussian_matrix(rng, d, dk, s_in),
            })
            .collect();
        let wo = gaussian_matrix(rng, d, d, s_in);
        let ffn = FfnParams {
            w_a: gaussian_matrix(rng, d, d_ff, s_in),
            b_a: Vector::zeros(d_ff),
            w_b: gaussian_matrix(rng, d_ff, d, 1.0 / (d_ff as f64).sqrt()),
            b_b: Vector::zeros(d),
        };
        Ok(Self {
            heads,
            wo,
            ln1: LayerNormParams::identity(d),
            ln2: LayerNormParams::identity(d),
            ffn,
        })
    }

    pub fn model_dim(&self) -> usize {
        self.wo.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads.is_empty() {
            return Err(Error::param("heads", "at least one head is required"));
        }
        let d = self.model_dim();
        let mut concat = 0;
        for h in &self.heads {
            h.validate()?;
            if h.model_dim() != d {
                return Err(Error::dims("block head input", d, h.model_dim()));
            }
            concat += h.value_dim();
        }
        if self.wo.rows() != concat {
            return Err(Error::dims("block W_O rows", concat, self.wo.rows()));
        }
        for (name, ln) in [("ln1", &self.ln1), ("ln2", &self.ln2)] {
            if ln.gain.dim() != d || ln.bias.dim() != d {
                return Err(Error::dims(name, d, format!("{}/{}", ln.gain.dim(), ln.bias.dim())));
            }
        }
        let f = &self.ffn;
        let d_ff = f.w_a.cols();
        if f.w_a.rows() != d || f.b_a.dim() != d_ff || f.w_b.shape() != (d_ff, d) || f.b_b.dim() != d {
            return Err(Error::dims("ffn", format!("d={d}, d_ff={d_ff}"), "inconsistent FFN shapes"));
        }
        Ok(())
    }
}

/// Row-stochastic attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    weights: Matrix,
    causal: bool,
}

impl AttentionMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.weights
    }

    pub fn is_causal(&self) -> bool {
        self.causal
    }

    pub fn n(&self) -> usize {
        self.weights.rows()
    }

    pub fn into_matrix(self) -> Matrix {
        self.weights
    }
}

/// `(X W_Q, X W_K, X W_V)`.
pub fn qkv_project(x: &Matrix, head: &AttentionHeadParams) -> Result<(Matrix, Matrix, Matrix)> {
    head.validate()?;
    if x.cols() != head.model_dim() {
        return Err(Error::dims("qkv_project", head.model_dim(), x.cols()));
    }
    Ok((matmul(x, &head.wq)?, matmul(x, &head.wk)?, matmul(x, &head.wv)?))
}

/// `softmax(Q Kᵀ / √d_k)` row by row, masking `j > i` first when `causal`.
pub fn attention_weights(q: &Matrix, k: &Matrix, causal: bool) -> Result<AttentionMatrix> {
    let dk = q.cols();
    if dk == 0 {
        return Err(Error::param("d_k", "must be at least 1"));
    }
    if k.cols() != dk {
        return Err(Error::dims("attention_weights d_k", dk, k.cols()));
    }
    if causal && q.rows() != k.rows() {
        return Err(Error::dims("causal attention", q.rows(), k.rows()));
    }
    let scale = (dk as f64).sqrt();
    let (n, m) = (q.rows(), k.rows());
    let mut weights = Matrix::zeros(n, m);
    let mut scores = vec![0.0; m];
    for i in 0..n {
        for (j, s) in scores.iter_mut().enumerate() {
            *s = if causal && j > i {
                MASKED_SCORE
            } else {
                dot_seq(q.row(i), k.row(j)) / scale
            };
        }
        weights.row_mut(i).copy_from_slice(&softmax_slice(&scores));
    }
    Ok(AttentionMatrix { weights, causal })
}

/// `Y = A V`.
pub fn attention_output(a: &AttentionMatrix, v: &Matrix) -> Result<Matrix> {
    if a.weights.cols() != v.rows() {
        return Err(Error::dims("attention_output", a.weights.cols(), v.rows()));
    }
    matmul(&a.weights, v)
}

/// Single-head attention: projection, weights, weighted values.
pub fn head_attention(x: &Matrix, head: &AttentionHeadParams, causal: bool) -> Result<Matrix> {
    let (q, k, v) = qkv_project(x, head)?;
    let a = attention_weights(&q, &k, causal)?;
    attention_output(&a, &v)
}

/// `Concat[head_1, ..., head_h] W_O`.
pub fn multi_head(x: &Matrix, params: &BlockParams, causal: bool) -> Result<Matrix> {
    params.validate()?;
    let heads = params
        .heads
        .iter()
        .map(|h| head_attention(x, h, causal))
        .collect::<Result<Vec<_>>>()?;
    matmul(&Matrix::hconcat(&heads)?, &params.wo)
}

/// Per-row `(z - mean) / √(var + ε) · gain + bias`.
pub fn layer_norm(z: &Matrix, gain: &Vector, bias: &Vector) -> Result<Matrix> {
    let d = z.cols();
    if gain.dim() != d || bias.dim() != d {
        return Err(Error::dims("layer_norm", d, format!("gain {} / bias {}", gain.dim(), bias.dim())));
    }
    let mut out = Matrix::zeros(z.rows(), d);
    for i in 0..z.rows() {
        let row = z.row(i);
        let mut sum = 0.0;
        for x in row {
            sum += x;
        }
        let mean = sum / d as f64;
        let mut ss = 0.0;
        for x in row {
            ss += (x - mean) * (x - mean);
        }
        let inv = 1.0 / (ss / d as f64 + LN_EPSILON).sqrt();
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = (row[j] - mean) * inv * gain.get(j) + bias.get(j);
        }
    }
    Ok(out)
}

/// `σ(Z W_a + b_a) W_b + b_b`, independently per row.
pub fn feed_forward(z: &Matrix, ffn: &FfnParams) -> Result<Matrix> {
    let mut hidden = matmul(z, &ffn.w_a)?;
    for i in 0..hidden.rows() {
        for (x, b) in hidden.row_mut(i).iter_mut().zip(ffn.b_a.as_slice()) {
            *x = sigmoid(*x + b);
        }
    }
    let mut out = matmul(&hidden, &ffn.w_b)?;
    for i in 0..out.rows() {
        for (x, b) in out.row_mut(i).iter_mut().zip(ffn.b_b.as_slice()) {
            *x += b;
        }
    }
    Ok(out)
}

/// Post-norm block:
/// `Z' = LN1(Z + MultiHead(Z))`, `out = LN2(Z' + FFN(Z'))`.
pub fn transformer_block(z: &Matrix, params: &BlockParams, causal: bool) -> Result<Matrix> {
    if z.cols() != params.model_dim() {
        return Err(Error::dims("transformer_block", params.model_dim(), z.cols()));
    }
    let attn = multi_head(z, params, causal)?;
    let z1 = layer_norm(&z.add(&attn)?, &params.ln1.gain, &params.ln1.bias)?;
    let ff = feed_forward(&z1, &params.ffn)?;
    layer_norm(&z1.add(&ff)?, &params.ln2.gain, &params.ln2.bias)
}

/// Blocks applied in order, each feeding the next.
pub fn run_blocks(x: &Matrix, blocks: &[BlockParams], causal: bool) -> Result<Matrix> {
    let mut z = x.clone();
    for b in blocks {
        z = transformer_block(&z, b, causal)?;
    }
    Ok(z)
}

/// Stacks the rows of `embedding` named by `ids`.
pub fn embed(embedding: &Matrix, ids: &[TokenId]) -> Result<Matrix> {
    let mut data = Vec::with_capacity(ids.len() * embedding.cols());
    for &id in ids {
        let idx = id as usize;
        if idx >= embedding.rows() {
            return Err(Error::OutOfRange {
                what: "token id",
                index: idx,
                limit: embedding.rows(),
            });
        }
        data.extend_from_slice(embedding.row(idx));
    }
    Matrix::new(ids.len(), embedding.cols(), data)
}

/// Runs `token` at the end of two different contexts through the stack and
/// returns the Euclidean distance between its two output rows. Both copies
/// start from the same embedding row, so any distance comes from attention.
pub fn contextual_distance(
    blocks: &[BlockParams],
    embedding: &Matrix,
    left: &[TokenId],
    right: &[TokenId],
    token: TokenId,
    causal: bool,
) -> Result<f64> {
    let last_row = |ctx: &[TokenId]| -> Result<Vec<f64>> {
        let mut ids = ctx.to_vec();
        ids.push(token);
        let h = run_blocks(&embed(embedding, &ids)?, blocks, causal)?;
        Ok(h.row(ids.len() - 1).to_vec())
    };
    let (a, b) = (last_row(left)?, last_row(right)?);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Logits `z_i = v_iᵀ h` against every row of the output embedding.
pub fn output_logits(e_out: &Matrix, h: &[f64]) -> Result<Vector> {
    if e_out.cols() != h.len() {
        return Err(Error::dims("output_logits", e_out.cols(), h.len()));
    }
    Ok(Vector::new((0..e_out.rows()).map(|i| dot_seq(e_out.row(i), h)).collect()))
}

/// Draws one index from `softmax(z / T)` by inverse-CDF sampling, scanning
/// from the lowest index.
pub fn sample_token(logits: &Vector, temperature: f64, rng: &mut Rng) -> Result<usize> {
    let p: ProbabilityVector = softmax_temperature(logits, temperature)?;
    Ok(p.sample_index(rng.uniform()))
}

/// Autoregressive decoding: embed the context, run the causal stack, read
/// the last row as the hidden state, sample the next token, append, repeat.
pub fn generate(
    blocks: &[BlockParams],
    e_in: &Matrix,
    e_out: &Matrix,
    prompt: &TokenSequence,
    temperature: f64,
    steps: usize,
    rng: &mut Rng,
) -> Result<TokenSequence> {
    if prompt.is_empty() {
        return Err(Error::Empty("prompt"));
    }
    if !(temperature > 0.0) {
        return Err(Error::param("temperature", format!("{temperature} must be > 0")));
    }
    if e_in.cols() != e_out.cols() {
        return Err(Error::dims("generate embeddings", e_in.cols(), e_out.cols()));
    }
    let vocab = e_in.rows().min(e_out.rows());
    if let Some(&bad) = prompt.ids().iter().find(|&&id| id as usize >= vocab) {
        return Err(Error::OutOfRange {
            what: "token id",
            index: bad as usize,
            limit: vocab,
        });
    }
    let mut seq = prompt.clone();
    for _ in 0..steps {
        let x = embed(e_in, seq.ids())?;
        let z = run_blocks(&x, blocks, true)?;
        let h = z.row(z.rows() - 1);
        let logits = output_logits(e_out, h)?;
        let next = sample_token(&logits, temperature, rng)?;
        if next >= e_in.rows() {
            return Err(Error::OutOfRange {
                what: "token id",
                index: next,
                limit: e_in.rows(),
            });
        }
        seq.push(next as TokenId);
    }
    Ok(seq)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StackManifest {
    d: usize,
    heads: usize,
    d_ff: usize,
    layers: usize,
    seed: Option<u64>,
}

fn row_matrix(v: &Vector) -> Matrix {
    Matrix::new(1, v.dim(), v.as_slice().to_vec()).expect("row shape")
}

/// Writes each block's matrices as `layer{l}_*.bin` plus `manifest.json`.
pub fn save_blocks(blocks: &[BlockParams], seed: Option<u64>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let first = blocks.first().ok_or(Error::Empty("block stack"))?;
    fs::create_dir_all(dir)?;
    for (l, b) in blocks.iter().enumerate() {
        b.validate()?;
        for (i, h) in b.heads.iter().enumerate() {
            io::save_binary(&h.wq, dir.join(format!("layer{l}_head{i}_WQ.bin")))?;
            io::save_binary(&h.wk, dir.join(format!("layer{l}_head{i}_WK.bin")))?;
            io::save_binary(&h.wv, dir.join(format!("layer{l}_head{i}_WV.bin")))?;
        }
        io::save_binary(&b.wo, dir.join(format!("layer{l}_WO.bin")))?;
        io::save_binary(&row_matrix(&b.ln1.gain), dir.join(format!("layer{l}_ln1_gain.bin")))?;
        io::save_binary(&row_matrix(&b.ln1.bias), dir.join(format!("layer{l}_ln1_bias.bin")))?;
        io::save_binary(&row_matrix(&b.ln2.gain), dir.join(format!("layer{l}_ln2_gain.bin")))?;
        io::save_binary(&row_matrix(&b.ln2.bias), dir.join(format!("layer{l}_ln2_bias.bin")))?;
        io::save_binary(&b.ffn.w_a, dir.join(format!("layer{l}_ffn_Wa.bin")))?;
        io::save_binary(&row_matrix(&b.ffn.b_a), dir.join(format!("layer{l}_ffn_ba.bin")))?;
        io::save_binary(&b.ffn.w_b, dir.join(format!("layer{l}_ffn_Wb.bin")))?;
        io::save_binary(&row_matrix(&b.ffn.b_b), dir.join(format!("layer{l}_ffn_bb.bin")))?;
    }
    let manifest = StackManifest {
        d: first.model_dim(),
        heads: first.heads.len(),
        d_ff: first.ffn.w_a.cols(),
        layers: blocks.len(),
        seed,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_blocks(dir: impl AsRef<Path>) -> Result<(Vec<BlockParams>, Option<u64>)> {
    let dir = dir.as_ref();
    let m: StackManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let vec_of = |name: String| -> Result<Vector> { Ok(Vector::new(io::load_binary(dir.join(name))?.into_data())) };
    let mut blocks = Vec::with_capacity(m.layers);
    for l in 0..m.layers {
        let heads = (0..m.heads)
            .map(|i| {
                AttentionHeadParams::new(
                    io::load_binary(dir.join(format!("layer{l}_head{i}_WQ.bin")))?,
                    io::load_binary(dir.join(format!("layer{l}_head{i}_WK.bin")))?,
                    io::load_binary(dir.join(format!("layer{l}_head{i}_WV.bin")))?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let b = BlockParams {
            heads,
            wo: io::load_binary(dir.join(format!("layer{l}_WO.bin")))?,
            ln1: LayerNormParams {
                gain: vec_of(format!("layer{l}_ln1_gain.bin"))?,
                bias: vec_of(format!("layer{l}_ln1_bias.bin"))?,
            },
            ln2: LayerNormParams {
                gain: vec_of(format!("layer{l}_ln2_gain.bin"))?,
                bias: vec_of(format!("layer{l}_ln2_bias.bin"))?,
            },
            ffn: FfnParams {
                w_a: io::load_binary(dir.join(format!("layer{l}_ffn_Wa.bin")))?,
                b_a: vec_of(format!("layer{l}_ffn_ba.bin"))?,
                w_b: io::load_binary(dir.join(format!("layer{l}_ffn_Wb.bin")))?,
                b_b: vec_of(format!("layer{l}_ffn_bb.bin"))?,
            },
        };
        b.validate()?;
        if b.model_dim() != m.d || b.ffn.w_a.cols() != m.d_ff {
            return Err(Error::dims("load_blocks", format!("d={} d_ff={}", m.d, m.d_ff), format!("layer {l}")));
        }
        blocks.push(b);
    }
    Ok((blocks, m.seed))
}
