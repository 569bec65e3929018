//! Toy sentence encoder: token lookup, pooling, affine projection, tanh and
//! L2 normalization, with hand-written backward pass.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm, DenseMatrix, DenseVector, EmbeddingVector, NORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    #[default]
    Mean,
    Max,
    /// Representation of the first token, the `[CLS]` analogue.
    #[serde(alias = "first_token")]
    First,
}

impl fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolingMode::Mean => "mean",
            PoolingMode::Max => "max",
            PoolingMode::First => "first",
        })
    }
}

impl FromStr for PoolingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mean" => Ok(PoolingMode::Mean),
            "max" => Ok(PoolingMode::Max),
            "first" | "cls" => Ok(PoolingMode::First),
            other => Err(format!("unknown pooling mode `{other}` (mean|max|first)")),
        }
    }
}

/// Non-empty sequence of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl TryFrom<Vec<u32>> for TokenSequence {
    type Error = Error;

    fn try_from(ids: Vec<u32>) -> Result<Self> {
        Self::new(ids)
    }
}

impl From<TokenSequence> for Vec<u32> {
    fn from(seq: TokenSequence) -> Self {
        seq.0
    }
}

/// Trainable tensors of one encoder. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// `vocab_size × d_emb`
    pub embedding_table: DenseMatrix,
    /// `d_emb × d_out`
    pub proj_weight: DenseMatrix,
    pub proj_bias: DenseVector,
}

pub type EncoderGrads = EncoderParams;

impl EncoderParams {
    pub fn zeros(vocab_size: usize, d_emb: usize, d_out: usize) -> Self {
        Self {
            embedding_table: DenseMatrix::zeros(vocab_size, d_emb),
            proj_weight: DenseMatrix::zeros(d_emb, d_out),
            proj_bias: DenseVector::zeros(d_out),
        }
    }

    /// Embeddings ~ N(0, 1), projection ~ N(0, 1/d_emb), zero bias.
    pub fn random<R: Rng + ?Sized>(vocab_size: usize, d_emb: usize, d_out: usize, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(vocab_size, d_emb, d_out);
        params.validate()?;
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        for v in params.embedding_table.values_mut() {
            *v = unit.sample(rng);
        }
        let scale = 1.0 / (d_emb as f64).sqrt();
        for v in params.proj_weight.values_mut() {
            *v = scale * unit.sample(rng);
        }
        Ok(params)
    }

    pub fn from_parts(embedding_table: DenseMatrix, proj_weight: DenseMatrix, proj_bias: DenseVector) -> Result<Self> {
        let params = Self {
            embedding_table,
            proj_weight,
            proj_bias,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let (vocab, d_emb) = self.embedding_table.shape();
        let (w_in, d_out) = self.proj_weight.shape();
        if vocab == 0 {
            return Err(Error::ShapeMismatch("vocab_size must be at least 1".into()));
        }
        if d_out < 2 {
            return Err(Error::ShapeMismatch("d_out must be at least 2".into()));
        }
        if w_in != d_emb || self.proj_bias.len() != d_out {
            return Err(Error::ShapeMismatch(format!(
                "embedding {vocab}x{d_emb}, projection {w_in}x{d_out}, bias {}",
                self.proj_bias.len()
            )));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding_table.rows()
    }

    pub fn d_emb(&self) -> usize {
        self.embedding_table.cols()
    }

    pub fn d_out(&self) -> usize {
        self.proj_weight.cols()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.vocab_size(), self.d_emb(), self.d_out())
    }

    pub fn zeros_like(&self) -> Self {
        let (v, e, o) = self.shape();
        Self::zeros(v, e, o)
    }

    pub fn tensors(&self) -> [&[f64]; 3] {
        [
            self.embedding_table.values(),
            self.proj_weight.values(),
            self.proj_bias.as_slice(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [
            self.embedding_table.values_mut(),
            self.proj_weight.values_mut(),
            self.proj_bias.as_mut_slice(),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += alpha · other`, elementwise.
    pub fn add_scaled(&mut self, alpha: f64, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            crate::numerics::axpy(alpha, src, dst);
        }
        Ok(())
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
struct ForwardTrace {
    pooled: Vec<f64>,
    /// Token position that won each pooled dimension (max pooling only).
    argmax: Vec<usize>,
    activation: Vec<f64>,
    act_norm: f64,
    output: Vec<f64>,
}

fn check_tokens(params: &EncoderParams, tokens: &TokenSequence) -> Result<()> {
    let vocab_size = params.vocab_size();
    match tokens.ids().iter().find(|&&t| t as usize >= vocab_size) {
        Some(&token) => Err(Error::TokenOutOfRange { token, vocab_size }),
        None => Ok(()),
    }
}

fn pool(params: &EncoderParams, tokens: &[u32], mode: PoolingMode) -> (Vec<f64>, Vec<usize>) {
    let table = &params.embedding_table;
    let d = table.cols();
    match mode {
        PoolingMode::Mean => {
            let mut pooled = vec![0.0; d];
            for &t in tokens {
                for (p, e) in pooled.iter_mut().zip(table.row(t as usize)) {
                    *p += e;
                }
            }
            let inv = 1.0 / tokens.len() as f64;
            pooled.iter_mut().for_each(|p| *p *= inv);
            (pooled, Vec::new())
        }
        PoolingMode::Max => {
            let mut pooled = table.row(tokens[0] as usize).to_vec();
            let mut argmax = vec![0; d];
            for (pos, &t) in tokens.iter().enumerate().skip(1) {
                for ((p, a), e) in pooled.iter_mut().zip(argmax.iter_mut()).zip(table.row(t as usize)) {
                    // strict comparison keeps the earliest position on ties
                    if *e > *p {
                        *p = *e;
                        *a = pos;
                    }
                }
            }
            (pooled, argmax)
        }
        PoolingMode::First => (table.row(tokens[0] as usize).to_vec(), Vec::new()),
    }
}

fn forward(params: &EncoderParams, tokens: &TokenSequence, mode: PoolingMode) -> Result<ForwardTrace> {
    check_tokens(params, tokens)?;
    let (pooled, argmax) = pool(params, tokens.ids(), mode);
    let mut activation = params.proj_bias.to_vec();
    let mut projected = vec![0.0; params.d_out()];
    params.proj_weight.vec_mul(&pooled, &mut projected);
    for (a, p) in activation.iter_mut().zip(&projected) {
        *a = (*a + p).tanh();
    }
    let act_norm = l2_norm(&activation);
    if !(act_norm > NORM_EPS) {
        return Err(Error::ZeroVector { norm: act_norm });
    }
    let output = activation.iter().map(|a| a / act_norm).collect();
    Ok(ForwardTrace {
        pooled,
        argmax,
        activation,
        act_norm,
        output,
    })
}

/// `l2_normalize(tanh(pool(E[tokens]) · W + b))`.
pub fn encode(params: &EncoderParams, tokens: &TokenSequence, pooling: PoolingMode) -> Result<EmbeddingVector> {
    forward(params, tokens, pooling).map(|t| DenseVector::new(t.output))
}

pub fn encode_batch(
    params: &EncoderParams,
    batch: &[TokenSequence],
    pooling: PoolingMode,
) -> Result<Vec<EmbeddingVector>> {
    batch
        .iter()
        .enumerate()
        .map(|(i, tokens)| encode(params, tokens, pooling).map_err(|e| Error::in_batch(i, e)))
        .collect()
}

/// Same result as [`encode_batch`], split over `threads` scoped threads.
pub fn encode_batch_parallel(
    params: &EncoderParams,
    batch: &[TokenSequence],
    pooling: PoolingMode,
    threads: usize,
) -> Result<Vec<EmbeddingVector>> {
    if threads <= 1 || batch.len() < 2 * threads {
        return encode_batch(params, batch, pooling);
    }
    let chunk = batch.len().div_ceil(threads);
    let parts: Vec<Result<Vec<EmbeddingVector>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                scope.spawn(move || {
                    encode_batch(params, part, pooling).map_err(|e| match e {
                        Error::InBatch { index, source } => Error::InBatch {
                            index: index + c * chunk,
                            source,
                        },
                        other => other,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("encoder thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(batch.len());
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// Gradient of `Σᵢ upstream[i] · encode(batch[i])` with respect to all encoder
/// parameters.
///
/// Max pooling routes each dimension's subgradient to the earliest token that
/// attains the maximum.
pub fn encode_backward(
    params: &EncoderParams,
    batch: &[TokenSequence],
    pooling: PoolingMode,
    upstream: &[DenseVector],
) -> Result<EncoderGrads> {
    let mut grads = params.zeros_like();
    accumulate_backward(params, batch, pooling, upstream, &mut grads)?;
    Ok(grads)
}

/// Like [`encode_backward`] but adds into an existing gradient buffer.
pub fn accumulate_backward(
    params: &EncoderParams,
    batch: &[TokenSequence],
    pooling: PoolingMode,
    upstream: &[DenseVector],
    grads: &mut EncoderGrads,
) -> Result<()> {
    if upstream.len() != batch.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} upstream vectors for a batch of {}",
            upstream.len(),
            batch.len()
        )));
    }
    if grads.shape() != params.shape() {
        return Err(Error::ShapeMismatch("gradient buffer shape differs from params".into()));
    }
    let d_out = params.d_out();
    let d_emb = params.d_emb();
    let mut d_act = vec![0.0; d_out];
    let mut d_pooled = vec![0.0; d_emb];
    for (i, (tokens, g)) in batch.iter().zip(upstream).enumerate() {
        if g.len() != d_out {
            return Err(Error::ShapeMismatch(format!(
                "upstream[{i}] has dimension {}, expected {d_out}",
                g.len()
            )));
        }
        if g.iter().all(|v| *v == 0.0) {
            continue;
        }
        let trace = forward(params, tokens, pooling).map_err(|e| Error::in_batch(i, e))?;

        // normalization Jacobian: (g - (g·h) h) / ||a||, then tanh' = 1 - a²
        let gh = dot(g, &trace.output);
        for (((da, gi), hi), ai) in d_act.iter_mut().zip(g.iter()).zip(&trace.output).zip(&trace.activation) {
            *da = (gi - gh * hi) / trace.act_norm * (1.0 - ai * ai);
        }

        grads.proj_weight.add_outer(1.0, &trace.pooled, &d_act);
        crate::numerics::axpy(1.0, &d_act, &mut grads.proj_bias);
        params.proj_weight.mul_vec(&d_act, &mut d_pooled);

        let ids = tokens.ids();
        let table = &mut grads.embedding_table;
        match pooling {
            PoolingMode::Mean => {
                let inv = 1.0 / ids.len() as f64;
                for &t in ids {
                    crate::numerics::axpy(inv, &d_pooled, table.row_mut(t as usize));
                }
            }
            PoolingMode::Max => {
                for (j, (&pos, dp)) in trace.argmax.iter().zip(&d_pooled).enumerate() {
                    table.row_mut(ids[pos] as usize)[j] += dp;
                }
            }
            PoolingMode::First => {
                crate::numerics::axpy(1.0, &d_pooled, table.row_mut(ids[0] as usize));
            }
        }
    }
    Ok(())
}
