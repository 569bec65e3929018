//! Three-way NLI classifier on sentence-pair features
//! `[h_p ; h_h ; |h_p − h_h|]`: two ReLU hidden layers, dropout on hidden
//! units, softmax cross-entropy.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{axpy, log_sum_exp, softmax_into, DenseMatrix, DenseVector};
use crate::trainer::optim::ParamSet;

pub const NLI_HIDDEN: usize = 256;
pub const NLI_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl NliLabel {
    pub const ALL: [NliLabel; 3] = [NliLabel::Entailment, NliLabel::Neutral, NliLabel::Contradiction];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NliLabel::Entailment => "entailment",
            NliLabel::Neutral => "neutral",
            NliLabel::Contradiction => "contradiction",
        }
    }
}

impl fmt::Display for NliLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NliLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entailment" => Ok(NliLabel::Entailment),
            "neutral" => Ok(NliLabel::Neutral),
            "contradiction" => Ok(NliLabel::Contradiction),
            other => Err(Error::InvalidLabel(other.to_string())),
        }
    }
}

impl TryFrom<usize> for NliLabel {
    type Error = Error;

    fn try_from(i: usize) -> Result<Self> {
        NliLabel::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidLabel(i.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliHead {
    pub w1: DenseMatrix,
    pub b1: DenseVector,
    pub w2: DenseMatrix,
    pub b2: DenseVector,
    pub w3: DenseMatrix,
    pub b3: DenseVector,
}

pub type NliHeadGrads = NliHead;

impl NliHead {
    /// Standard head: 256 hidden units per layer.
    pub fn new<R: Rng + ?Sized>(d_out: usize, rng: &mut R) -> Self {
        Self::with_hidden(d_out, NLI_HIDDEN, rng)
    }

    /// He-initialised head of arbitrary hidden width (small widths keep
    /// exhaustive gradient checks cheap).
    pub fn with_hidden<R: Rng + ?Sized>(d_out: usize, hidden: usize, rng: &mut R) -> Self {
        let mut head = Self::zeros(d_out, hidden);
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        for (w, fan_in) in [
            (&mut head.w1, 3 * d_out),
            (&mut head.w2, hidden),
            (&mut head.w3, hidden),
        ] {
            let scale = (2.0 / fan_in as f64).sqrt();
            for v in w.values_mut() {
                *v = scale * unit.sample(rng);
            }
        }
        head
    }

    pub fn zeros(d_out: usize, hidden: usize) -> Self {
        Self {
            w1: DenseMatrix::zeros(3 * d_out, hidden),
            b1: DenseVector::zeros(hidden),
            w2: DenseMatrix::zeros(hidden, hidden),
            b2: DenseVector::zeros(hidden),
            w3: DenseMatrix::zeros(hidden, NLI_CLASSES),
            b3: DenseVector::zeros(NLI_CLASSES),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim() / 3, self.hidden())
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in ParamSet::tensors_mut(self) {
            t.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn add(&mut self, other: &Self) {
        for (dst, src) in ParamSet::tensors_mut(self).into_iter().zip(ParamSet::tensors(other)) {
            axpy(1.0, src, dst);
        }
    }
}

impl ParamSet for NliHead {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.w1.values(),
            &self.b1,
            self.w2.values(),
            &self.b2,
            self.w3.values(),
            &self.b3,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.values_mut(),
            &mut self.b1,
            self.w2.values_mut(),
            &mut self.b2,
            self.w3.values_mut(),
            &mut self.b3,
        ]
    }
}

/// Per-hidden-unit keep masks for one example, already scaled by `1/(1−p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub layer1: Vec<f64>,
    pub layer2: Vec<f64>,
}

impl DropoutMask {
    pub fn sample<R: Rng + ?Sized>(hidden: usize, rate: f64, rng: &mut R) -> Self {
        let keep = 1.0 / (1.0 - rate);
        let mut draw = || -> Vec<f64> {
            (0..hidden)
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect()
        };
        let layer1 = draw();
        let layer2 = draw();
        Self { layer1, layer2 }
    }
}

pub fn pair_features(h_premise: &[f64], h_hypothesis: &[f64]) -> Vec<f64> {
    let mut f = Vec::with_capacity(3 * h_premise.len());
    f.extend_from_slice(h_premise);
    f.extend_from_slice(h_hypothesis);
    f.extend(h_premise.iter().zip(h_hypothesis).map(|(p, h)| (p - h).abs()));
    f
}

struct Activations {
    features: Vec<f64>,
    hidden1: Vec<f64>,
    hidden2: Vec<f64>,
    logits: Vec<f64>,
}

fn check_inputs(head: &NliHead, h_premise: &[f64], h_hypothesis: &[f64]) -> Result<()> {
    let d = head.input_dim() / 3;
    for v in [h_premise, h_hypothesis] {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: v.len(),
            });
        }
    }
    Ok(())
}

fn forward(head: &NliHead, h_premise: &[f64], h_hypothesis: &[f64], mask: Option<&DropoutMask>) -> Activations {
    let features = pair_features(h_premise, h_hypothesis);
    let layer = |w: &DenseMatrix, b: &[f64], x: &[f64], drop: Option<&Vec<f64>>| {
        let mut out = vec![0.0; w.cols()];
        w.vec_mul(x, &mut out);
        for (j, (o, bj)) in out.iter_mut().zip(b).enumerate() {
            *o = (*o + bj).max(0.0);
            if let Some(m) = drop {
                *o *= m[j];
            }
        }
        out
    };
    let hidden1 = layer(&head.w1, &head.b1, &features, mask.map(|m| &m.layer1));
    let hidden2 = layer(&head.w2, &head.b2, &hidden1, mask.map(|m| &m.layer2));
    let mut logits = head.b3.to_vec();
    let mut tmp = vec![0.0; NLI_CLASSES];
    head.w3.vec_mul(&hidden2, &mut tmp);
    axpy(1.0, &tmp, &mut logits);
    Activations {
        features,
        hidden1,
        hidden2,
        logits,
    }
}

/// Class probabilities (no dropout).
pub fn nli_predict(head: &NliHead, h_premise: &[f64], h_hypothesis: &[f64]) -> Result<[f64; 3]> {
    check_inputs(head, h_premise, h_hypothesis)?;
    let act = forward(head, h_premise, h_hypothesis, None);
    let mut p = [0.0; 3];
    softmax_into(&act.logits, &mut p);
    Ok(p)
}

/// Cross-entropy of the gold class, dropout disabled.
pub fn nli_forward_loss(head: &NliHead, h_premise: &[f64], h_hypothesis: &[f64], gold: NliLabel) -> Result<f64> {
    check_inputs(head, h_premise, h_hypothesis)?;
    let act = forward(head, h_premise, h_hypothesis, None);
    Ok(log_sum_exp(&act.logits) - act.logits[gold.index()])
}

#[derive(Debug, Clone)]
pub struct NliBackward {
    pub loss: f64,
    pub d_premise: DenseVector,
    pub d_hypothesis: DenseVector,
}

/// Loss for one example; accumulates head gradients (scaled by `weight`) into
/// `grads` and returns the weighted gradients for both sentence embeddings.
pub fn nli_loss_and_grads(
    head: &NliHead,
    h_premise: &[f64],
    h_hypothesis: &[f64],
    gold: NliLabel,
    mask: Option<&DropoutMask>,
    weight: f64,
    grads: &mut NliHeadGrads,
) -> Result<NliBackward> {
    check_inputs(head, h_premise, h_hypothesis)?;
    let act = forward(head, h_premise, h_hypothesis, mask);
    let lse = log_sum_exp(&act.logits);
    let loss = lse - act.logits[gold.index()];

    let mut d_logits = [0.0; NLI_CLASSES];
    for (d, l) in d_logits.iter_mut().zip(&act.logits) {
        *d = weight * (l - lse).exp();
    }
    d_logits[gold.index()] -= weight;

    grads.w3.add_outer(1.0, &act.hidden2, &d_logits);
    axpy(1.0, &d_logits, &mut grads.b3);

    // back through ReLU and dropout: the stored activation is zero exactly when
    // either gate closed, and otherwise equals relu·mask
    let relu_back = |d: &mut [f64], out: &[f64], drop: Option<&Vec<f64>>| {
        for (j, (dj, o)) in d.iter_mut().zip(out).enumerate() {
            if *o <= 0.0 {
                *dj = 0.0;
            } else if let Some(m) = drop {
                *dj *= m[j];
            }
        }
    };

    let mut d_h2 = vec![0.0; head.hidden()];
    head.w3.mul_vec(&d_logits, &mut d_h2);
    relu_back(&mut d_h2, &act.hidden2, mask.map(|m| &m.layer2));
    grads.w2.add_outer(1.0, &act.hidden1, &d_h2);
    axpy(1.0, &d_h2, &mut grads.b2);

    let mut d_h1 = vec![0.0; head.hidden()];
    head.w2.mul_vec(&d_h2, &mut d_h1);
    relu_back(&mut d_h1, &act.hidden1, mask.map(|m| &m.layer1));
    grads.w1.add_outer(1.0, &act.features, &d_h1);
    axpy(1.0, &d_h1, &mut grads.b1);

    let mut d_feat = vec![0.0; head.input_dim()];
    head.w1.mul_vec(&d_h1, &mut d_feat);
    let d = h_premise.len();
    let mut d_premise = DenseVector::new(d_feat[..d].to_vec());
    let mut d_hypothesis = DenseVector::new(d_feat[d..2 * d].to_vec());
    for j in 0..d {
        let diff = h_premise[j] - h_hypothesis[j];
        let s = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        d_premise[j] += s * d_feat[2 * d + j];
        d_hypothesis[j] -= s * d_feat[2 * d + j];
    }
    Ok(NliBackward {
        loss,
        d_premise,
        d_hypothesis,
    })
}
