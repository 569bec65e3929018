//! Retrieval, margin-based bitext mining, F1 and STS evaluation over frozen
//! embedding matrices.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::{MiningCorpus, StsPair};
use crate::encoder::{encode_batch_parallel, EncoderParams, PoolingMode, TokenSequence};
use crate::error::{Error, Result};
use crate::numerics::{dot, spearman_correlation, DenseMatrix, NORM_EPS};

/// Neighbor count for margin scoring.
pub const DEFAULT_MARGIN_K: usize = 3;

const QUERY_BLOCK: usize = 64;
const CORPUS_BLOCK: usize = 256;

/// Top-k neighbors of one query, most similar first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborList {
    pub indices: Vec<usize>,
    pub sims: Vec<f64>,
}

impl NeighborList {
    pub fn top(&self) -> Option<(usize, f64)> {
        Some((*self.indices.first()?, *self.sims.first()?))
    }

    /// Mean similarity of the first `k` neighbors.
    pub fn mean_sim(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.sims.len() {
            return Err(Error::KTooLarge {
                k,
                available: self.sims.len(),
            });
        }
        Ok(self.sims[..k].iter().sum::<f64>() / k as f64)
    }
}

fn by_score_then_index(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Exact top-k by dot product, computed block by block. Ties go to the lower
/// corpus index.
pub fn nn_search(queries: &DenseMatrix, corpus: &DenseMatrix, k: usize) -> Result<Vec<NeighborList>> {
    if k == 0 || k > corpus.rows() {
        return Err(Error::KTooLarge {
            k,
            available: corpus.rows(),
        });
    }
    if queries.rows() > 0 && queries.cols() != corpus.cols() {
        return Err(Error::DimensionMismatch {
            expected: corpus.cols(),
            actual: queries.cols(),
        });
    }
    let n = corpus.rows();
    let mut out = Vec::with_capacity(queries.rows());
    let mut sims = vec![0.0; QUERY_BLOCK * n];
    for q0 in (0..queries.rows()).step_by(QUERY_BLOCK) {
        let q1 = (q0 + QUERY_BLOCK).min(queries.rows());
        for c0 in (0..n).step_by(CORPUS_BLOCK) {
            let c1 = (c0 + CORPUS_BLOCK).min(n);
            for q in q0..q1 {
                let qrow = queries.row(q);
                let dst = &mut sims[(q - q0) * n..(q - q0 + 1) * n];
                for (c, slot) in dst.iter_mut().enumerate().take(c1).skip(c0) {
                    *slot = dot(qrow, corpus.row(c));
                }
            }
        }
        for q in q0..q1 {
            let row = &sims[(q - q0) * n..(q - q0 + 1) * n];
            let mut scored: Vec<(f64, usize)> = row.iter().copied().zip(0..n).collect();
            if k < n {
                scored.select_nth_unstable_by(k - 1, by_score_then_index);
                scored.truncate(k);
            }
            scored.sort_unstable_by(by_score_then_index);
            out.push(NeighborList {
                indices: scored.iter().map(|s| s.1).collect(),
                sims: scored.iter().map(|s| s.0).collect(),
            });
        }
    }
    Ok(out)
}

/// Fraction of aligned pairs retrieved at rank 1, in each direction
/// (`src → tgt`, `tgt → src`).
pub fn retrieval_accuracy(src: &DenseMatrix, tgt: &DenseMatrix) -> Result<(f64, f64)> {
    if src.rows() != tgt.rows() {
        return Err(Error::LengthMismatch {
            left: src.rows(),
            right: tgt.rows(),
        });
    }
    if src.rows() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let hits = |nn: Vec<NeighborList>| {
        nn.iter().enumerate().filter(|(i, l)| l.indices[0] == *i).count() as f64 / src.rows() as f64
    };
    Ok((hits(nn_search(src, tgt, 1)?), hits(nn_search(tgt, src, 1)?)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginVariant {
    /// `cos − b`
    #[default]
    Distance,
    /// `cos / b`
    Ratio,
}

impl fmt::Display for MarginVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MarginVariant::Distance => "distance",
            MarginVariant::Ratio => "ratio",
        })
    }
}

impl FromStr for MarginVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "distance" => Ok(MarginVariant::Distance),
            "ratio" => Ok(MarginVariant::Ratio),
            other => Err(format!("unknown margin `{other}` (distance|ratio)")),
        }
    }
}

/// Margin score of a candidate pair with similarity `cos_xy`, where `nn_x`
/// are x's neighbors on the other side and `nn_y` are y's.
///
/// The neighborhood term is `Σ cos(x,z)/2k + Σ cos(y,z)/2k` over the top `k`
/// of each list.
pub fn margin_score(
    cos_xy: f64,
    nn_x: &NeighborList,
    nn_y: &NeighborList,
    k: usize,
    variant: MarginVariant,
) -> Result<f64> {
    let b = 0.5 * nn_x.mean_sim(k)? + 0.5 * nn_y.mean_sim(k)?;
    match variant {
        MarginVariant::Distance => Ok(cos_xy - b),
        MarginVariant::Ratio => {
            if !(b.abs() > NORM_EPS) {
                return Err(Error::ZeroDenominator(b));
            }
            Ok(cos_xy / b)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub i: usize,
    pub j: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningResult {
    pub candidates: Vec<ScoredPair>,
    pub accepted: Vec<ScoredPair>,
    pub threshold: f64,
}

impl MiningResult {
    pub fn accepted_pairs(&self) -> Vec<(usize, usize)> {
        self.accepted.iter().map(|p| (p.i, p.j)).collect()
    }

    /// Re-thresholds the same candidates.
    pub fn with_threshold(&self, threshold: f64) -> Self {
        Self {
            candidates: self.candidates.clone(),
            accepted: self
                .candidates
                .iter()
                .copied()
                .filter(|p| p.score > threshold)
                .collect(),
            threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    /// Each sentence's rank-1 cosine neighbor, from both sides.
    #[default]
    UnionNn1,
    /// Every `(i, j)` pair.
    Exhaustive,
}

/// Scores candidate pairs with [`margin_score`] and accepts those above
/// `threshold`. No one-to-one constraint is imposed.
pub fn mine_bitext(
    embs_a: &DenseMatrix,
    embs_b: &DenseMatrix,
    k: usize,
    variant: MarginVariant,
    threshold: f64,
    mode: CandidateMode,
) -> Result<MiningResult> {
    if embs_a.rows() == 0 || embs_b.rows() == 0 {
        return Err(Error::EmptySide);
    }
    if threshold.is_nan() {
        return Err(Error::config("lambda", "threshold is NaN"));
    }
    let nn_a = nn_search(embs_a, embs_b, k)?;
    let nn_b = nn_search(embs_b, embs_a, k)?;
    let pairs: BTreeSet<(usize, usize)> = match mode {
        CandidateMode::UnionNn1 => nn_a
            .iter()
            .enumerate()
            .map(|(i, l)| (i, l.indices[0]))
            .chain(nn_b.iter().enumerate().map(|(j, l)| (l.indices[0], j)))
            .collect(),
        CandidateMode::Exhaustive => (0..embs_a.rows())
            .flat_map(|i| (0..embs_b.rows()).map(move |j| (i, j)))
            .collect(),
    };
    let mut candidates = Vec::with_capacity(pairs.len());
    for (i, j) in pairs {
        let cos = dot(embs_a.row(i), embs_b.row(j));
        let score = margin_score(cos, &nn_a[i], &nn_b[j], k, variant)?;
        candidates.push(ScoredPair { i, j, score });
    }
    let accepted = candidates.iter().copied().filter(|p| p.score > threshold).collect();
    Ok(MiningResult {
        candidates,
        accepted,
        threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Set-overlap precision, recall and F1. Empty predictions score zero.
pub fn f1(predicted: &[(usize, usize)], gold: &[(usize, usize)]) -> Prf {
    let pred: HashSet<_> = predicted.iter().collect();
    let gold: HashSet<_> = gold.iter().collect();
    prf(pred.intersection(&gold).count(), pred.len(), gold.len())
}

fn prf(tp: usize, n_pred: usize, n_gold: usize) -> Prf {
    if n_pred == 0 || n_gold == 0 || tp == 0 {
        return Prf {
            precision: if n_pred == 0 { 0.0 } else { tp as f64 / n_pred as f64 },
            recall: if n_gold == 0 { 0.0 } else { tp as f64 / n_gold as f64 },
            f1: 0.0,
        };
    }
    let precision = tp as f64 / n_pred as f64;
    let recall = tp as f64 / n_gold as f64;
    Prf {
        precision,
        recall,
        f1: 2.0 * precision * recall / (precision + recall),
    }
}

/// Picks the threshold maximizing F1 on labelled candidates.
///
/// Thresholds tried: `-∞`, the midpoints between consecutive distinct
/// scores, and `+∞`. Ties in F1 go to the larger threshold. Gold pairs absent
/// from `candidates` still count against recall.
pub fn search_threshold(candidates: &[ScoredPair], gold: &HashSet<(usize, usize)>) -> Result<(f64, f64)> {
    if gold.is_empty() {
        return Err(Error::NoGold);
    }
    let mut sorted: Vec<ScoredPair> = candidates.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    // walk scores high to low; each group of equal scores is accepted together
    let mut best = (f64::INFINITY, 0.0);
    let mut tp = 0;
    let mut idx = 0;
    while idx < sorted.len() {
        let s = sorted[idx].score;
        while idx < sorted.len() && sorted[idx].score == s {
            tp += gold.contains(&(sorted[idx].i, sorted[idx].j)) as usize;
            idx += 1;
        }
        let lambda = if idx < sorted.len() {
            0.5 * (s + sorted[idx].score)
        } else {
            f64::NEG_INFINITY
        };
        let score = prf(tp, idx, gold.len()).f1;
        // strictly greater keeps the larger threshold on ties
        if score > best.1 {
            best = (lambda, score);
        }
    }
    Ok(best)
}

/// Encodes `sentences` into the rows of a matrix.
pub fn embed_matrix(
    encoder: &EncoderParams,
    sentences: &[TokenSequence],
    pooling: PoolingMode,
    threads: usize,
) -> Result<DenseMatrix> {
    let rows = encode_batch_parallel(encoder, sentences, pooling, threads)?;
    DenseMatrix::from_rows(&rows, encoder.d_out())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MiningReport {
    pub variant: MarginVariant,
    /// Tuned on validation; may be infinite.
    pub lambda: f64,
    pub validation_f1: f64,
    pub test: Prf,
}

/// Tunes λ on the validation corpus, then mines the test corpus with it.
pub fn mining_eval(
    encoder_a: &EncoderParams,
    encoder_b: &EncoderParams,
    validation: &MiningCorpus,
    test: &MiningCorpus,
    variant: MarginVariant,
    pooling: PoolingMode,
    threads: usize,
) -> Result<MiningReport> {
    let embed = |c: &MiningCorpus| -> Result<(DenseMatrix, DenseMatrix)> {
        Ok((
            embed_matrix(encoder_a, &c.tokens_a(), pooling, threads)?,
            embed_matrix(encoder_b, &c.tokens_b(), pooling, threads)?,
        ))
    };
    let (va, vb) = embed(validation)?;
    let val = mine_bitext(
        &va,
        &vb,
        DEFAULT_MARGIN_K,
        variant,
        f64::INFINITY,
        CandidateMode::UnionNn1,
    )?;
    let (lambda, validation_f1) = search_threshold(&val.candidates, &validation.gold_set())?;
    let (ta, tb) = embed(test)?;
    let mined = mine_bitext(&ta, &tb, DEFAULT_MARGIN_K, variant, lambda, CandidateMode::UnionNn1)?;
    Ok(MiningReport {
        variant,
        lambda,
        validation_f1,
        test: f1(&mined.accepted_pairs(), &test.gold_pairs),
    })
}

/// Spearman correlation between model cosine (dot of unit vectors) and gold
/// similarity.
pub fn sts_eval(encoder: &EncoderParams, pairs: &[StsPair], pooling: PoolingMode) -> Result<f64> {
    sts_eval_threads(encoder, pairs, pooling, 1)
}

pub fn sts_eval_threads(
    encoder: &EncoderParams,
    pairs: &[StsPair],
    pooling: PoolingMode,
    threads: usize,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::DegenerateInput("no STS pairs"));
    }
    let first: Vec<_> = pairs.iter().map(|p| p.sent1.clone()).collect();
    let second: Vec<_> = pairs.iter().map(|p| p.sent2.clone()).collect();
    let h1 = encode_batch_parallel(encoder, &first, pooling, threads)?;
    let h2 = encode_batch_parallel(encoder, &second, pooling, threads)?;
    let model: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| dot(a, b)).collect();
    let gold: Vec<f64> = pairs.iter().map(|p| p.gold_sim).collect();
    spearman_correlation(&model, &gold)
}
