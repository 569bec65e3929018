#![allow(dead_code)]

use std::collections::HashSet;

use dualmoco::encoder::{EncoderParams, PoolingMode, TokenSequence};
use dualmoco::eval::{f1, nn_search, NeighborList, ScoredPair};
use dualmoco::moco::{DualMocoState, MemoryQueue, MomentumEncoder};
use dualmoco::numerics::{dot, l2_normalize, DenseMatrix, DenseVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative error with a 1e-3 floor on the denominator: central differences at
/// step 1e-6 carry ~1e-10 of rounding noise, which would otherwise dominate
/// near-zero components.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

pub fn unit_vector<R: Rng>(rng: &mut R, d: usize) -> DenseVector {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    l2_normalize(&v).unwrap()
}

pub fn random_sequence<R: Rng>(rng: &mut R, vocab: usize, len_min: usize, len_max: usize) -> TokenSequence {
    let len = rng.random_range(len_min..=len_max);
    TokenSequence::new((0..len).map(|_| rng.random_range(0..vocab as u32)).collect()).unwrap()
}

pub fn random_batch<R: Rng>(rng: &mut R, vocab: usize, n: usize) -> Vec<TokenSequence> {
    (0..n).map(|_| random_sequence(rng, vocab, 2, 6)).collect()
}

pub fn filled_queue<R: Rng>(rng: &mut R, capacity: usize, filled: usize, dim: usize) -> MemoryQueue {
    let mut q = MemoryQueue::new(capacity, dim).unwrap();
    let keys: Vec<DenseVector> = (0..filled).map(|_| unit_vector(rng, dim)).collect();
    q.enqueue_batch(&keys).unwrap();
    q
}

pub struct TinyInstance {
    pub state: DualMocoState,
    pub batch_a: Vec<TokenSequence>,
    pub batch_b: Vec<TokenSequence>,
}

/// vocab 10, d = 8, batch 4, both queues holding 16 random keys, momentum
/// encoders independent of the bases.
pub fn tiny_instance(seed: u64) -> TinyInstance {
    let mut r = rng(seed);
    let (vocab, d, batch, filled) = (10, 8, 4, 16);
    let base_a = EncoderParams::random(vocab, d, d, &mut r).unwrap();
    let base_b = EncoderParams::random(vocab, d, d, &mut r).unwrap();
    let temperature = r.random_range(0.05..0.5);
    let mut state = DualMocoState::new(base_a, base_b, 0.9, filled, temperature).unwrap();
    state.momentum_a = MomentumEncoder::new(EncoderParams::random(vocab, d, d, &mut r).unwrap(), 0.9).unwrap();
    state.momentum_b = MomentumEncoder::new(EncoderParams::random(vocab, d, d, &mut r).unwrap(), 0.9).unwrap();
    state.queue_a = filled_queue(&mut r, filled, filled, d);
    state.queue_b = filled_queue(&mut r, filled, filled, d);
    TinyInstance {
        state,
        batch_a: random_batch(&mut r, vocab, batch),
        batch_b: random_batch(&mut r, vocab, batch),
    }
}

/// Central differences of `f` with respect to every entry of `params`.
pub fn numeric_grad(params: &EncoderParams, f: impl Fn(&EncoderParams) -> f64) -> Vec<Vec<f64>> {
    let mut probe = params.clone();
    let mut out = Vec::new();
    for t in 0..3 {
        let len = params.tensors()[t].len();
        let mut g = vec![0.0; len];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = probe.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + FD_STEP;
            let plus = f(&probe);
            probe.tensors_mut()[t][i] = orig - FD_STEP;
            let minus = f(&probe);
            probe.tensors_mut()[t][i] = orig;
            *gi = (plus - minus) / (2.0 * FD_STEP);
        }
        out.push(g);
    }
    out
}

pub fn max_rel_err(analytic: &EncoderParams, numeric: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.tensors().iter().zip(numeric) {
        for (x, y) in a.iter().zip(n) {
            worst = worst.max(rel_err(*x, *y));
        }
    }
    worst
}

/// Worst relative error of the analytic bidirectional-loss gradient over
/// both base encoders, with momentum encoders and queues frozen.
pub fn full_loss_grad_error(inst: &TinyInstance, pooling: PoolingMode) -> f64 {
    let (_, grads) = inst
        .state
        .loss_and_grads(&inst.batch_a, &inst.batch_b, pooling)
        .unwrap();
    let num_a = numeric_grad(&inst.state.base_a, |p| {
        let mut s = inst.state.clone();
        s.base_a = p.clone();
        s.bidirectional_loss(&inst.batch_a, &inst.batch_b, pooling)
            .unwrap()
            .total
    });
    let num_b = numeric_grad(&inst.state.base_b, |p| {
        let mut s = inst.state.clone();
        s.base_b = p.clone();
        s.bidirectional_loss(&inst.batch_a, &inst.batch_b, pooling)
            .unwrap()
            .total
    });
    max_rel_err(&grads.base_a, &num_a).max(max_rel_err(&grads.base_b, &num_b))
}

/// Reference queue: the last `capacity` keys in insertion order.
pub fn replay_last_k(history: &[Vec<f64>], capacity: usize) -> Vec<Vec<f64>> {
    history[history.len().saturating_sub(capacity)..].to_vec()
}

pub fn unit_matrix<R: Rng>(rng: &mut R, n: usize, d: usize) -> DenseMatrix {
    let rows: Vec<DenseVector> = (0..n).map(|_| unit_vector(rng, d)).collect();
    DenseMatrix::from_rows(&rows, d).unwrap()
}

pub fn naive_knn(queries: &DenseMatrix, corpus: &DenseMatrix, k: usize) -> Vec<NeighborList> {
    queries
        .iter_rows()
        .map(|q| {
            let mut all: Vec<(usize, f64)> = corpus.iter_rows().map(|c| dot(q, c)).enumerate().collect();
            all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            all.truncate(k);
            NeighborList {
                indices: all.iter().map(|p| p.0).collect(),
                sims: all.iter().map(|p| p.1).collect(),
            }
        })
        .collect()
}

/// F1 for every threshold in `grid`; returns the best value and the largest
/// threshold achieving it.
pub fn brute_force_threshold(candidates: &[ScoredPair], gold: &HashSet<(usize, usize)>) -> (f64, f64) {
    let gold_vec: Vec<(usize, usize)> = gold.iter().copied().collect();
    let mut scores: Vec<f64> = candidates.iter().map(|c| c.score).collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    let mut grid = vec![f64::NEG_INFINITY, f64::INFINITY];
    grid.extend(scores.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    let mut best = (f64::NEG_INFINITY, -1.0);
    for &lambda in &grid {
        let accepted: Vec<(usize, usize)> = candidates
            .iter()
            .filter(|c| c.score > lambda)
            .map(|c| (c.i, c.j))
            .collect();
        let score = f1(&accepted, &gold_vec).f1;
        if score > best.1 || (score == best.1 && lambda > best.0) {
            best = (lambda, score);
        }
    }
    best
}

/// Gold pairs are noisy copies of each other and mutual rank-1 neighbors;
/// everything else is random.
pub fn mining_instance(seed: u64, n: usize, n_gold: usize) -> (DenseMatrix, DenseMatrix, HashSet<(usize, usize)>) {
    let mut r = rng(seed);
    let d = 16;
    let a: Vec<DenseVector> = (0..n).map(|_| unit_vector(&mut r, d)).collect();
    let mut b: Vec<DenseVector> = (0..n).map(|_| unit_vector(&mut r, d)).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut r);
    let mut gold = HashSet::new();
    for (i, &j) in perm.iter().enumerate().take(n_gold) {
        let noisy: Vec<f64> = a[i].iter().map(|v| v + 0.05 * r.random_range(-1.0..1.0)).collect();
        b[j] = l2_normalize(&noisy).unwrap();
        gold.insert((i, j));
    }
    (
        DenseMatrix::from_rows(&a, d).unwrap(),
        DenseMatrix::from_rows(&b, d).unwrap(),
        gold,
    )
}

pub fn is_mutual_nn1(a: &DenseMatrix, b: &DenseMatrix, pairs: &HashSet<(usize, usize)>) -> bool {
    let fwd = nn_search(a, b, 1).unwrap();
    let bwd = nn_search(b, a, 1).unwrap();
    pairs
        .iter()
        .all(|&(i, j)| fwd[i].indices[0] == j && bwd[j].indices[0] == i)
}
