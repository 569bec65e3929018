//! Dual momentum contrast: per-language momentum encoders and memory queues,
//! InfoNCE with stop-gradient keys, and the symmetric two-direction objective.

use serde::{Deserialize, Serialize};

use crate::encoder::{encode_backward, encode_batch, EncoderGrads, EncoderParams, PoolingMode, TokenSequence};
use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm, log_sum_exp, DenseVector, EmbeddingVector};

/// Keys entering a queue must have `| ||k|| - 1 | <= KEY_NORM_TOL`.
pub const KEY_NORM_TOL: f64 = 1e-6;
/// Looser check on loss inputs, so finite-difference probes of a unit query
/// are still accepted.
pub const INPUT_NORM_TOL: f64 = 1e-4;

/// Fixed-capacity FIFO ring of unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryQueue {
    capacity: usize,
    dim: usize,
    slots: Vec<f64>,
    write_index: usize,
    filled: usize,
}

impl MemoryQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("queue_capacity", "must be at least 1"));
        }
        if dim == 0 {
            return Err(Error::ShapeMismatch("queue dimension must be at least 1".into()));
        }
        Ok(Self {
            capacity,
            dim,
            slots: vec![0.0; capacity * dim],
            write_index: 0,
            filled: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn filled(&self) -> usize {
        self.filled
    }

    pub fn write_index(&self) -> usize {
        self.write_index
    }

    pub fn is_empty(&self) -> bool {
        self.filled == 0
    }

    pub fn slot(&self, i: usize) -> &[f64] {
        &self.slots[i * self.dim..(i + 1) * self.dim]
    }

    /// The occupied slots in storage order. Before the first wraparound these
    /// are `0..filled`; afterwards every slot is occupied.
    pub fn negatives(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.slots.chunks_exact(self.dim).take(self.filled)
    }

    /// Stored keys from oldest to newest.
    pub fn in_age_order(&self) -> Vec<&[f64]> {
        let start = if self.filled < self.capacity {
            0
        } else {
            self.write_index
        };
        (0..self.filled)
            .map(|i| self.slot((start + i) % self.capacity))
            .collect()
    }

    /// Writes `keys` at consecutive ring positions, overwriting the oldest.
    pub fn enqueue_batch<K: AsRef<[f64]>>(&mut self, keys: &[K]) -> Result<()> {
        if keys.len() > self.capacity {
            return Err(Error::BatchExceedsCapacity {
                batch: keys.len(),
                capacity: self.capacity,
            });
        }
        for key in keys {
            let key = key.as_ref();
            if key.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    actual: key.len(),
                });
            }
            let norm = l2_norm(key);
            if !((norm - 1.0).abs() <= KEY_NORM_TOL) {
                return Err(Error::NonUnitKey { norm });
            }
        }
        for key in keys {
            let at = self.write_index * self.dim;
            self.slots[at..at + self.dim].copy_from_slice(key.as_ref());
            self.write_index = (self.write_index + 1) % self.capacity;
        }
        self.filled = (self.filled + keys.len()).min(self.capacity);
        Ok(())
    }
}

/// Gradient-free EMA copy of a base encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumEncoder {
    pub params: EncoderParams,
    coefficient: f64,
}

impl MomentumEncoder {
    /// Starts as an exact copy of `base`.
    pub fn from_base(base: &EncoderParams, coefficient: f64) -> Result<Self> {
        Self::new(base.clone(), coefficient)
    }

    pub fn new(params: EncoderParams, coefficient: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&coefficient) {
            return Err(Error::config(
                "momentum",
                format!("must lie in [0, 1], got {coefficient}"),
            ));
        }
        Ok(Self { params, coefficient })
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }

    /// `θ ← m·θ + (1 − m)·θ_base`, elementwise.
    pub fn update_from(&mut self, base: &EncoderParams) -> Result<()> {
        if base.shape() != self.params.shape() {
            return Err(Error::ShapeMismatch(format!(
                "momentum encoder {:?} vs base {:?}",
                self.params.shape(),
                base.shape()
            )));
        }
        let m = self.coefficient;
        for (theta, base) in self.params.tensors_mut().into_iter().zip(base.tensors()) {
            for (t, b) in theta.iter_mut().zip(base) {
                *t = m * *t + (1.0 - m) * b;
            }
        }
        Ok(())
    }
}

/// Functional form of [`MomentumEncoder::update_from`].
pub fn momentum_update(base: &EncoderParams, momentum: &MomentumEncoder) -> Result<MomentumEncoder> {
    let mut next = momentum.clone();
    next.update_from(base)?;
    Ok(next)
}

fn check_unit(v: &[f64]) -> Result<()> {
    let norm = l2_norm(v);
    if !((norm - 1.0).abs() <= INPUT_NORM_TOL) {
        return Err(Error::NonUnitInput { norm });
    }
    Ok(())
}

fn check_loss_inputs(query: &[f64], positive: &[f64], queue: &MemoryQueue, temperature: f64) -> Result<()> {
    if !(temperature > 0.0) {
        return Err(Error::NonPositiveTemperature(temperature));
    }
    for v in [query, positive] {
        if v.len() != queue.dim() {
            return Err(Error::DimensionMismatch {
                expected: queue.dim(),
                actual: v.len(),
            });
        }
    }
    check_unit(query)?;
    check_unit(positive)
}

/// Similarities of `query` against the positive (index 0) followed by every
/// occupied queue slot.
pub fn contrast_similarities(query: &[f64], positive: &[f64], queue: &MemoryQueue) -> Vec<f64> {
    let mut sims = Vec::with_capacity(queue.filled() + 1);
    sims.push(dot(query, positive));
    sims.extend(queue.negatives().map(|k| dot(query, k)));
    sims
}

/// Loss and, optionally, its gradient with respect to the query.
fn info_nce_inner(
    query: &[f64],
    positive: &[f64],
    queue: &MemoryQueue,
    temperature: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    if queue.is_empty() {
        if let Some(g) = grad {
            g.fill(0.0);
        }
        return 0.0;
    }
    let logits: Vec<f64> = contrast_similarities(query, positive, queue)
        .into_iter()
        .map(|s| s / temperature)
        .collect();
    let lse = log_sum_exp(&logits);
    let loss = (lse - logits[0]).max(0.0);
    if let Some(g) = grad {
        // (Σᵢ pᵢ kᵢ − k⁺) / τ with the positive inside the sum
        let p0 = (logits[0] - lse).exp();
        for (gj, kj) in g.iter_mut().zip(positive) {
            *gj = (p0 - 1.0) * kj;
        }
        for (logit, key) in logits[1..].iter().zip(queue.negatives()) {
            let p = (logit - lse).exp();
            crate::numerics::axpy(p, key, g);
        }
        g.iter_mut().for_each(|v| *v /= temperature);
    }
    loss
}

/// `−log softmax` of the positive among `{k⁺} ∪ queue`, temperature-scaled.
pub fn info_nce(query: &[f64], positive: &[f64], queue: &MemoryQueue, temperature: f64) -> Result<f64> {
    check_loss_inputs(query, positive, queue, temperature)?;
    Ok(info_nce_inner(query, positive, queue, temperature, None))
}

/// `∂ info_nce / ∂ query`, with keys and queue held constant.
pub fn info_nce_query_grad(
    query: &[f64],
    positive: &[f64],
    queue: &MemoryQueue,
    temperature: f64,
) -> Result<DenseVector> {
    check_loss_inputs(query, positive, queue, temperature)?;
    let mut g = DenseVector::zeros(query.len());
    info_nce_inner(query, positive, queue, temperature, Some(&mut g));
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    /// Language A queries against language B keys.
    pub forward: f64,
    /// Language B queries against language A keys.
    pub backward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MocoGrads {
    pub base_a: EncoderGrads,
    pub base_b: EncoderGrads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualMocoState {
    pub base_a: EncoderParams,
    pub base_b: EncoderParams,
    pub momentum_a: MomentumEncoder,
    pub momentum_b: MomentumEncoder,
    pub queue_a: MemoryQueue,
    pub queue_b: MemoryQueue,
    temperature: f64,
}

impl DualMocoState {
    /// Momentum encoders start as copies of their base encoders; queues start
    /// empty.
    pub fn new(
        base_a: EncoderParams,
        base_b: EncoderParams,
        momentum: f64,
        queue_capacity: usize,
        temperature: f64,
    ) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::NonPositiveTemperature(temperature));
        }
        base_a.validate()?;
        base_b.validate()?;
        if base_a.d_out() != base_b.d_out() {
            return Err(Error::ShapeMismatch(format!(
                "output dims differ: {} vs {}",
                base_a.d_out(),
                base_b.d_out()
            )));
        }
        let dim = base_a.d_out();
        Ok(Self {
            momentum_a: MomentumEncoder::from_base(&base_a, momentum)?,
            momentum_b: MomentumEncoder::from_base(&base_b, momentum)?,
            queue_a: MemoryQueue::new(queue_capacity, dim)?,
            queue_b: MemoryQueue::new(queue_capacity, dim)?,
            base_a,
            base_b,
            temperature,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn dim(&self) -> usize {
        self.base_a.d_out()
    }

    /// The same state with the roles of the two languages exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            base_a: self.base_b.clone(),
            base_b: self.base_a.clone(),
            momentum_a: self.momentum_b.clone(),
            momentum_b: self.momentum_a.clone(),
            queue_a: self.queue_b.clone(),
            queue_b: self.queue_a.clone(),
            temperature: self.temperature,
        }
    }

    /// Mean InfoNCE of `base_q` queries against `momentum_k` keys, plus the
    /// per-query upstream gradient (already divided by the batch size).
    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        base_q: &EncoderParams,
        momentum_k: &MomentumEncoder,
        queue: &MemoryQueue,
        queries: &[TokenSequence],
        keys: &[TokenSequence],
        pooling: PoolingMode,
        with_grad: bool,
    ) -> Result<(f64, Vec<DenseVector>)> {
        let q = encode_batch(base_q, queries, pooling)?;
        let k = encode_batch(&momentum_k.params, keys, pooling)?;
        let n = queries.len();
        let mut total = 0.0;
        let mut upstream = Vec::with_capacity(if with_grad { n } else { 0 });
        for (qi, ki) in q.iter().zip(&k) {
            if with_grad {
                let mut g = DenseVector::zeros(qi.len());
                total += info_nce_inner(qi, ki, queue, self.temperature, Some(&mut g));
                g.iter_mut().for_each(|v| *v /= n as f64);
                upstream.push(g);
            } else {
                total += info_nce_inner(qi, ki, queue, self.temperature, None);
            }
        }
        Ok((total / n as f64, upstream))
    }

    fn check_batches(batch_a: &[TokenSequence], batch_b: &[TokenSequence]) -> Result<()> {
        if batch_a.len() != batch_b.len() {
            return Err(Error::BatchLengthMismatch {
                left: batch_a.len(),
                right: batch_b.len(),
            });
        }
        if batch_a.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(())
    }

    /// Two-direction loss on a parallel batch. Does not touch the state.
    pub fn bidirectional_loss(
        &self,
        batch_a: &[TokenSequence],
        batch_b: &[TokenSequence],
        pooling: PoolingMode,
    ) -> Result<LossValue> {
        Self::check_batches(batch_a, batch_b)?;
        let (forward, _) = self.direction(
            &self.base_a,
            &self.momentum_b,
            &self.queue_b,
            batch_a,
            batch_b,
            pooling,
            false,
        )?;
        let (backward, _) = self.direction(
            &self.base_b,
            &self.momentum_a,
            &self.queue_a,
            batch_b,
            batch_a,
            pooling,
            false,
        )?;
        Ok(LossValue {
            total: forward + backward,
            forward,
            backward,
        })
    }

    /// Loss plus gradients for the two base encoders. Momentum encoders and
    /// queues are constants here.
    pub fn loss_and_grads(
        &self,
        batch_a: &[TokenSequence],
        batch_b: &[TokenSequence],
        pooling: PoolingMode,
    ) -> Result<(LossValue, MocoGrads)> {
        Self::check_batches(batch_a, batch_b)?;
        let (forward, up_a) = self.direction(
            &self.base_a,
            &self.momentum_b,
            &self.queue_b,
            batch_a,
            batch_b,
            pooling,
            true,
        )?;
        let (backward, up_b) = self.direction(
            &self.base_b,
            &self.momentum_a,
            &self.queue_a,
            batch_b,
            batch_a,
            pooling,
            true,
        )?;
        let grads = MocoGrads {
            base_a: encode_backward(&self.base_a, batch_a, pooling, &up_a)?,
            base_b: encode_backward(&self.base_b, batch_b, pooling, &up_b)?,
        };
        let loss = LossValue {
            total: forward + backward,
            forward,
            backward,
        };
        Ok((loss, grads))
    }

    /// End-of-step bookkeeping: EMA-update both momentum encoders, re-encode
    /// the batch with the updated momentum params, enqueue the keys.
    pub fn advance(
        &mut self,
        batch_a: &[TokenSequence],
        batch_b: &[TokenSequence],
        pooling: PoolingMode,
    ) -> Result<()> {
        Self::check_batches(batch_a, batch_b)?;
        self.momentum_a.update_from(&self.base_a)?;
        self.momentum_b.update_from(&self.base_b)?;
        let keys_a = encode_batch(&self.momentum_a.params, batch_a, pooling)?;
        let keys_b = encode_batch(&self.momentum_b.params, batch_b, pooling)?;
        self.queue_a.enqueue_batch(&keys_a)?;
        self.queue_b.enqueue_batch(&keys_b)?;
        Ok(())
    }

    /// One step without an optimizer: loss and base gradients on the current
    /// state, then momentum update and enqueue.
    pub fn moco_step(
        &mut self,
        batch_a: &[TokenSequence],
        batch_b: &[TokenSequence],
        pooling: PoolingMode,
    ) -> Result<(LossValue, MocoGrads)> {
        let out = self.loss_and_grads(batch_a, batch_b, pooling)?;
        self.advance(batch_a, batch_b, pooling)?;
        Ok(out)
    }

    /// Keys the momentum encoders would produce for a batch, without
    /// mutating anything.
    pub fn momentum_keys(
        &self,
        batch_a: &[TokenSequence],
        batch_b: &[TokenSequence],
        pooling: PoolingMode,
    ) -> Result<(Vec<EmbeddingVector>, Vec<EmbeddingVector>)> {
        Ok((
            encode_batch(&self.momentum_a.params, batch_a, pooling)?,
            encode_batch(&self.momentum_b.params, batch_b, pooling)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::l2_normalize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(i: usize, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    fn queue_with(keys: &[Vec<f64>], capacity: usize) -> MemoryQueue {
        let mut q = MemoryQueue::new(capacity, keys[0].len()).unwrap();
        q.enqueue_batch(keys).unwrap();
        q
    }

    fn rand_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        l2_normalize(&v).unwrap().into_inner()
    }

    #[test]
    fn momentum_update_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let base = EncoderParams::random(5, 3, 2, &mut rng).unwrap();
        let other = EncoderParams::random(5, 3, 2, &mut rng).unwrap();

        let frozen = MomentumEncoder::new(other.clone(), 1.0).unwrap();
        assert_eq!(momentum_update(&base, &frozen).unwrap().params, other);

        let copy = MomentumEncoder::new(other.clone(), 0.0).unwrap();
        assert_eq!(momentum_update(&base, &copy).unwrap().params, base);

        let mut one = EncoderParams::zeros(1, 1, 2);
        one.embedding_table.values_mut()[0] = 1.0;
        let mut two = EncoderParams::zeros(1, 1, 2);
        two.embedding_table.values_mut()[0] = 2.0;
        let m = MomentumEncoder::new(two, 0.999).unwrap();
        let next = momentum_update(&one, &m).unwrap();
        assert!((next.params.embedding_table.values()[0] - 1.999).abs() < 1e-15);

        assert!(MomentumEncoder::new(base.clone(), 1.5).is_err());
        let wrong = EncoderParams::zeros(4, 3, 2);
        assert!(matches!(momentum_update(&wrong, &frozen), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn enqueue_fill_and_wrap() {
        let mut q = MemoryQueue::new(4, 4).unwrap();
        q.enqueue_batch(&[e(0, 4), e(1, 4)]).unwrap();
        assert_eq!(q.filled(), 2);
        assert_eq!(q.in_age_order(), vec![&e(0, 4)[..], &e(1, 4)[..]]);

        q.enqueue_batch(&[e(2, 4), e(3, 4)]).unwrap();
        assert_eq!(q.write_index(), 0);
        let f: Vec<f64> = l2_normalize(&[1.0, 1.0, 0.0, 0.0]).unwrap().into_inner();
        q.enqueue_batch(&[f.clone(), e(0, 4)]).unwrap();
        assert_eq!(q.slot(0), &f[..]);
        assert_eq!(q.slot(1), &e(0, 4)[..]);
        assert_eq!(q.slot(2), &e(2, 4)[..]);
        assert_eq!(q.slot(3), &e(3, 4)[..]);
        assert_eq!(q.write_index(), 2);
        assert_eq!(q.filled(), 4);
    }

    #[test]
    fn enqueue_errors() {
        let mut q = MemoryQueue::new(2, 2).unwrap();
        let keys = vec![e(0, 2), e(1, 2), e(0, 2)];
        assert!(matches!(
            q.enqueue_batch(&keys),
            Err(Error::BatchExceedsCapacity { batch: 3, capacity: 2 })
        ));
        assert!(matches!(
            q.enqueue_batch(&[vec![1.0, 1.0]]),
            Err(Error::NonUnitKey { .. })
        ));
        assert!(matches!(
            q.enqueue_batch(&[vec![1.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert_eq!(q.filled(), 0);
    }

    #[test]
    fn info_nce_examples() {
        let empty = MemoryQueue::new(3, 3).unwrap();
        assert_eq!(info_nce(&e(0, 3), &e(0, 3), &empty, 1.0).unwrap(), 0.0);
        assert!(info_nce_query_grad(&e(0, 3), &e(0, 3), &empty, 1.0)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));

        let q = queue_with(&[e(1, 3), e(2, 3)], 4);
        let expected = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        assert!((expected - 0.551445).abs() < 1e-6);
        let loss = info_nce(&e(0, 3), &e(0, 3), &q, 1.0).unwrap();
        assert!((loss - expected).abs() < 1e-12);

        let g = info_nce_query_grad(&e(0, 3), &e(0, 3), &q, 1.0).unwrap();
        for (a, b) in g.iter().zip([-0.42388, 0.21194, 0.21194]) {
            assert!((a - b).abs() < 1e-5, "{g:?}");
        }
    }

    #[test]
    fn info_nce_errors() {
        let q = queue_with(&[e(1, 3)], 2);
        assert!(matches!(
            info_nce(&e(0, 3), &e(0, 3), &q, 0.0),
            Err(Error::NonPositiveTemperature(_))
        ));
        assert!(matches!(
            info_nce(&[2.0, 0.0, 0.0], &e(0, 3), &q, 1.0),
            Err(Error::NonUnitInput { .. })
        ));
        assert!(matches!(
            info_nce(&e(0, 2), &e(0, 3), &q, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn lower_temperature_lowers_loss_when_positive_wins() {
        let q = queue_with(&[e(1, 3), e(2, 3)], 4);
        // brute-force sweep over a descending temperature grid
        let taus = [2.0, 1.0, 0.5, 0.2, 0.1, 0.07, 0.04, 0.01];
        let losses: Vec<f64> = taus
            .iter()
            .map(|&t| info_nce(&e(0, 3), &e(0, 3), &q, t).unwrap())
            .collect();
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "{losses:?}");
        }
    }

    #[test]
    fn small_temperature_stays_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let keys: Vec<Vec<f64>> = (0..64).map(|_| rand_unit(&mut rng, 8)).collect();
        let q = queue_with(&keys, 64);
        let query = rand_unit(&mut rng, 8);
        let pos = rand_unit(&mut rng, 8);
        let loss = info_nce(&query, &pos, &q, 0.001).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        assert!(info_nce_query_grad(&query, &pos, &q, 0.001).unwrap().is_finite());
    }

    #[test]
    fn loss_positive_with_negatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let keys: Vec<Vec<f64>> = (0..5).map(|_| rand_unit(&mut rng, 4)).collect();
            let q = queue_with(&keys, 8);
            let query = rand_unit(&mut rng, 4);
            assert!(info_nce(&query, &query, &q, 0.5).unwrap() > 0.0);
        }
    }
}
