//! Training loop: shuffled parallel batches, dual momentum contrast, optional
//! NLI multitask term, global-norm clipping, AdamW, then momentum update and
//! enqueue.

pub mod nli;
pub mod optim;

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::{stream_rng, NliTriple, ParallelCorpus, Split, StsPair};
use crate::encoder::{
    accumulate_backward, encode_batch, encode_batch_parallel, EncoderParams, PoolingMode, TokenSequence,
};
use crate::error::{Error, Result};
use crate::eval::{retrieval_accuracy, sts_eval_threads};
use crate::moco::{DualMocoState, LossValue};
use crate::numerics::DenseMatrix;

use self::nli::{nli_loss_and_grads, DropoutMask, NliHead};
use self::optim::{adamw_step, clip_gradients, LrSchedule, OptimizerState, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub warmup_steps: usize,
    pub queue_capacity: usize,
    pub temperature: f64,
    pub momentum: f64,
    pub grad_clip: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub pooling: PoolingMode,
    /// Weight α of the NLI term; only used when NLI data is supplied.
    pub nli_weight: f64,
    pub nli_batch_size: usize,
    pub nli_dropout: f64,
    /// Keys come from the base encoders themselves (momentum coefficient 0).
    pub ablation_no_momentum: bool,
    pub d_emb: usize,
    pub d_out: usize,
    /// Threads used for per-epoch evaluation encoding only.
    pub eval_threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            lr_max: 3e-2,
            warmup_steps: 100,
            queue_capacity: 1024,
            temperature: 0.04,
            momentum: 0.99,
            grad_clip: 10.0,
            weight_decay: 1e-4,
            seed: 0,
            pooling: PoolingMode::Mean,
            nli_weight: 0.1,
            nli_batch_size: 32,
            nli_dropout: 0.1,
            ablation_no_momentum: false,
            d_emb: 32,
            d_out: 32,
            eval_threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("queue_capacity", self.queue_capacity),
            ("nli_batch_size", self.nli_batch_size),
            ("d_emb", self.d_emb),
            ("eval_threads", self.eval_threads),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.d_out < 2 {
            return Err(Error::config("d_out", "must be at least 2"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::config(
                "temperature",
                format!("must be positive, got {}", self.temperature),
            ));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::config(
                "momentum",
                format!("must lie in [0, 1], got {}", self.momentum),
            ));
        }
        if !(self.lr_max > 0.0) || !self.lr_max.is_finite() {
            return Err(Error::config(
                "lr_max",
                format!("must be positive, got {}", self.lr_max),
            ));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::config(
                "grad_clip",
                format!("must be positive, got {}", self.grad_clip),
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config(
                "weight_decay",
                format!("must be non-negative, got {}", self.weight_decay),
            ));
        }
        if !(self.nli_weight >= 0.0) || !self.nli_weight.is_finite() {
            return Err(Error::config(
                "nli_weight",
                format!("must be non-negative, got {}", self.nli_weight),
            ));
        }
        if !(0.0..1.0).contains(&self.nli_dropout) {
            return Err(Error::config(
                "nli_dropout",
                format!("must lie in [0, 1), got {}", self.nli_dropout),
            ));
        }
        if self.batch_size > self.queue_capacity {
            return Err(Error::config(
                "batch_size",
                format!(
                    "batch of {} cannot be enqueued into a queue of {}",
                    self.batch_size, self.queue_capacity
                ),
            ));
        }
        Ok(())
    }

    /// Momentum coefficient actually used (0 under the no-momentum ablation).
    pub fn effective_momentum(&self) -> f64 {
        if self.ablation_no_momentum {
            0.0
        } else {
            self.momentum
        }
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train / self.batch_size
    }

    pub fn schedule(&self, n_train: usize) -> LrSchedule {
        LrSchedule {
            lr_max: self.lr_max,
            warmup_steps: self.warmup_steps,
            total_steps: self.epochs * self.steps_per_epoch(n_train),
        }
    }
}

/// Held-out data scored at the end of every epoch.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalData<'a> {
    /// Aligned language-A / language-B sentences.
    pub retrieval: Option<(&'a [TokenSequence], &'a [TokenSequence])>,
    pub sts: Option<&'a [StsPair]>,
}

#[derive(Debug, Clone)]
pub struct TrainData<'a> {
    pub vocab_a: usize,
    pub vocab_b: usize,
    /// Only the training split is used.
    pub corpus: &'a ParallelCorpus,
    pub nli: Option<&'a [NliTriple]>,
    pub eval: EvalData<'a>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_fwd: f64,
    pub loss_bwd: f64,
    pub loss_nli: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub retrieval_acc_ab: Option<f64>,
    pub retrieval_acc_ba: Option<f64>,
    pub sts_spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogRecord {
    Step(StepRecord),
    Epoch(EpochRecord),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    pub records: Vec<LogRecord>,
}

impl MetricsLog {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Step(s) => Some(s),
            LogRecord::Epoch(_) => None,
        })
    }

    pub fn epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Epoch(e) => Some(e),
            LogRecord::Step(_) => None,
        })
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Hook into the loop; called once per step after the loss is computed and
/// before any parameter changes.
pub trait StepObserver {
    fn on_step(
        &mut self,
        _step: usize,
        _state: &DualMocoState,
        _batch_a: &[TokenSequence],
        _batch_b: &[TokenSequence],
    ) {
    }
}

impl StepObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: DualMocoState,
    pub nli_head: Option<NliHead>,
    pub log: MetricsLog,
}

// Independent RNG streams, so enabling one feature never shifts another's draws.
const STREAM_INIT_A: u64 = 10;
const STREAM_INIT_B: u64 = 11;
const STREAM_SHUFFLE: u64 = 12;
const STREAM_NLI_ORDER: u64 = 13;
const STREAM_NLI_DROPOUT: u64 = 14;
const STREAM_NLI_INIT: u64 = 15;

/// Freshly initialised base encoders for both languages.
pub fn init_encoders(config: &TrainConfig, vocab_a: usize, vocab_b: usize) -> Result<(EncoderParams, EncoderParams)> {
    let a = EncoderParams::random(
        vocab_a,
        config.d_emb,
        config.d_out,
        &mut stream_rng(config.seed, STREAM_INIT_A),
    )?;
    let b = EncoderParams::random(
        vocab_b,
        config.d_emb,
        config.d_out,
        &mut stream_rng(config.seed, STREAM_INIT_B),
    )?;
    Ok((a, b))
}

pub fn evaluate_epoch(
    epoch: usize,
    state: &DualMocoState,
    eval: &EvalData<'_>,
    pooling: PoolingMode,
    threads: usize,
) -> Result<EpochRecord> {
    let mut record = EpochRecord {
        epoch,
        retrieval_acc_ab: None,
        retrieval_acc_ba: None,
        sts_spearman: None,
    };
    if let Some((a, b)) = eval.retrieval {
        let ha = encode_batch_parallel(&state.base_a, a, pooling, threads)?;
        let hb = encode_batch_parallel(&state.base_b, b, pooling, threads)?;
        let dim = state.dim();
        let (ab, ba) = retrieval_accuracy(&DenseMatrix::from_rows(&ha, dim)?, &DenseMatrix::from_rows(&hb, dim)?)?;
        record.retrieval_acc_ab = Some(ab);
        record.retrieval_acc_ba = Some(ba);
    }
    if let Some(sts) = eval.sts {
        record.sts_spearman = Some(sts_eval_threads(&state.base_a, sts, pooling, threads)?);
    }
    Ok(record)
}

/// Gradients of the whole trainable model, in one flat tensor list.
struct ModelGrads {
    base_a: EncoderParams,
    base_b: EncoderParams,
    head: Option<NliHead>,
}

impl ModelGrads {
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = ParamSet::tensors_mut(&mut self.base_a);
        out.extend(ParamSet::tensors_mut(&mut self.base_b));
        if let Some(h) = self.head.as_mut() {
            out.extend(h.tensors_mut());
        }
        out
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = ParamSet::tensors(&self.base_a);
        out.extend(ParamSet::tensors(&self.base_b));
        if let Some(h) = self.head.as_ref() {
            out.extend(h.tensors());
        }
        out
    }
}

fn model_params<'a>(state: &'a mut DualMocoState, head: Option<&'a mut NliHead>) -> Vec<&'a mut [f64]> {
    let mut out: Vec<&mut [f64]> = ParamSet::tensors_mut(&mut state.base_a);
    out.extend(ParamSet::tensors_mut(&mut state.base_b));
    if let Some(h) = head {
        out.extend(h.tensors_mut());
    }
    out
}

/// α-weighted NLI loss on one batch of triples. Head gradients go into
/// `head_grads`, sentence-embedding gradients are pushed back into the
/// language-A encoder gradient.
#[allow(clippy::too_many_arguments)]
pub fn nli_batch_step(
    head: &NliHead,
    encoder_a: &EncoderParams,
    batch: &[&NliTriple],
    pooling: PoolingMode,
    weight: f64,
    dropout: Option<(f64, &mut dyn rand::RngCore)>,
    head_grads: &mut NliHead,
    encoder_grads: &mut EncoderParams,
) -> Result<f64> {
    let premises: Vec<TokenSequence> = batch.iter().map(|t| t.premise.clone()).collect();
    let hypotheses: Vec<TokenSequence> = batch.iter().map(|t| t.hypothesis.clone()).collect();
    let hp = encode_batch(encoder_a, &premises, pooling)?;
    let hh = encode_batch(encoder_a, &hypotheses, pooling)?;
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut d_p = Vec::with_capacity(batch.len());
    let mut d_h = Vec::with_capacity(batch.len());
    let mut dropout = dropout;
    for (i, t) in batch.iter().enumerate() {
        let mask = match dropout.as_mut() {
            Some((rate, rng)) if *rate > 0.0 => Some(DropoutMask::sample(head.hidden(), *rate, &mut **rng)),
            _ => None,
        };
        let back = nli_loss_and_grads(head, &hp[i], &hh[i], t.label, mask.as_ref(), weight / n, head_grads)?;
        total += back.loss;
        d_p.push(back.d_premise);
        d_h.push(back.d_hypothesis);
    }
    accumulate_backward(encoder_a, &premises, pooling, &d_p, encoder_grads)?;
    accumulate_backward(encoder_a, &hypotheses, pooling, &d_h, encoder_grads)?;
    Ok(total / n)
}

fn ensure_finite(step: usize, loss: &LossValue, nli: Option<f64>) -> Result<()> {
    if !loss.total.is_finite() || nli.is_some_and(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(format!("non-finite loss at step {step}")));
    }
    Ok(())
}

pub fn train(config: &TrainConfig, data: &TrainData<'_>) -> Result<TrainOutcome> {
    train_with_observer(config, data, &mut ())
}

pub fn train_with_observer(
    config: &TrainConfig,
    data: &TrainData<'_>,
    observer: &mut dyn StepObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (train_a, train_b) = data.corpus.sides(Split::Train);
    if train_a.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let steps_per_epoch = config.steps_per_epoch(train_a.len());
    if steps_per_epoch == 0 {
        return Err(Error::config(
            "batch_size",
            format!(
                "batch of {} exceeds the {} training pairs",
                config.batch_size,
                train_a.len()
            ),
        ));
    }
    let nli_data = data.nli.filter(|d| !d.is_empty());

    let (base_a, base_b) = init_encoders(config, data.vocab_a, data.vocab_b)?;
    let mut state = DualMocoState::new(
        base_a,
        base_b,
        config.effective_momentum(),
        config.queue_capacity,
        config.temperature,
    )?;
    let mut head = nli_data.map(|_| NliHead::new(config.d_out, &mut stream_rng(config.seed, STREAM_NLI_INIT)));

    let shapes: Vec<usize> = {
        let mut s: Vec<usize> = ParamSet::tensors(&state.base_a).iter().map(|t| t.len()).collect();
        s.extend(ParamSet::tensors(&state.base_b).iter().map(|t| t.len()));
        if let Some(h) = head.as_ref() {
            s.extend(h.tensors().iter().map(|t| t.len()));
        }
        s
    };
    let mut opt = OptimizerState::new(&shapes, Default::default());
    let schedule = config.schedule(train_a.len());

    let mut shuffle_rng = stream_rng(config.seed, STREAM_SHUFFLE);
    let mut nli_order_rng = stream_rng(config.seed, STREAM_NLI_ORDER);
    let mut dropout_rng = stream_rng(config.seed, STREAM_NLI_DROPOUT);
    let mut nli_order: Vec<usize> = Vec::new();
    let mut nli_cursor = 0;

    let mut log = MetricsLog::default();
    let mut order: Vec<usize> = (0..train_a.len()).collect();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks_exact(config.batch_size) {
            step += 1;
            let batch_a: Vec<TokenSequence> = chunk.iter().map(|&i| train_a[i].clone()).collect();
            let batch_b: Vec<TokenSequence> = chunk.iter().map(|&i| train_b[i].clone()).collect();

            let (loss, moco_grads) = state.loss_and_grads(&batch_a, &batch_b, config.pooling)?;
            observer.on_step(step, &state, &batch_a, &batch_b);
            let mut grads = ModelGrads {
                base_a: moco_grads.base_a,
                base_b: moco_grads.base_b,
                head: head.as_ref().map(NliHead::zeros_like),
            };

            let mut loss_nli = None;
            if let (Some(triples), Some(h)) = (nli_data, head.as_ref()) {
                let mut batch = Vec::with_capacity(config.nli_batch_size);
                while batch.len() < config.nli_batch_size {
                    if nli_cursor == nli_order.len() {
                        nli_order = (0..triples.len()).collect();
                        nli_order.shuffle(&mut nli_order_rng);
                        nli_cursor = 0;
                    }
                    batch.push(&triples[nli_order[nli_cursor]]);
                    nli_cursor += 1;
                }
                let head_grads = grads.head.as_mut().expect("head grads allocated with head");
                let value = nli_batch_step(
                    h,
                    &state.base_a,
                    &batch,
                    config.pooling,
                    config.nli_weight,
                    Some((config.nli_dropout, &mut dropout_rng)),
                    head_grads,
                    &mut grads.base_a,
                )?;
                loss_nli = Some(value);
            }
            ensure_finite(step, &loss, loss_nli)?;

            clip_gradients(&mut grads.tensors_mut(), config.grad_clip);
            let lr = schedule.lr_at(step);
            {
                let mut params = model_params(&mut state, head.as_mut());
                adamw_step(&mut params, &grads.tensors(), &mut opt, lr, config.weight_decay)?;
            }
            state.advance(&batch_a, &batch_b, config.pooling)?;

            log.records.push(LogRecord::Step(StepRecord {
                step,
                lr,
                loss_total: loss.total + loss_nli.map_or(0.0, |v| config.nli_weight * v),
                loss_fwd: loss.forward,
                loss_bwd: loss.backward,
                loss_nli,
            }));
        }
        if !state.base_a.is_finite() || !state.base_b.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "non-finite parameters after epoch {epoch}"
            )));
        }
        if data.eval.retrieval.is_some() || data.eval.sts.is_some() {
            let record = evaluate_epoch(epoch, &state, &data.eval, config.pooling, config.eval_threads)?;
            log.records.push(LogRecord::Epoch(record));
        }
    }
    Ok(TrainOutcome {
        state,
        nli_head: head,
        log,
    })
}
