//! Optimizer, clipping, learning-rate schedule and the epoch loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bptt::{
    backward_network, cross_entropy, forward_network, predict, Gradients, Mode, NetworkParams,
    NetworkSpec,
};
use crate::data::SequenceBatch;
use crate::error::{Error, Result};

/// Independent random streams derived from one run seed, so that e.g. toggling
/// dropout does not perturb initialization or shuffling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    Data = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// Clamp every gradient entry to `[-amp, amp]`.
    Element,
    /// Rescale the whole gradient so its L2 norm is at most `amp`.
    GlobalNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub clip_amp: f64,
    pub clip_mode: ClipMode,
    pub dropout_p: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr_drop_factor: f64,
    pub lr_patience: usize,
    pub min_lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.005,
            clip_amp: 1.0,
            clip_mode: ClipMode::Element,
            dropout_p: 0.5,
            batch_size: 32,
            max_epochs: 10,
            lr_drop_factor: 10.0,
            lr_patience: 5,
            min_lr: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Invalid(format!("train config: {what}")));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be finite and non-negative");
        }
        if !(self.clip_amp > 0.0) {
            return bad("clip_amp must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.lr_patience == 0 {
            return bad("batch_size, max_epochs and lr_patience must be positive");
        }
        if !(self.lr_drop_factor > 1.0) || !(self.min_lr > 0.0) {
            return bad("lr_drop_factor must exceed 1 and min_lr must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,lr,seconds";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.train_acc,
            self.val_loss,
            self.val_acc,
            self.lr,
            self.wall_seconds
        )
    }
}

/// Element-wise amplitude clamp of every gradient entry.
pub fn clip_gradients(g: &mut Gradients, amp: f64) {
    for t in g.tensors_mut() {
        for v in t.iter_mut() {
            *v = v.clamp(-amp, amp);
        }
    }
}

/// Rescales `g` so that its L2 norm does not exceed `max_norm`.
pub fn clip_global_norm(g: &mut Gradients, max_norm: f64) {
    let norm = g
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in g.tensors_mut() {
            for v in t.iter_mut() {
                *v *= s;
            }
        }
    }
}

pub fn clip(g: &mut Gradients, cfg: &TrainConfig) {
    match cfg.clip_mode {
        ClipMode::Element => clip_gradients(g, cfg.clip_amp),
        ClipMode::GlobalNorm => clip_global_norm(g, cfg.clip_amp),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: NetworkParams,
    pub v: NetworkParams,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step.
pub fn adam_update(
    params: &mut NetworkParams,
    g: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    params.check_congruent(g)?;
    params.check_congruent(&state.m)?;
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let grads = g.tensors();
    for (((p, (_, g)), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads)
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Drops the learning rate by `lr_drop_factor` once training accuracy has failed
/// to improve on its best for `lr_patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    best: f64,
    since_best: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            best: f64::NEG_INFINITY,
            since_best: 0,
        }
    }
}

impl LrSchedule {
    pub fn step(&mut self, train_acc: f64, lr: f64, cfg: &TrainConfig) -> f64 {
        if train_acc > self.best {
            self.best = train_acc;
            self.since_best = 0;
            return lr;
        }
        self.since_best += 1;
        if self.since_best >= cfg.lr_patience {
            self.since_best = 0;
            return (lr / cfg.lr_drop_factor).max(cfg.min_lr);
        }
        lr
    }

    /// Epochs since the last improvement (or last drop).
    pub fn stale_epochs(&self) -> usize {
        self.since_best
    }
}

/// Learning rate after the last entry of `history`, replaying the schedule over
/// the earlier entries to recover its counters.
pub fn lr_schedule_step(history: &[f64], lr: f64, cfg: &TrainConfig) -> f64 {
    let mut sched = LrSchedule::default();
    let Some((last, earlier)) = history.split_last() else {
        return lr;
    };
    for &acc in earlier {
        sched.step(acc, lr, cfg);
    }
    sched.step(*last, lr, cfg)
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        })
        .0
}

/// Scores precomputed logits: (mean loss, top-1 accuracy).
pub fn score(logits: &[crate::numerics::Vector], labels: &[usize]) -> Result<(f64, f64)> {
    if logits.is_empty() {
        return Err(Error::Empty("evaluation data"));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (l, &y) in logits.iter().zip(labels) {
        loss += cross_entropy(l, y)?.0;
        if argmax(l) == y {
            correct += 1;
        }
    }
    let n = logits.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Eval-mode mean loss and top-1 accuracy.
pub fn evaluate(
    spec: &NetworkSpec,
    params: &NetworkParams,
    data: &SequenceBatch,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation data"));
    }
    let logits = data
        .samples()
        .iter()
        .map(|s| predict(spec, params, &s.seq))
        .collect::<Result<Vec<_>>>()?;
    score(&logits, &data.labels())
}

/// Forward, backward, clip and Adam on one mini-batch. Returns the batch loss.
pub fn train_step(
    spec: &NetworkSpec,
    params: &mut NetworkParams,
    opt: &mut AdamState,
    batch: &SequenceBatch,
    cfg: &TrainConfig,
    lr: f64,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let pass = forward_network(spec, params, batch, Mode::Train, dropout_rng)?;
    let (loss, mut grads) = backward_network(spec, params, &pass, &batch.labels())?;
    clip(&mut grads, cfg);
    adam_update(params, &grads, opt, lr)?;
    Ok(loss)
}

/// Random streams consumed by training.
#[derive(Debug, Clone)]
pub struct TrainRngs {
    pub shuffle: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
}

impl TrainRngs {
    pub fn new(seed: u64) -> Self {
        TrainRngs {
            shuffle: stream_rng(seed, Stream::Shuffle),
            dropout: stream_rng(seed, Stream::Dropout),
        }
    }
}

/// One pass over shuffled mini-batches (last short batch kept), then eval-mode
/// scoring of the full train and validation sets.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    spec: &NetworkSpec,
    params: &mut NetworkParams,
    opt: &mut AdamState,
    train: &SequenceBatch,
    val: &SequenceBatch,
    cfg: &TrainConfig,
    lr: f64,
    epoch: usize,
    rngs: &mut TrainRngs,
) -> Result<EpochLog> {
    if train.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let start = Instant::now();
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rngs.shuffle);
    for chunk in order.chunks(cfg.batch_size) {
        let batch = train.select(chunk);
        train_step(spec, params, opt, &batch, cfg, lr, &mut rngs.dropout)?;
    }
    let (train_loss, train_acc) = evaluate(spec, params, train)?;
    let (val_loss, val_acc) = if val.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        evaluate(spec, params, val)?
    };
    Ok(EpochLog {
        epoch,
        train_loss,
        train_acc,
        val_loss,
        val_acc,
        lr,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub initial: NetworkParams,
    /// Checkpoint with the best validation accuracy (first one on ties).
    pub best: NetworkParams,
    pub best_epoch: usize,
    pub last: NetworkParams,
    pub logs: Vec<EpochLog>,
}

/// Full run: initialize from the `Init` stream, train up to `max_epochs`, and keep
/// the best-validation checkpoint. Stops early once the learning rate sits at
/// `min_lr` and accuracy has stayed flat for a full patience window.
pub fn fit(
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    train: &SequenceBatch,
    val: &SequenceBatch,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    let initial = NetworkParams::init(spec, &mut stream_rng(cfg.seed, Stream::Init));
    fit_from(spec, cfg, train, val, initial, &mut on_epoch)
}

pub fn fit_from(
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    train: &SequenceBatch,
    val: &SequenceBatch,
    initial: NetworkParams,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let mut params = initial.clone();
    let mut opt = AdamState::new(&params);
    let mut rngs = TrainRngs::new(cfg.seed);
    let mut sched = LrSchedule::default();
    let mut lr = cfg.lr0;
    let mut logs: Vec<EpochLog> = Vec::new();
    let mut best = initial.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::NEG_INFINITY;
    for epoch in 1..=cfg.max_epochs {
        let log = train_epoch(
            spec,
            &mut params,
            &mut opt,
            train,
            val,
            cfg,
            lr,
            epoch,
            &mut rngs,
        )?;
        // Without validation data, select on training accuracy.
        let selector = if log.val_acc.is_nan() {
            log.train_acc
        } else {
            log.val_acc
        };
        if selector > best_val {
            best_val = selector;
            best = params.clone();
            best_epoch = epoch;
        }
        on_epoch(&log);
        let at_floor = lr <= cfg.min_lr;
        lr = sched.step(log.train_acc, lr, cfg);
        logs.push(log);
        if at_floor && sched.stale_epochs() == 0 && logs.len() > cfg.lr_patience {
            let window = &logs[logs.len() - cfg.lr_patience..];
            let flat = window.iter().all(|l| l.train_acc <= window[0].train_acc);
            if flat {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        initial,
        best,
        best_epoch,
        last: params,
        logs,
    })
}
