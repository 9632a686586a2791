//! Displacement regression training: MSE loss, Adam, plateau learning-rate
//! decay, best-validation checkpointing, and the ρ-ball accuracy metric.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::model::{MortonNet, SeqBatch};
use crate::nn::{GradientSet, Mode, Parameters};
use crate::rng;
use crate::sequence::TrainingSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay: f64,
    pub patience: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub rho: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            decay: 0.9,
            patience: 2,
            epochs: 40,
            batch_size: 64,
            val_fraction: 0.1,
            rho: 0.02,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be a finite non-negative number");
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad("decay must lie in (0, 1)");
        }
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        if !(self.rho > 0.0) {
            return bad("rho must be positive");
        }
        Ok(())
    }
}

/// Mean squared error over all `3B` outputs and its gradient.
pub fn mse_loss(y: &ArrayView2<f64>, target: &ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    if y.dim() != target.dim() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            y.dim(),
            target.dim()
        )));
    }
    let n = y.len() as f64;
    let diff = y - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment accumulators, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<P: Parameters + ?Sized>(params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<P: Parameters + ?Sized>(
    params: &mut P,
    grads: &GradientSet,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let mut tensors = params.tensors_mut();
    let same_shape = tensors.len() == grads.tensors.len()
        && tensors.len() == state.m.len()
        && tensors
            .iter()
            .zip(&grads.tensors)
            .zip(&state.m)
            .all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
    if !same_shape {
        return Err(Error::ShapeMismatch("gradients do not match parameters".into()));
    }
    if !grads.all_finite() {
        return Err(Error::NonFiniteValue("gradient".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for (((p, g), m), v) in tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Plateau decay: multiply the rate by `decay` once the best validation
/// loss has gone `patience` epochs without strict improvement. The counter
/// resets on improvement and after each decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr: f64,
    pub best: f64,
    pub since_best: usize,
}

impl LrSchedule {
    pub fn new(lr0: f64) -> Self {
        Self {
            lr: lr0,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    /// Records one epoch's validation loss; returns the rate for the next.
    pub fn observe(&mut self, val_loss: f64, cfg: &TrainConfig) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= cfg.patience {
                self.lr *= cfg.decay;
                self.since_best = 0;
            }
        }
        self.lr
    }
}

/// Learning rate after replaying a validation-loss history.
pub fn lr_schedule(history: &[f64], cfg: &TrainConfig) -> f64 {
    let mut s = LrSchedule::new(cfg.lr0);
    for &l in history {
        s.observe(l, cfg);
    }
    s.lr
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate used during this epoch.
    pub lr: f64,
    pub val_rho_acc: f64,
}

/// Model snapshot at the epoch with the best validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MortonNet,
    pub epoch: usize,
    pub val_loss: f64,
    pub config: TrainConfig,
    /// Base seed of the per-epoch shuffle streams.
    pub rng_seed: u64,
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: MortonNet,
    pub adam: AdamState,
    pub schedule: LrSchedule,
    /// Completed epochs.
    pub epoch: usize,
    pub log: Vec<EpochLog>,
    pub best: Option<Checkpoint>,
    pub config: TrainConfig,
}

impl TrainState {
    pub fn new(model: MortonNet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            adam: AdamState::new(&model),
            schedule: LrSchedule::new(config.lr0),
            model,
            epoch: 0,
            log: Vec::new(),
            best: None,
            config,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
    pub state: TrainState,
}

/// Splits samples so that all sequences of a center land on one side; a
/// seeded `val_fraction` of the distinct centers forms the validation set.
pub fn split_train_val(
    samples: &[TrainingSample],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<TrainingSample>, Vec<TrainingSample>)> {
    let mut centers: Vec<usize> = samples.iter().map(|s| s.center_index).collect();
    centers.sort_unstable();
    centers.dedup();
    if centers.len() < 2 {
        return Err(Error::InvalidConfig("need samples from at least two centers to split".into()));
    }
    centers.shuffle(&mut rng::stream(seed, &[0x5e1e_c7]));
    let n_val = ((centers.len() as f64 * val_fraction).round() as usize).clamp(1, centers.len() - 1);
    let mut val_set = centers[..n_val].to_vec();
    val_set.sort_unstable();
    let (val, train): (Vec<_>, Vec<_>) = samples
        .iter()
        .cloned()
        .partition(|s| val_set.binary_search(&s.center_index).is_ok());
    Ok((train, val))
}

const EVAL_CHUNK: usize = 256;

/// Eval-mode predictions for every sample, in order.
pub fn predict_all(model: &MortonNet, samples: &[TrainingSample], exec: Execution) -> Result<Array2<f64>> {
    let chunks = samples.len().div_ceil(EVAL_CHUNK);
    let parts = map_range(exec, chunks, |c| {
        let lo = c * EVAL_CHUNK;
        let hi = (lo + EVAL_CHUNK).min(samples.len());
        let refs: Vec<&TrainingSample> = samples[lo..hi].iter().collect();
        let batch = SeqBatch::from_samples(&refs)?;
        model.predict(&batch.inputs.view(), batch.batch)
    });
    let mut y = Array2::zeros((samples.len(), 3));
    for (c, part) in parts.into_iter().enumerate() {
        let part = part?;
        let lo = c * EVAL_CHUNK;
        y.slice_mut(ndarray::s![lo..lo + part.nrows(), ..]).assign(&part);
    }
    Ok(y)
}

fn targets_of(samples: &[TrainingSample]) -> Array2<f64> {
    Array2::from_shape_fn((samples.len(), 3), |(i, a)| samples[i].target[a])
}

/// Fraction of predictions inside the ρ-ball around the true displacement.
pub fn rho_accuracy(pred: &ArrayView2<f64>, target: &ArrayView2<f64>, rho: f64) -> f64 {
    if pred.nrows() == 0 {
        return 0.0;
    }
    let hits = pred
        .rows()
        .into_iter()
        .zip(target.rows())
        .filter(|(p, t)| {
            let d2: f64 = p.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() <= rho
        })
        .count();
    hits as f64 / pred.nrows() as f64
}

pub fn eval_accuracy(model: &MortonNet, samples: &[TrainingSample], rho: f64) -> Result<f64> {
    eval_accuracy_with(model, samples, rho, Execution::Parallel)
}

pub fn eval_accuracy_with(
    model: &MortonNet,
    samples: &[TrainingSample],
    rho: f64,
    exec: Execution,
) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::InvalidConfig("rho must be positive".into()));
    }
    let y = predict_all(model, samples, exec)?;
    Ok(rho_accuracy(&y.view(), &targets_of(samples).view(), rho))
}

/// Eval-mode MSE and ρ-accuracy over a sample set.
pub fn evaluate(model: &MortonNet, samples: &[TrainingSample], rho: f64) -> Result<(f64, f64)> {
    let y = predict_all(model, samples, Execution::Parallel)?;
    let t = targets_of(samples);
    let (loss, _) = mse_loss(&y.view(), &t.view())?;
    Ok((loss, rho_accuracy(&y.view(), &t.view(), rho)))
}

/// Trains from scratch; see [`resume_training`].
pub fn train_loop(
    train: &[TrainingSample],
    val: &[TrainingSample],
    model: MortonNet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    resume_training(TrainState::new(model, *cfg)?, train, val, cfg.epochs)
}

/// Runs epochs until `state.epoch == total_epochs`. Each epoch shuffles
/// with a stream derived from `(seed, epoch)`, so a restored state
/// continues exactly as an uninterrupted run would.
pub fn resume_training(
    state: TrainState,
    train: &[TrainingSample],
    val: &[TrainingSample],
    total_epochs: usize,
) -> Result<TrainOutcome> {
    resume_with_hook(state, train, val, total_epochs, |_| Ok(()))
}

/// [`resume_training`] with a callback after every completed epoch.
pub fn resume_with_hook<F>(
    mut state: TrainState,
    train: &[TrainingSample],
    val: &[TrainingSample],
    total_epochs: usize,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&TrainState) -> Result<()>,
{
    let cfg = state.config;
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidConfig("training and validation sets must be non-empty".into()));
    }
    let steps = state.model.config.steps();
    if let Some(bad) = train.iter().chain(val).find(|s| s.inputs.len() != steps) {
        return Err(Error::ShapeMismatch(format!(
            "model expects k = {}, sample has {} inputs",
            state.model.config.k,
            bad.inputs.len()
        )));
    }
    while state.epoch < total_epochs {
        let epoch = state.epoch + 1;
        let lr = state.schedule.lr;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[epoch as u64]));
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&TrainingSample> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = SeqBatch::from_samples(&refs)?;
            let (y, cache) = state.model.forward(&batch.inputs.view(), batch.batch, Mode::Train)?;
            let (loss, dy) = mse_loss(&y.view(), &batch.targets.view())?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            loss_sum += loss * chunk.len() as f64;
            let grads = state.model.backward(&cache, &dy.view())?;
            state.model.update_running_stats(&cache);
            adam_step(&mut state.model, &grads, &mut state.adam, lr)
                .map_err(|_| Error::Diverged { epoch, batch: b })?;
        }
        let (val_loss, val_rho_acc) = evaluate(&state.model, val, cfg.rho)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, batch: usize::MAX });
        }
        state.log.push(EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            lr,
            val_rho_acc,
        });
        let improved = state.best.as_ref().is_none_or(|b| val_loss < b.val_loss);
        if improved {
            state.best = Some(Checkpoint {
                model: state.model.clone(),
                epoch,
                val_loss,
                config: cfg,
                rng_seed: cfg.seed,
            });
        }
        state.schedule.observe(val_loss, &cfg);
        state.epoch = epoch;
        on_epoch(&state)?;
    }
    let best = state
        .best
        .clone()
        .ok_or_else(|| Error::InvalidConfig("no epochs were run".into()))?;
    Ok(TrainOutcome {
        best,
        log: state.log.clone(),
        state,
    })
}
