//! Surrogate-gradient training: datasets and batches, the optimizer loop with
//! freezing masks, metrics, and a finite-difference gradient checker.

mod gradcheck;
mod optim;

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use crate::net::FreezeMask;
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport, GroupError};
pub use optim::{Optimizer, OptimizerKind};

use crate::error::{Error, Result};
use crate::net::{CogniSnn, ForwardOptions, ForwardTrace, TaskId};
use crate::neuron::FireMode;
use crate::tensor::{Tape, Tensor, Var};

/// Optimizer and loop settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Train through the surrogate primitive instead of binary spikes.
    pub smooth_mode: bool,
    /// Global gradient-norm clip; `None` disables it.
    pub clip_norm: Option<f64>,
    /// Stop once an epoch's training accuracy reaches this fraction.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::adam(),
            lr: 1e-3,
            weight_decay: 1e-4,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            smooth_mode: false,
            clip_norm: Some(10.0),
            target_accuracy: None,
        }
    }
}

impl TrainConfig {
    /// Checks the values a user-facing configuration must satisfy.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid("learning rate must be positive and finite"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        self.check_loop()
    }

    /// The weaker checks the training loop itself needs; a zero learning
    /// rate or zero epochs are accepted here.
    pub(crate) fn check_loop(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid("learning rate must be non-negative and finite"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::invalid("clip norm must be positive"));
            }
        }
        Ok(())
    }

    pub fn fire_mode(&self) -> FireMode {
        if self.smooth_mode {
            FireMode::Smooth
        } else {
            FireMode::Spike
        }
    }
}

/// Encoded samples `[T, C, H, W]` with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Tensor>,
    labels: Vec<usize>,
    classes: usize,
}

/// A time-major minibatch: `input` is `[T*B, C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub input: Tensor,
    pub labels: Vec<usize>,
    /// Positions of the samples in their dataset.
    pub indices: Vec<usize>,
}

impl Dataset {
    pub fn new(samples: Vec<Tensor>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        if let Some(first) = samples.first() {
            if first.rank() != 4 {
                return Err(Error::dim("dataset", format!("samples must be [T, C, H, W], got {:?}", first.shape())));
            }
            if let Some(bad) = samples.iter().find(|s| s.shape() != first.shape()) {
                return Err(Error::dim(
                    "dataset",
                    format!("sample shapes {:?} and {:?} differ", first.shape(), bad.shape()),
                ));
            }
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self {
            samples,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn samples(&self) -> &[Tensor] {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Stacks the given samples time-major.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let Some(&first) = indices.first() else {
            return Err(Error::invalid("a batch needs at least one sample"));
        };
        if let Some(bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("sample index {bad} out of range")));
        }
        let shape = self.samples[first].shape();
        let t = shape[0];
        let frame = shape[1] * shape[2] * shape[3];
        let b = indices.len();
        let mut data = Vec::with_capacity(t * b * frame);
        for step in 0..t {
            for &i in indices {
                data.extend_from_slice(&self.samples[i].data()[step * frame..(step + 1) * frame]);
            }
        }
        Ok(Batch {
            input: Tensor::new(vec![t * b, shape[1], shape[2], shape[3]], data)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            indices: indices.to_vec(),
        })
    }

    /// All samples in order, split into batches of at most `size`.
    pub fn batches(&self, size: usize) -> Result<Vec<Batch>> {
        let order: Vec<usize> = (0..self.len()).collect();
        order.chunks(size.max(1)).map(|c| self.batch(c)).collect()
    }
}

/// Softmax cross-entropy, averaged over rows of `[B, K]` (or a single `[K]`).
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let logits = if logits.rank() == 1 {
        logits.reshape(&[1, logits.len()])?
    } else {
        logits.clone()
    };
    let mut tape = Tape::new();
    let z = tape.constant(logits);
    let l = tape.cross_entropy(z, labels)?;
    Ok(tape.value(l).data()[0])
}

/// Mean spike rate over the stem and every triplet of a pass.
pub fn trace_spike_rate(tape: &Tape, trace: &ForwardTrace) -> f64 {
    let mut spikes = tape.value(trace.stem).sum();
    let mut count = tape.value(trace.stem).len() as f64;
    for v in trace.o1.values().chain(trace.o2.values()) {
        spikes += tape.value(*v).sum();
        count += tape.value(*v).len() as f64;
    }
    spikes / count
}

/// What one update reports.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub loss: f64,
    /// Correctly classified samples, when the loss exposed logits.
    pub correct: Option<usize>,
    pub samples: usize,
    pub spike_rate: f64,
    pub grad_norm: f64,
}

/// Loss of a recorded pass, plus the logits used for accuracy if any.
pub struct LossOutput {
    pub loss: Var,
    pub logits: Option<Var>,
}

/// Owns optimizer state across steps.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    optimizer: Optimizer,
}

fn first_non_finite<'a>(map: impl IntoIterator<Item = (&'a String, &'a Tensor)>) -> Option<String> {
    map.into_iter().find(|(_, t)| !t.is_finite()).map(|(p, _)| p.clone())
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Self {
        Self {
            optimizer: Optimizer::new(config.optimizer, config.weight_decay),
            config,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One forward/backward/update with a caller-defined loss. Parameters
    /// frozen by `mask` are never written.
    pub fn step_with_loss<F>(&mut self, model: &mut CogniSnn, mask: &FreezeMask, batch: &Batch, loss_fn: F) -> Result<StepOutput>
    where
        F: FnOnce(&CogniSnn, &mut Tape, &ForwardTrace, &Batch) -> Result<LossOutput>,
    {
        self.config.check_loop()?;
        let mut tape = Tape::new();
        let x = tape.constant(batch.input.clone());
        let opts = ForwardOptions::training(mask, self.config.fire_mode());
        let trace = model.forward_trace(&mut tape, x, &opts)?;
        let out = loss_fn(model, &mut tape, &trace, batch)?;
        let loss = tape.value(out.loss).data()[0];
        let grads = tape.backward(out.loss)?;
        let mut named = BTreeMap::new();
        for (path, var) in &trace.params {
            if mask.is_frozen(path) {
                continue;
            }
            let g = grads
                .get(*var)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(model.params.get(path).map(Tensor::shape).unwrap_or(&[1])));
            named.insert(path.clone(), g);
        }
        if !loss.is_finite() {
            let path = first_non_finite(model.params.values())
                .or_else(|| first_non_finite(&named))
                .unwrap_or_else(|| "loss".to_string());
            return Err(Error::NonFinite { path });
        }
        if let Some(path) = first_non_finite(&named) {
            return Err(Error::NonFinite { path });
        }
        let grad_norm = named.values().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        if let Some(clip) = self.config.clip_norm {
            if grad_norm > clip {
                let s = clip / grad_norm;
                for g in named.values_mut() {
                    *g = g.map(|v| v * s);
                }
            }
        }
        let next = self.optimizer.propose(model.params.values(), &named, self.config.lr);
        if let Some(path) = first_non_finite(&next) {
            return Err(Error::NonFinite { path });
        }
        for (path, value) in next {
            model.params.set(&path, value)?;
        }
        model.apply_batch_stats(&trace)?;
        let correct = out.logits.map(|l| {
            crate::net::argmax_rows(tape.value(l))
                .iter()
                .zip(&batch.labels)
                .filter(|(p, y)| p == y)
                .count()
        });
        Ok(StepOutput {
            loss,
            correct,
            samples: batch.labels.len(),
            spike_rate: trace_spike_rate(&tape, &trace),
            grad_norm,
        })
    }

    /// One cross-entropy update of the head for `task`.
    pub fn train_step(&mut self, model: &mut CogniSnn, batch: &Batch, task: TaskId, mask: &FreezeMask) -> Result<StepOutput> {
        self.step_with_loss(model, mask, batch, |m, tape, trace, batch| {
            let logits = m.logits(tape, trace, task)?;
            let loss = tape.cross_entropy(logits, &batch.labels)?;
            Ok(LossOutput {
                loss,
                logits: Some(logits),
            })
        })
    }
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub spike_rate: f64,
}

impl fmt::Display for EpochMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} split={} loss={:.6} accuracy={:.4} spike_rate={:.4}",
            self.epoch, self.split, self.loss, self.accuracy, self.spike_rate
        )
    }
}

/// Epoch loop over seeded shuffles with a caller-defined loss.
pub fn fit_with<F>(
    model: &mut CogniSnn,
    data: &Dataset,
    config: &TrainConfig,
    mask: &FreezeMask,
    loss_fn: F,
) -> Result<Vec<EpochMetrics>>
where
    F: FnMut(&CogniSnn, &mut Tape, &ForwardTrace, &Batch) -> Result<LossOutput>,
{
    fit_observed(model, data, config, mask, loss_fn, |_, _| Ok(()))
}

/// `fit_with`, calling `on_epoch` with the model after every epoch.
pub fn fit_observed<F, O>(
    model: &mut CogniSnn,
    data: &Dataset,
    config: &TrainConfig,
    mask: &FreezeMask,
    mut loss_fn: F,
    mut on_epoch: O,
) -> Result<Vec<EpochMetrics>>
where
    F: FnMut(&CogniSnn, &mut Tape, &ForwardTrace, &Batch) -> Result<LossOutput>,
    O: FnMut(&CogniSnn, &EpochMetrics) -> Result<()>,
{
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    config.check_loop()?;
    let mut trainer = Trainer::new(*config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::new();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut correct, mut seen, mut rate, mut steps) = (0.0, 0usize, 0usize, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch = data.batch(chunk)?;
            let out = trainer.step_with_loss(model, mask, &batch, &mut loss_fn)?;
            loss += out.loss * out.samples as f64;
            correct += out.correct.unwrap_or(0);
            seen += out.samples;
            rate += out.spike_rate;
            steps += 1;
        }
        let m = EpochMetrics {
            epoch,
            split: "train".into(),
            loss: loss / seen as f64,
            accuracy: correct as f64 / seen as f64,
            spike_rate: rate / steps as f64,
        };
        let done = config.target_accuracy.is_some_and(|t| m.accuracy >= t);
        on_epoch(model, &m)?;
        history.push(m);
        if done {
            break;
        }
    }
    Ok(history)
}

/// Cross-entropy training of the head for `task`.
pub fn fit(model: &mut CogniSnn, data: &Dataset, task: TaskId, config: &TrainConfig, mask: &FreezeMask) -> Result<Vec<EpochMetrics>> {
    fit_with(model, data, config, mask, |m, tape, trace, batch| {
        let logits = m.logits(tape, trace, task)?;
        let loss = tape.cross_entropy(logits, &batch.labels)?;
        Ok(LossOutput {
            loss,
            logits: Some(logits),
        })
    })
}

/// Inference-mode loss, accuracy and spike rate over a dataset.
pub fn evaluate(model: &CogniSnn, data: &Dataset, task: TaskId, batch_size: usize) -> Result<EpochMetrics> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let (mut loss, mut correct, mut rate, mut steps) = (0.0, 0usize, 0.0, 0usize);
    for batch in data.batches(batch_size)? {
        let mut tape = Tape::new();
        let x = tape.constant(batch.input.clone());
        let trace = model.forward_trace(&mut tape, x, &ForwardOptions::inference())?;
        let logits = model.logits(&mut tape, &trace, task)?;
        let l = tape.cross_entropy(logits, &batch.labels)?;
        loss += tape.value(l).data()[0] * batch.labels.len() as f64;
        correct += crate::net::argmax_rows(tape.value(logits))
            .iter()
            .zip(&batch.labels)
            .filter(|(p, y)| p == y)
            .count();
        rate += trace_spike_rate(&tape, &trace);
        steps += 1;
    }
    Ok(EpochMetrics {
        epoch: 0,
        split: "eval".into(),
        loss: loss / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
        spike_rate: rate / steps as f64,
    })
}
