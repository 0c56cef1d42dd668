//! Training: the audio-to-tensor pipeline, Adam with an accuracy-plateau
//! learning-rate schedule and early stopping, L2 regularization, and
//! accuracy evaluation.

mod adam;
mod experiment;

pub use adam::{adam_update, Adam};
pub use experiment::{
    config_hash, render_results_csv, run_experiment, ArchOverrides, CellSummary,
    ExperimentConfig, ExperimentOutput, RunRecord, SynthParams,
};

use std::fmt;
use std::str::FromStr;

use crate::audio::{
    channel_standardize, fit_channel_stats, fit_length, load_wav, log_mel, normalize, resample,
    Normalize,
};
use crate::datasets::{DatasetSpec, Split};
use crate::error::{Error, Result};
use crate::layers::{Mode, ParamKind, Rank};
use crate::model::Network;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Input preprocessing: one of the three per-clip normalizations feeding the
/// 1D network, or log-mel features feeding the 2D network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preproc {
    Raw(Normalize),
    LogMel,
}

impl Preproc {
    /// The network rank this preprocessing feeds.
    pub fn rank(&self) -> Rank {
        match self {
            Preproc::Raw(_) => Rank::One,
            Preproc::LogMel => Rank::Two,
        }
    }

    pub fn all() -> [Preproc; 4] {
        [
            Preproc::Raw(Normalize::None),
            Preproc::Raw(Normalize::ScaleMax),
            Preproc::Raw(Normalize::Standardize),
            Preproc::LogMel,
        ]
    }
}

impl fmt::Display for Preproc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preproc::Raw(mode) => mode.fmt(f),
            Preproc::LogMel => f.write_str("logmel"),
        }
    }
}

impl FromStr for Preproc {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("logmel") {
            Ok(Preproc::LogMel)
        } else {
            Ok(Preproc::Raw(s.parse()?))
        }
    }
}

/// One network-ready example: flattened input values plus the class label.
#[derive(Debug, Clone)]
pub struct Example {
    pub input: Vec<f64>,
    pub label: usize,
}

/// A set of examples sharing one per-example shape (`[length, 1]` for raw
/// audio, `[64, frames, 1]` for log-mel).
#[derive(Debug, Clone)]
pub struct ExampleSet {
    pub shape: Vec<usize>,
    pub examples: Vec<Example>,
}

impl ExampleSet {
    /// Stacks the chosen examples into a `[batch, ...shape]` tensor.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let per = self.shape.iter().product::<usize>();
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.shape);
        let mut t = Tensor::zeros(&shape);
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            let ex = &self.examples[i];
            t.data_mut()[row * per..(row + 1) * per].copy_from_slice(&ex.input);
            labels.push(ex.label);
        }
        (t, labels)
    }
}

/// Train/validation/test example sets for one preprocessing mode.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: ExampleSet,
    pub validation: ExampleSet,
    pub test: ExampleSet,
}

/// Runs the full frontend for every clip in the split: load, resample to
/// 8 kHz, fit to the dataset's nominal length, then either per-clip
/// normalization (raw) or log-mel extraction with channel statistics fit on
/// the training partition only.
pub fn prepare_split_data(spec: &DatasetSpec, split: &Split, preproc: Preproc) -> Result<SplitData> {
    let used: Vec<usize> = split
        .train
        .iter()
        .chain(&split.validation)
        .chain(&split.test)
        .copied()
        .collect();
    let mut unique = used.clone();
    unique.sort_unstable();
    unique.dedup();

    // Clip index -> fitted 8 kHz samples, computed once per clip even when
    // validation aliases test.
    let mut fitted: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    for &i in &unique {
        let clip = load_wav(&spec.clips[i].file)?;
        let clip = resample(&clip, 8000)?;
        fitted.insert(i, fit_length(&clip, spec.clip_seconds).samples);
    }

    match preproc {
        Preproc::Raw(mode) => {
            let n = fitted.values().next().map(|s| s.len()).unwrap_or(0);
            let build = |idxs: &[usize]| -> ExampleSet {
                let examples = idxs
                    .iter()
                    .map(|&i| {
                        let mut input = fitted[&i].clone();
                        normalize(&mut input, mode);
                        Example { input, label: spec.clips[i].label }
                    })
                    .collect();
                ExampleSet { shape: vec![n, 1], examples }
            };
            Ok(SplitData {
                train: build(&split.train),
                validation: build(&split.validation),
                test: build(&split.test),
            })
        }
        Preproc::LogMel => {
            let mut specs: std::collections::BTreeMap<usize, crate::audio::MelSpec> =
                Default::default();
            for (&i, samples) in &fitted {
                let clip = crate::audio::Clip { samples: samples.clone(), sample_rate: 8000 };
                specs.insert(i, log_mel(&clip)?);
            }
            let train_specs: Vec<_> = split.train.iter().map(|i| specs[i].clone()).collect();
            let stats = fit_channel_stats(&train_specs)?;

            let build = |idxs: &[usize]| -> Result<ExampleSet> {
                let mut shape = Vec::new();
                let mut examples = Vec::with_capacity(idxs.len());
                for &i in idxs {
                    let standardized = channel_standardize(&specs[&i], &stats)?;
                    shape = vec![standardized.n_mels(), standardized.frames(), 1];
                    examples.push(Example {
                        input: standardized.values.data().to_vec(),
                        label: spec.clips[i].label,
                    });
                }
                Ok(ExampleSet { shape, examples })
            };
            Ok(SplitData {
                train: build(&split.train)?,
                validation: build(&split.validation)?,
                test: build(&split.test)?,
            })
        }
    }
}

/// Adds the L2 penalty gradient (`2*lambda*w`) to the stored gradients and
/// returns the penalty term (`lambda * sum(w^2)`) to add to the loss. By
/// default only kernels are regularized — biases and batch-norm parameters
/// are exempt; `all_params` extends it to every trainable tensor.
pub fn apply_l2(net: &mut Network, lambda: f64, all_params: bool) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let mut penalty = 0.0;
    net.visit_params(&mut |kind, value, grad| {
        if all_params || kind == ParamKind::Kernel {
            for (g, w) in grad.data_mut().iter_mut().zip(value.data()) {
                penalty += w * w;
                *g += 2.0 * lambda * w;
            }
        }
    });
    lambda * penalty
}

/// Learning-rate plateau schedule with early stopping, driven by validation
/// accuracy. An epoch "improves" when its accuracy beats the best seen so
/// far by more than `min_delta`; improvement resets both patience counters.
/// `patience_lr` non-improving epochs cut the rate by `factor` (and reset
/// only the rate counter); `patience_stop` of them stop the run.
#[derive(Debug, Clone)]
pub struct ScheduleState {
    pub lr: f64,
    pub best_val_acc: f64,
    pub min_delta: f64,
    pub factor: f64,
    pub patience_lr: usize,
    pub patience_stop: usize,
    since_improve_lr: usize,
    since_improve_stop: usize,
}

impl ScheduleState {
    pub fn new(lr: f64, min_delta: f64, patience_lr: usize, patience_stop: usize) -> Self {
        ScheduleState {
            lr,
            best_val_acc: 0.0,
            min_delta,
            factor: 0.2,
            patience_lr,
            patience_stop,
            since_improve_lr: 0,
            since_improve_stop: 0,
        }
    }

    /// Feeds one epoch's validation accuracy; returns `true` when training
    /// should stop.
    pub fn epoch_end(&mut self, val_acc: f64) -> bool {
        if val_acc > self.best_val_acc + self.min_delta {
            self.best_val_acc = val_acc;
            self.since_improve_lr = 0;
            self.since_improve_stop = 0;
            return false;
        }
        self.since_improve_lr += 1;
        self.since_improve_stop += 1;
        if self.since_improve_lr >= self.patience_lr {
            self.lr *= self.factor;
            self.since_improve_lr = 0;
        }
        self.since_improve_stop >= self.patience_stop
    }
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone)]
pub struct Hyper {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lambda: f64,
    pub l2_all: bool,
    pub min_delta: f64,
    pub patience_lr: usize,
    pub patience_stop: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            lr: 1e-3,
            batch_size: 128,
            max_epochs: 400,
            lambda: 1e-4,
            l2_all: false,
            min_delta: 1e-4,
            patience_lr: 15,
            patience_stop: 50,
        }
    }
}

/// Per-epoch traces and the final test accuracy of one run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs: usize,
    pub test_accuracy: f64,
    /// Mean training loss (data + penalty) per epoch.
    pub loss_trace: Vec<f64>,
    /// Training accuracy per epoch, inference mode.
    pub train_trace: Vec<f64>,
    /// Validation accuracy per epoch, inference mode.
    pub val_trace: Vec<f64>,
    /// Learning rate in effect during each epoch.
    pub lr_trace: Vec<f64>,
}

/// Trains a network on the given split. Batches are drawn from a seeded
/// per-epoch shuffle, batch norm runs in training mode, and validation/test
/// accuracy is always measured in inference mode. A non-finite loss aborts
/// the run with the epoch and batch named.
pub fn train(net: &mut Network, data: &SplitData, hyper: &Hyper, seed: u64) -> Result<TrainOutcome> {
    train_with_hook(net, data, hyper, seed, None)
}

/// Per-epoch observer: called after each completed epoch with the updated
/// network and the outcome so far (useful for checkpointing, so an abort
/// can point at the last epoch that finished cleanly).
pub type EpochHook<'a> = &'a mut dyn FnMut(&mut Network, &TrainOutcome) -> Result<()>;

/// `train` with an optional per-epoch hook.
pub fn train_with_hook(
    net: &mut Network,
    data: &SplitData,
    hyper: &Hyper,
    seed: u64,
    mut hook: Option<EpochHook<'_>>,
) -> Result<TrainOutcome> {
    if data.train.examples.is_empty() {
        return Err(Error::Training("no training examples".into()));
    }
    let base = Rng::new(seed);
    let mut optimizer = Adam::new(hyper.lr);
    let mut schedule =
        ScheduleState::new(hyper.lr, hyper.min_delta, hyper.patience_lr, hyper.patience_stop);
    let mut outcome = TrainOutcome {
        epochs: 0,
        test_accuracy: 0.0,
        loss_trace: Vec::new(),
        train_trace: Vec::new(),
        val_trace: Vec::new(),
        lr_trace: Vec::new(),
    };

    let mut order: Vec<usize> = (0..data.train.examples.len()).collect();
    for epoch in 0..hyper.max_epochs {
        outcome.lr_trace.push(schedule.lr);
        base.derive(&[1, epoch as u64]).shuffle(&mut order);

        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(hyper.batch_size.max(1)) {
            let (x, labels) = data.train.batch(batch);
            net.forward(&x, Mode::Train)?;
            let data_loss = net.loss(&labels)?;
            net.backward(&labels)?;
            let penalty = apply_l2(net, hyper.lambda, hyper.l2_all);
            let loss = data_loss + penalty;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {batches}; run aborted"
                )));
            }
            optimizer.step(net).map_err(|e| match e {
                Error::Training(msg) => Error::Training(format!(
                    "{msg} at epoch {epoch}, batch {batches}; run aborted"
                )),
                other => other,
            })?;
            epoch_loss += loss;
            batches += 1;
        }
        outcome.loss_trace.push(epoch_loss / batches as f64);
        outcome.train_trace.push(evaluate(net, &data.train, hyper.batch_size)?);
        let val_acc = evaluate(net, &data.validation, hyper.batch_size)?;
        outcome.val_trace.push(val_acc);
        outcome.epochs = epoch + 1;
        if let Some(hook) = hook.as_deref_mut() {
            hook(net, &outcome)?;
        }

        let stop = schedule.epoch_end(val_acc);
        optimizer.lr = schedule.lr;
        if stop {
            break;
        }
    }

    outcome.test_accuracy = evaluate(net, &data.test, hyper.batch_size)?;
    Ok(outcome)
}

/// Mean argmax accuracy over a set, in inference mode (ties resolve to the
/// lowest class index inside the network's predict).
pub fn evaluate(net: &mut Network, set: &ExampleSet, batch_size: usize) -> Result<f64> {
    if set.examples.is_empty() {
        return Err(Error::Training("cannot evaluate an empty example set".into()));
    }
    let indices: Vec<usize> = (0..set.examples.len()).collect();
    let mut correct = 0usize;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = set.batch(chunk);
        let predicted = net.predict(&x)?;
        correct += predicted.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / set.examples.len() as f64)
}
