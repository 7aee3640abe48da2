//! Stratified splitting, the Adam training loop with early stopping, and
//! classification metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::augment::{AugmentError, AugmentationPipeline};
use crate::data::Dataset;
use crate::image::{resize_bilinear, to_tensor, ImageBuffer};
use crate::nn::{Mode, Model, NnError, ParamKind, Tape};
use crate::rng::{substream, Domain};
use crate::tensor::{Tensor, TensorError};

mod metrics;
mod optim;
mod split;

pub use metrics::Metrics;
pub use optim::{optimizer_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use split::{split_dataset, SplitIndices, MIN_CLASS_SAMPLES};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("class {class} has {count} samples; at least 5 are needed")]
    ClassTooSmall { class: usize, count: usize },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("dataset has {data} classes but the model predicts {model}")]
    ClassCountMismatch { data: usize, model: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            learning_rate: 1e-5,
            batch_size: 64,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return bad("max_epochs, batch_size and patience must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.patience > self.max_epochs {
            return bad(format!("patience {} exceeds max_epochs {}", self.patience, self.max_epochs));
        }
        Ok(())
    }
}

/// Mean softmax cross-entropy of `(batch, classes)` logits.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<f64, TrainError> {
    let &[batch, classes] = logits.shape() else {
        return Err(TensorError::Invalid {
            op: "cross_entropy",
            reason: "logits must be (batch, classes)",
        }
        .into());
    };
    if targets.len() != batch || batch == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            left: logits.shape().to_vec(),
            right: alloc::vec![targets.len()],
        }
        .into());
    }
    if let Some(&target) = targets.iter().find(|&&t| t >= classes) {
        return Err(NnError::TargetOutOfRange { target, classes }.into());
    }
    Ok(crate::nn::softmax_cross_entropy(logits.data(), targets, classes).0)
}

/// Patience counter over validation losses.
///
/// The counter grows whenever a loss exceeds the best seen so far and
/// returns to zero on a strict improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    counter: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            counter: 0,
        }
    }

    /// Record the loss of 1-based `epoch`; true when training should stop.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.counter = 0;
        } else if loss > self.best {
            self.counter += 1;
        }
        self.counter >= self.patience
    }

    pub fn improved_at(&self, epoch: usize) -> bool {
        self.best_epoch == epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn counter(&self) -> usize {
        self.counter
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,val_accuracy";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.epochs {
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.val_accuracy);
        }
        s
    }
}

/// Source of training-time augmentation.
///
/// `sample_index` is the dataset index, so each sample gets its own stream
/// per epoch.
pub trait Augmenter {
    fn augment(&self, img: &ImageBuffer, epoch: u64, sample_index: u64) -> Result<ImageBuffer, AugmentError>;
}

impl Augmenter for AugmentationPipeline {
    fn augment(&self, img: &ImageBuffer, epoch: u64, sample_index: u64) -> Result<ImageBuffer, AugmentError> {
        self.apply_for_sample(img, epoch, sample_index)
    }
}

/// No augmentation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Augmenter for Identity {
    fn augment(&self, img: &ImageBuffer, _: u64, _: u64) -> Result<ImageBuffer, AugmentError> {
        Ok(img.clone())
    }
}

/// Image as a `(3, S, S)` tensor, resized when the side differs.
pub fn image_to_input(img: &ImageBuffer, size: usize) -> Result<Tensor, TrainError> {
    if img.width() == size && img.height() == size {
        return Ok(to_tensor(img, 3));
    }
    let resized = resize_bilinear(img, size, size).map_err(|_| TensorError::Invalid {
        op: "image_to_input",
        reason: "cannot resize image",
    })?;
    Ok(to_tensor(&resized, 3))
}

fn stack_inputs(items: &[Tensor]) -> Result<Tensor, TrainError> {
    Ok(Tensor::stack(items)?)
}

/// One Adam step on a batch; returns the batch loss before the update.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    batch: &Tensor,
    targets: &[usize],
    lr: f64,
) -> Result<f64, TrainError> {
    if !model.is_initialized() {
        return Err(NnError::Uninitialized.into());
    }
    let mut tape = Tape::new();
    let x = tape.constant(batch.clone());
    let fp = model.forward_pass(&mut tape, x, Mode::Train)?;
    let loss_var = tape.cross_entropy(fp.logits, targets)?;
    let loss = tape.value(loss_var).data()[0];
    if !loss.is_finite() {
        return Err(NnError::NonFinite("loss").into());
    }
    let grads = tape.backward(loss_var)?;
    adam.begin_step();
    let store = model.params_mut();
    for (i, var) in fp.param_vars.iter().enumerate() {
        let Some(v) = *var else { continue };
        if store.kind(i) != ParamKind::Trainable {
            continue;
        }
        let g = grads.get_or_zeros(v);
        adam.update(i, store.value_mut(i).data_mut(), g.data(), lr);
    }
    store.round_to_f32();
    model.apply_bn_updates(&fp.bn_updates);
    Ok(loss)
}

/// Eval-mode pass over `indices`: mean loss and argmax predictions.
pub fn predict(model: &Model, data: &Dataset, indices: &[usize], batch_size: usize) -> Result<(f64, Vec<usize>), TrainError> {
    if !model.is_initialized() {
        return Err(NnError::Uninitialized.into());
    }
    let size = model.config().input_size;
    let classes = model.config().num_classes;
    let mut total = 0.0;
    let mut preds = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let inputs = chunk
            .iter()
            .map(|&i| image_to_input(&data.samples[i].image, size))
            .collect::<Result<Vec<_>, _>>()?;
        let targets: Vec<usize> = chunk.iter().map(|&i| data.samples[i].label).collect();
        let logits = model.forward(&stack_inputs(&inputs)?)?;
        total += cross_entropy(&logits, &targets)? * chunk.len() as f64;
        for b in 0..chunk.len() {
            let row = logits.row(b);
            let mut best = 0;
            for c in 1..classes {
                if row[c] > row[best] {
                    best = c;
                }
            }
            preds.push(best);
        }
    }
    Ok((total / indices.len().max(1) as f64, preds))
}

/// Eval-mode metrics over the samples at `indices`.
pub fn evaluate(model: &Model, indices: &[usize], data: &Dataset) -> Result<Metrics, TrainError> {
    if indices.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let (_, preds) = predict(model, data, indices, 64)?;
    let targets: Vec<usize> = indices.iter().map(|&i| data.samples[i].label).collect();
    Ok(Metrics::from_predictions(&preds, &targets, model.config().num_classes))
}

/// [`train_with_observer`] without an observer.
pub fn train(
    model: &Model,
    data: &Dataset,
    split: &SplitIndices,
    augmenter: &dyn Augmenter,
    cfg: &TrainConfig,
) -> Result<(Model, TrainHistory), TrainError> {
    train_with_observer(model, data, split, augmenter, cfg, &mut |_| {})
}

/// Train a copy of `model` and return the parameters of the epoch with the
/// lowest validation loss.
///
/// Only training samples pass through `augmenter`; validation is scored on
/// the original images in eval mode.
pub fn train_with_observer(
    model: &Model,
    data: &Dataset,
    split: &SplitIndices,
    augmenter: &dyn Augmenter,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(Model, TrainHistory), TrainError> {
    cfg.validate()?;
    if !model.is_initialized() {
        return Err(NnError::Uninitialized.into());
    }
    if split.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if split.val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    if data.num_classes() > model.config().num_classes {
        return Err(TrainError::ClassCountMismatch {
            data: data.num_classes(),
            model: model.config().num_classes,
        });
    }
    let size = model.config().input_size;
    let mut model = model.clone();
    let sizes: Vec<usize> = model.params().entries().iter().map(|e| e.value.len()).collect();
    let mut adam = AdamState::new(&sizes);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut history = TrainHistory::default();
    let mut order = split.train.clone();
    for epoch in 1..=cfg.max_epochs {
        order.clone_from(&split.train);
        order.shuffle(&mut substream(cfg.seed, Domain::Shuffle, epoch as u64, 0));
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut inputs = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &data.samples[i];
                let img = augmenter.augment(&s.image, epoch as u64, i as u64)?;
                inputs.push(image_to_input(&img, size)?);
                targets.push(s.label);
            }
            let batch = stack_inputs(&inputs)?;
            let loss = match train_step(&mut model, &mut adam, &batch, &targets, cfg.learning_rate) {
                Err(TrainError::Nn(NnError::NonFinite(_))) => {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        batch: bi,
                        loss: f64::NAN,
                    })
                }
                r => r?,
            };
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / order.len() as f64;
        let (val_loss, preds) = predict(&model, data, &split.val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                batch: 0,
                loss: val_loss,
            });
        }
        let correct = preds.iter().zip(&split.val).filter(|(&p, &i)| p == data.samples[i].label).count();
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy: correct as f64 / split.val.len() as f64,
        };
        history.epochs.push(rec);
        on_epoch(&rec);
        let stop = stopper.observe(epoch, val_loss);
        if stopper.improved_at(epoch) {
            best.clone_from(&model);
        }
        history.stopped_epoch = epoch;
        if stop {
            break;
        }
    }
    history.best_epoch = stopper.best_epoch();
    history.best_val_loss = stopper.best();
    Ok((best, history))
}
