//! End-to-end training of the learned pipelines with the negative-SNR loss.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::ops::Range;
use std::path::Path;

use adsf_autodiff::{
    clip_grad_norm, read_checkpoint, write_checkpoint, Adam, AdamConfig, Parameter, Tape,
};
use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::MaskProvider;
use crate::metrics::snr_loss_var;
use crate::model::{Features, SpatialModel};
use crate::stft::{analyze, Spectrogram, StftConfig};

pub const LATEST: &str = "latest.ckpt";
pub const BEST: &str = "best.ckpt";
const ADAM_FILE: &str = "latest.adam";
const STATE_FILE: &str = "latest.state.json";
pub const LOSS_CSV: &str = "loss.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<usize>,
    /// Epochs without validation improvement before stopping.
    pub early_stop_patience: usize,
    /// Epochs without validation improvement before the learning rate is
    /// multiplied by `lr_decay_factor`.
    pub lr_patience: usize,
    pub lr_decay_factor: f64,
    /// Global gradient-norm limit; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Steps between `latest` checkpoints; epoch ends always checkpoint.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr: 1e-4,
            max_epochs: 100,
            max_steps: None,
            early_stop_patience: 10,
            lr_patience: 3,
            lr_decay_factor: 0.5,
            clip_norm: Some(10.0),
            seed: 0,
            checkpoint_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config("lr_decay_factor must lie in (0, 1]".into()));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// One utterance: the multichannel mixture with its reverberant clean
/// speech at the reference channel.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub mixture: Spectrogram,
    /// Reference-channel clean speech spectrogram.
    pub clean: Spectrogram,
    /// Reference-channel clean speech.
    pub target: Vec<f64>,
    pub reference: usize,
}

impl Example {
    pub fn new(
        id: impl Into<String>,
        mixture: ArrayView2<f64>,
        speech: ArrayView2<f64>,
        reference: usize,
        stft: &StftConfig,
    ) -> Result<Self> {
        if mixture.dim() != speech.dim() {
            return Err(Error::InvalidInput(format!(
                "mixture {:?} and speech {:?} shapes differ",
                mixture.dim(),
                speech.dim()
            )));
        }
        if reference >= mixture.nrows() {
            return Err(Error::InvalidInput(format!(
                "reference channel {reference} out of range"
            )));
        }
        let target_row = speech.slice(ndarray::s![reference..reference + 1, ..]);
        Ok(Self {
            id: id.into(),
            mixture: analyze(mixture, stft)?,
            clean: analyze(target_row, stft)?,
            target: target_row.row(0).to_vec(),
            reference,
        })
    }

    /// Samples over which outputs are scored.
    pub fn interior(&self) -> Range<usize> {
        self.mixture.config.interior(self.mixture.num_samples)
    }
}

/// Graph inputs of one example for a particular model.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub features: Features,
    pub target: Vec<f64>,
    pub interior: Range<usize>,
}

impl TrainItem {
    pub fn new(model: &SpatialModel, example: &Example, masks: &dyn MaskProvider) -> Result<Self> {
        let mask = if model.variant().uses_mask() {
            Some(masks.speech_mask(&example.mixture, example.reference, Some(&example.clean))?)
        } else {
            None
        };
        Ok(Self {
            id: example.id.clone(),
            features: model.features(&example.mixture, mask.as_ref())?,
            target: example.target.clone(),
            interior: example.interior(),
        })
    }
}

/// Loss and parameter gradients of one utterance.
pub fn item_loss_and_grads(model: &SpatialModel, item: &TrainItem) -> Result<(f64, Vec<Vec<f64>>)> {
    let tape = Tape::new();
    let p = model.store.bind(&tape);
    let loss = item_loss_var(model, &p, item)?;
    let grads = tape.backward(&loss)?;
    Ok((
        loss.item(),
        p.iter().map(|v| grads.get_or_zeros(v)).collect(),
    ))
}

fn item_loss_var<'t>(
    model: &SpatialModel,
    p: &[adsf_autodiff::Var<'t>],
    item: &TrainItem,
) -> Result<adsf_autodiff::Var<'t>> {
    let s_hat = model.signal_var(p, &item.features)?;
    let Range { start, end } = item.interior;
    let s_hat = s_hat.slice(0, start, end)?;
    snr_loss_var(&item.target[start..end], &s_hat)
}

/// Loss of one utterance with frozen parameters.
pub fn item_loss(model: &SpatialModel, item: &TrainItem) -> Result<f64> {
    let tape = Tape::new();
    let p = model.store.bind_frozen(&tape);
    Ok(item_loss_var(model, &p, item)?.item())
}

/// Mean loss over `items`, evaluated in parallel.
pub fn mean_loss(model: &SpatialModel, items: &[TrainItem]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::InvalidInput("no items".into()));
    }
    let losses = items
        .par_iter()
        .map(|it| item_loss(model, it))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// One row of the loss curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub train_loss: f64,
    /// Present on the last step of an epoch.
    pub val_loss: Option<f64>,
    pub lr: f64,
}

/// Resumable position of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: usize,
    pub epoch: usize,
    /// Batches of the current epoch already consumed.
    pub batch_in_epoch: usize,
    pub lr: f64,
    pub best_val: Option<f64>,
    pub epochs_since_best: usize,
    pub epochs_since_decay: usize,
    pub finished: bool,
    pub history: Vec<LossRecord>,
}

impl TrainState {
    fn new(cfg: &TrainConfig) -> Self {
        Self {
            step: 0,
            epoch: 0,
            batch_in_epoch: 0,
            lr: cfg.lr,
            best_val: None,
            epochs_since_best: 0,
            epochs_since_decay: 0,
            finished: false,
            history: Vec::new(),
        }
    }
}

/// Why [`Trainer::run`] returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxSteps,
    MaxEpochs,
    EarlyStop,
}

pub struct Trainer {
    pub model: SpatialModel,
    pub config: TrainConfig,
    pub adam: Adam,
    pub state: TrainState,
    best: Option<Vec<Parameter>>,
}

impl Trainer {
    pub fn new(model: SpatialModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
            &model.store,
        );
        let state = TrainState::new(&config);
        Ok(Self {
            model,
            config,
            adam,
            state,
            best: None,
        })
    }

    /// Training order of epoch `epoch`.
    pub fn epoch_order(&self, epoch: usize, len: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.config.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        order.shuffle(&mut rng);
        order
    }

    /// One optimizer step on the mean loss of `batch`. Nothing is updated
    /// when the loss or a gradient is not finite.
    pub fn step(&mut self, batch: &[&TrainItem]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let model = &self.model;
        let results = batch
            .par_iter()
            .map(|it| item_loss_and_grads(model, it))
            .collect::<Result<Vec<_>>>()?;
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut grads: Vec<Vec<f64>> = self
            .model
            .store
            .iter()
            .map(|p| vec![0.0; p.data.len()])
            .collect();
        for (l, g) in &results {
            loss += l * scale;
            for (acc, gi) in grads.iter_mut().zip(g) {
                acc.iter_mut().zip(gi).for_each(|(a, v)| *a += v * scale);
            }
        }
        if !loss.is_finite() || grads.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite loss or gradient at step {}",
                self.state.step + 1
            )));
        }
        if let Some(c) = self.config.clip_norm {
            clip_grad_norm(&mut grads, c);
        }
        self.adam.config.lr = self.state.lr;
        self.adam.step(&mut self.model.store, &grads)?;
        Ok(loss)
    }

    /// Trains until a stopping rule fires. With `out_dir`, checkpoints and
    /// the loss curve are kept there; after a numerical failure the last
    /// good parameters are saved before the error is returned.
    pub fn run(
        &mut self,
        train: &[TrainItem],
        val: &[TrainItem],
        out_dir: Option<&Path>,
        mut on_record: impl FnMut(&LossRecord),
    ) -> Result<StopReason> {
        if train.is_empty() {
            return Err(Error::InvalidInput("empty training set".into()));
        }
        let per_epoch = train.len().div_ceil(self.config.batch_size);
        loop {
            if self.state.finished {
                return Ok(self.stop_reason());
            }
            if self.config.max_steps.is_some_and(|m| self.state.step >= m) {
                return self.finish(StopReason::MaxSteps, out_dir);
            }
            if self.state.epoch >= self.config.max_epochs {
                return self.finish(StopReason::MaxEpochs, out_dir);
            }
            let order = self.epoch_order(self.state.epoch, train.len());
            let b = self.state.batch_in_epoch;
            let idx = &order
                [b * self.config.batch_size..((b + 1) * self.config.batch_size).min(train.len())];
            let batch: Vec<&TrainItem> = idx.iter().map(|&i| &train[i]).collect();
            let loss = match self.step(&batch) {
                Ok(l) => l,
                Err(e @ Error::Numerical(_)) => {
                    if let Some(dir) = out_dir {
                        self.save(dir)?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            self.state.step += 1;
            self.state.batch_in_epoch += 1;
            let mut record = LossRecord {
                step: self.state.step,
                epoch: self.state.epoch,
                train_loss: loss,
                val_loss: None,
                lr: self.state.lr,
            };
            let epoch_done = self.state.batch_in_epoch == per_epoch;
            if epoch_done {
                let v = if val.is_empty() {
                    mean_loss(&self.model, train)?
                } else {
                    mean_loss(&self.model, val)?
                };
                record.val_loss = Some(v);
                self.end_epoch(v);
            }
            on_record(&record);
            self.state.history.push(record);
            if let Some(dir) = out_dir {
                if epoch_done || self.state.step.is_multiple_of(self.config.checkpoint_every) {
                    self.save(dir)?;
                }
            }
            if epoch_done && self.state.epochs_since_best >= self.config.early_stop_patience {
                return self.finish(StopReason::EarlyStop, out_dir);
            }
        }
    }

    fn end_epoch(&mut self, val: f64) {
        self.state.epoch += 1;
        self.state.batch_in_epoch = 0;
        if self.state.best_val.is_none_or(|b| val < b) {
            self.state.best_val = Some(val);
            self.state.epochs_since_best = 0;
            self.state.epochs_since_decay = 0;
            self.best = Some(self.model.store.iter().cloned().collect());
        } else {
            self.state.epochs_since_best += 1;
            self.state.epochs_since_decay += 1;
            if self.state.epochs_since_decay >= self.config.lr_patience {
                self.state.lr *= self.config.lr_decay_factor;
                self.state.epochs_since_decay = 0;
            }
        }
    }

    fn stop_reason(&self) -> StopReason {
        if self.config.max_steps.is_some_and(|m| self.state.step >= m) {
            StopReason::MaxSteps
        } else if self.state.epoch >= self.config.max_epochs {
            StopReason::MaxEpochs
        } else {
            StopReason::EarlyStop
        }
    }

    fn finish(&mut self, reason: StopReason, out_dir: Option<&Path>) -> Result<StopReason> {
        self.state.finished = true;
        if let Some(dir) = out_dir {
            self.save(dir)?;
        }
        Ok(reason)
    }

    /// Model with the best validation parameters seen so far, or the
    /// current parameters before the first epoch ends.
    pub fn best_model(&self) -> Result<SpatialModel> {
        let mut model = self.model.clone();
        if let Some(best) = &self.best {
            model.store.load_from(best)?;
        }
        Ok(model)
    }

    /// Writes `latest` (model, optimizer moments, state), `best` and the
    /// loss curve into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.model
            .save(BufWriter::new(File::create(dir.join(LATEST))?))?;
        self.best_model()?
            .save(BufWriter::new(File::create(dir.join(BEST))?))?;
        let mut moments = Vec::new();
        for (i, p) in self.model.store.iter().enumerate() {
            for (kind, buf) in [
                ("m", &self.adam.first_moment[i]),
                ("v", &self.adam.second_moment[i]),
            ] {
                moments.push(Parameter {
                    name: format!("adam.{kind}.{}", p.name),
                    shape: p.shape.clone(),
                    data: buf.clone(),
                });
            }
        }
        write_checkpoint(BufWriter::new(File::create(dir.join(ADAM_FILE))?), &moments)?;
        let saved = SavedState {
            adam_step: self.adam.step,
            config: self.config.clone(),
            state: self.state.clone(),
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join(STATE_FILE))?), &saved)?;
        write_loss_csv(dir.join(LOSS_CSV), &self.state.history)
    }

    /// Whether `dir` holds a run saved by [`Trainer::save`].
    pub fn can_resume(dir: &Path) -> bool {
        [LATEST, BEST, ADAM_FILE, STATE_FILE]
            .iter()
            .all(|f| dir.join(f).is_file())
    }

    /// Restores a run saved by [`Trainer::save`]. `config` replaces the
    /// saved one, so limits such as `max_steps` can be raised on resume.
    pub fn resume(dir: &Path, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = SpatialModel::load(BufReader::new(File::open(dir.join(LATEST))?))?;
        let best = SpatialModel::load(BufReader::new(File::open(dir.join(BEST))?))?;
        let saved: SavedState =
            serde_json::from_reader(BufReader::new(File::open(dir.join(STATE_FILE))?))?;
        let moments = read_checkpoint(BufReader::new(File::open(dir.join(ADAM_FILE))?))?;
        let mut trainer = Trainer::new(model, config)?;
        trainer.adam.step = saved.adam_step;
        for (i, p) in trainer.model.store.iter().enumerate() {
            for (kind, buf) in [
                ("m", &mut trainer.adam.first_moment[i]),
                ("v", &mut trainer.adam.second_moment[i]),
            ] {
                let name = format!("adam.{kind}.{}", p.name);
                let t = moments
                    .iter()
                    .find(|t| t.name == name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer tensor {name}")))?;
                if t.data.len() != buf.len() {
                    return Err(Error::Checkpoint(format!(
                        "optimizer tensor {name} has wrong size"
                    )));
                }
                buf.copy_from_slice(&t.data);
            }
        }
        trainer.state = saved.state;
        trainer.state.finished = false;
        if trainer.state.best_val.is_some() {
            trainer.best = Some(best.store.iter().cloned().collect());
        }
        Ok(trainer)
    }
}

#[derive(Serialize, Deserialize)]
struct SavedState {
    adam_step: u64,
    config: TrainConfig,
    state: TrainState,
}

pub fn write_loss_csv(path: impl AsRef<Path>, history: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "epoch", "train_loss", "val_loss", "lr"])?;
    for r in history {
        w.write_record([
            r.step.to_string(),
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.map(|v| v.to_string()).unwrap_or_default(),
            r.lr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
