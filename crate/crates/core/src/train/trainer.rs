//! Optimization loop on negative SI-SDR.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Scene;
use crate::error::{Error, Result};
use crate::metrics::{si_sdr, si_sdr_loss};
use crate::nn::{Graph, Mode};
use crate::signal::Montage;
use crate::tensor::Tensor;
use crate::train::checkpoint::Checkpoint;
use crate::train::model::{Model, ModelConfig};
use crate::train::optim::{clip_grad_norm, Adam, StepLr};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub decay_factor: f64,
    /// Epochs between learning-rate decays.
    pub decay_every: usize,
    pub grad_clip: f64,
    pub seed: u64,
    /// Training crop length in seconds; shorter scenes are used whole.
    pub crop_seconds: f64,
    /// Stops after this many optimizer steps when set.
    pub max_steps: Option<usize>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 1,
            lr: 1e-4,
            decay_factor: 0.5,
            decay_every: 20,
            grad_clip: 5.0,
            seed: 0,
            crop_seconds: 2.0,
            max_steps: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.epochs == 0 {
            p.push("epochs must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            p.push("batch_size must be >= 1".to_string());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            p.push(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            p.push(format!(
                "decay_factor must be in (0, 1], got {}",
                self.decay_factor
            ));
        }
        if self.decay_every == 0 {
            p.push("decay_every must be >= 1".to_string());
        }
        if !(self.grad_clip > 0.0) {
            p.push(format!(
                "grad_clip must be positive, got {}",
                self.grad_clip
            ));
        }
        if !(self.crop_seconds > 0.0) {
            p.push(format!(
                "crop_seconds must be positive, got {}",
                self.crop_seconds
            ));
        }
        if self.max_steps == Some(0) {
            p.push("max_steps must be >= 1 when set".to_string());
        }
        p.extend(self.model.problems());
        p
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().as_slice() {
            [] => Ok(()),
            p => Err(Error::Config(p.join("; "))),
        }
    }

    pub fn schedule(&self) -> StepLr {
        StepLr {
            base: self.lr,
            factor: self.decay_factor,
            every: self.decay_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub train_loss: f64,
    /// Mean train-mode SI-SDR over the epoch's crops.
    pub train_si_sdr: f64,
    /// Mean eval-mode SI-SDR over whole validation scenes.
    pub val_si_sdr: Option<f64>,
}

pub enum TrainEvent<'a> {
    Step {
        step: usize,
        epoch: usize,
        loss: f64,
        lr: f64,
    },
    Epoch(&'a EpochLog),
    /// New best model by validation SI-SDR (train SI-SDR without a
    /// validation split).
    Best(&'a Checkpoint),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochLog>,
    pub step_losses: Vec<f64>,
    pub best: Checkpoint,
    pub last: Checkpoint,
}

/// Smallest EEG-sample step that lands on a whole audio sample.
fn eeg_step(fs_audio: f64, fs_eeg: f64) -> Result<usize> {
    (1..=fs_eeg.ceil() as usize)
        .find(|k| {
            let a = *k as f64 * fs_audio / fs_eeg;
            (a - a.round()).abs() < 1e-9
        })
        .ok_or_else(|| {
            Error::Alignment(format!(
                "{fs_audio} Hz audio and {fs_eeg} Hz EEG never align"
            ))
        })
}

/// EEG-sample crop length shared by every batch.
fn crop_len(scenes: &[Scene], seconds: f64) -> Result<(usize, usize)> {
    let s0 = &scenes[0];
    let step = eeg_step(s0.mixture.sample_rate, s0.eeg.sample_rate)?;
    let shortest = scenes
        .iter()
        .map(|s| s.eeg.num_samples())
        .min()
        .unwrap_or(0);
    let want = (seconds * s0.eeg.sample_rate).round() as usize;
    let len = want.min(shortest) / step * step;
    if len == 0 {
        return Err(Error::Length(
            "training scenes are shorter than one aligned crop".into(),
        ));
    }
    Ok((len, step))
}

/// Mean eval-mode SI-SDR of the model on whole scenes.
pub fn mean_si_sdr(model: &Model, scenes: &[Scene]) -> Result<f64> {
    let mut total = 0.0;
    for s in scenes {
        let est = model.separate(&s.mixture, &s.eeg)?;
        total += si_sdr(&est.samples, &s.target.samples)?;
    }
    Ok(total / scenes.len() as f64)
}

/// Trains `model` in place. A non-finite loss or gradient aborts with a
/// `NonFinite` error; the last `Best` event still holds the last good model.
pub fn train(
    model: &mut Model,
    train_set: &[Scene],
    val_set: &[Scene],
    cfg: &TrainConfig,
    mut on_event: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("train split is empty".into()));
    }
    if model.config != cfg.model {
        return Err(Error::Config(
            "model does not match the training config".into(),
        ));
    }
    let (len, step) = crop_len(train_set, cfg.crop_seconds)?;
    let schedule = cfg.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let mut opt = Adam::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::new();
    let mut step_losses = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut steps = 0usize;

    'outer: for epoch in 1..=cfg.epochs {
        let lr = schedule.at(epoch);
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let crops: Vec<Scene> = chunk
                .iter()
                .map(|&i| {
                    let s = &train_set[i];
                    let slots = (s.eeg.num_samples() - len) / step;
                    s.crop(rng.gen_range(0..=slots) * step, len)
                })
                .collect::<Result<_>>()?;
            let loss = train_step(model, &mut opt, &crops, lr, cfg.grad_clip).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!(
                    "{m} at epoch {epoch}, step {} (scenes {}); last good checkpoint is from epoch {}",
                    steps + 1,
                    crops.iter().map(|c| c.id.as_str()).collect::<Vec<_>>().join(","),
                    best.as_ref().map_or(0, |(_, c)| c.epoch)
                )),
                other => other,
            })?;
            steps += 1;
            losses.push(loss);
            step_losses.push(loss);
            on_event(TrainEvent::Step {
                step: steps,
                epoch,
                loss,
                lr,
            })?;
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                finish_epoch(
                    model,
                    &opt,
                    val_set,
                    epoch,
                    lr,
                    &losses,
                    steps,
                    &mut epochs,
                    &mut best,
                    &mut on_event,
                )?;
                break 'outer;
            }
        }
        finish_epoch(
            model,
            &opt,
            val_set,
            epoch,
            lr,
            &losses,
            steps,
            &mut epochs,
            &mut best,
            &mut on_event,
        )?;
    }
    let last_epoch = epochs.last().map_or(0, |e: &EpochLog| e.epoch);
    Ok(TrainOutcome {
        epochs,
        step_losses,
        best: best.expect("at least one epoch ran").1,
        last: Checkpoint::capture(model, &opt, last_epoch, steps),
    })
}

#[allow(clippy::too_many_arguments)]
fn finish_epoch(
    model: &Model,
    opt: &Adam,
    val_set: &[Scene],
    epoch: usize,
    lr: f64,
    losses: &[f64],
    steps: usize,
    epochs: &mut Vec<EpochLog>,
    best: &mut Option<(f64, Checkpoint)>,
    on_event: &mut impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<()> {
    let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
    let val = if val_set.is_empty() {
        None
    } else {
        Some(mean_si_sdr(model, val_set)?)
    };
    let log = EpochLog {
        epoch,
        lr,
        steps,
        train_loss,
        train_si_sdr: -train_loss,
        val_si_sdr: val,
    };
    on_event(TrainEvent::Epoch(&log))?;
    let score = val.unwrap_or(-train_loss);
    if best.as_ref().is_none_or(|(b, _)| score > *b) {
        let ck = Checkpoint::capture(model, opt, epoch, steps);
        on_event(TrainEvent::Best(&ck))?;
        *best = Some((score, ck));
    }
    epochs.push(log);
    Ok(())
}

/// One optimizer update on a batch of equally long crops; returns the loss.
pub fn train_step(
    model: &mut Model,
    opt: &mut Adam,
    batch: &[Scene],
    lr: f64,
    clip: f64,
) -> Result<f64> {
    let mut g = Graph::new(Mode::Train);
    let mixtures: Vec<_> = batch.iter().map(|s| &s.mixture).collect();
    let eeg: Vec<_> = batch.iter().map(|s| &s.eeg).collect();
    let est = model.forward(&mut g, &mixtures, &eeg)?;
    let t = batch[0].target.len();
    let target = Tensor::new(
        &[batch.len(), 1, t],
        batch
            .iter()
            .flat_map(|s| s.target.samples.iter().copied())
            .collect(),
    )?;
    let loss = si_sdr_loss(&mut g, est, &target)?;
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss is {value}")));
    }
    let grads = g.backward(loss)?;
    model.params.zero_grads();
    model.params.accumulate(&g, &grads)?;
    clip_grad_norm(&mut model.params, clip)?;
    opt.step(&mut model.params, lr);
    model.params.apply_stat_updates(g.stat_updates())?;
    model.round_to_f32();
    Ok(value)
}

/// Fresh model for `cfg`, seeded from `cfg.seed`.
pub fn init_model(cfg: &TrainConfig, montage: Option<&Montage>) -> Result<Model> {
    Model::init(cfg.model.clone(), montage, cfg.seed)
}
