use serde::{Deserialize, Serialize};

use crate::dataset::{batches, Dataset, Embedding, Window, WindowMode};
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::mvtensor::{mse_loss, Adam, AdamConfig, Real, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    pub seed: u64,
    pub model: ModelConfig,
}

fn default_epochs() -> usize {
    50
}

fn default_batch() -> usize {
    32
}

impl TrainConfig {
    pub fn new(model: ModelConfig, seed: u64) -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            adam: AdamConfig::default(),
            seed,
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        let a = &self.adam;
        if !(a.lr >= 0.0 && a.lr.is_finite()) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return Err(Error::config("invalid Adam hyperparameters"));
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation loss.
    pub best: Model<f32>,
    pub best_epoch: usize,
    /// Parameters after the final epoch.
    pub last: Model<f32>,
    pub history: Vec<EpochRecord>,
}

/// Mean loss over `windows`, weighting each batch by its size.
fn mean_loss(model: &Model<f32>, data: &Dataset, windows: &[Window], emb: &Embedding, bs: usize) -> Result<f64> {
    let mask = model.loss_mask();
    let mut total = 0.0;
    for chunk in windows.chunks(bs) {
        let (x, y) = data.batch::<f32>(chunk, emb)?;
        let pred = model.forward(&x)?;
        total += mse_loss(&pred, &y, &mask)?.as_f64() * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// Adam on `f32` parameters, shuffled mini-batches, one validation pass per epoch.
///
/// Initialization and shuffling derive from `cfg.seed` only, so equal
/// inputs give bit-identical histories and checkpoints.
pub fn train(
    cfg: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let emb = Embedding::new(cfg.model.algebra);
    let train_windows = train_set.windows(WindowMode::Train)?;
    let val_windows = val_set.windows(WindowMode::Train)?;
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(Error::usage("training and validation sets must not be empty"));
    }
    let mut model = Model::<f32>::build(&cfg.model, cfg.seed)?;
    let mask = model.loss_mask();
    let mut adam = Adam::new(cfg.adam, model.params());
    let mut best: Option<(f64, usize, Model<f32>)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut sum = 0.0;
        for idx in batches(train_windows.len(), cfg.batch_size, cfg.seed, epoch as u64)? {
            step += 1;
            let chunk: Vec<Window> = idx.iter().map(|&i| train_windows[i]).collect();
            let (x, y) = train_set.batch::<f32>(&chunk, &emb)?;
            let mut tape = Tape::new();
            let xv = tape.input(x);
            let yv = tape.input(y);
            let out = model.forward_tape(&mut tape, xv)?;
            let loss = tape.mse(out, yv, &mask)?;
            let value = tape.scalar(loss)?.as_f64();
            if !value.is_finite() {
                return Err(Error::blowup(format!("non-finite training loss at epoch {epoch}, step {step}")));
            }
            let grads = tape.backward(loss)?.for_store(model.params());
            adam.step(model.params_mut(), &grads)?;
            sum += value * chunk.len() as f64;
        }
        let train_loss = sum / train_windows.len() as f64;
        let val_loss = mean_loss(&model, val_set, &val_windows, &emb, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::blowup(format!("non-finite validation loss at epoch {epoch}, step {step}")));
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
        };
        on_epoch(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(v, _, _)| val_loss < *v) {
            best = Some((val_loss, epoch, model.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: model,
        history,
    })
}
