use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, Model, ReduceOnPlateau, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub early_stop_patience: usize,
    pub initial_lr: f64,
    pub min_lr: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            max_epochs: 800,
            early_stop_patience: 30,
            initial_lr: 1e-3,
            min_lr: 1e-8,
            plateau_factor: 0.5,
            plateau_patience: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Paired inputs and targets.
#[derive(Debug, Clone, Copy)]
pub struct Split<'a> {
    pub inputs: &'a [Tensor],
    pub targets: &'a [Tensor],
}

impl<'a> Split<'a> {
    pub fn new(inputs: &'a [Tensor], targets: &'a [Tensor]) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        if inputs.is_empty() {
            return Err(Error::Empty("training split"));
        }
        Ok(Split { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Mini-batch Adam on MSE with reduce-on-plateau and early stopping.
/// Returns the parameters from the epoch with the lowest validation loss.
pub fn train_model(mut model: Model, train: Split, val: Split, cfg: &TrainConfig) -> Result<(Model, History)> {
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(Error::Config("batch_size and max_epochs must be positive".into()));
    }
    let schedule = ReduceOnPlateau {
        lr: cfg.initial_lr,
        factor: cfg.plateau_factor,
        patience: cfg.plateau_patience,
        min_lr: cfg.min_lr,
        ..ReduceOnPlateau::default()
    };
    let mut opt = Adam::new(&model, schedule);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let val_in: Vec<&Tensor> = val.inputs.iter().collect();
    let val_tg: Vec<&Tensor> = val.targets.iter().collect();

    let mut history = History {
        best_val_loss: f64::INFINITY,
        ..History::default()
    };
    let mut best = model.clone();
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xs: Vec<&Tensor> = chunk.iter().map(|&i| &train.inputs[i]).collect();
            let ts: Vec<&Tensor> = chunk.iter().map(|&i| &train.targets[i]).collect();
            let (loss, grads) = model.batch_loss_grad(&xs, &ts)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            sum += loss * chunk.len() as f64;
            opt.step(&mut model, &grads)?;
        }
        let train_loss = sum / train.len() as f64;
        let val_loss = model.batch_loss(&val_in, &val_tg)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: usize::MAX,
                loss: val_loss,
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: opt.lr(),
        });
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        opt.schedule.observe(val_loss);
        if stale >= cfg.early_stop_patience {
            break;
        }
    }
    Ok((best, history))
}
