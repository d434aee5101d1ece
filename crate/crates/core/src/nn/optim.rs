use serde::{Deserialize, Serialize};

use super::model::{Gradients, Model};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Halves the learning rate after `patience` validation rounds without
/// improvement, never going below `min_lr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReduceOnPlateau {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub best: f64,
    pub bad_rounds: usize,
}

impl Default for ReduceOnPlateau {
    fn default() -> Self {
        ReduceOnPlateau {
            lr: 1e-3,
            factor: 0.5,
            patience: 10,
            min_lr: 1e-8,
            best: f64::INFINITY,
            bad_rounds: 0,
        }
    }
}

impl ReduceOnPlateau {
    /// Records a validation loss; returns true when the rate was reduced.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad_rounds = 0;
            return false;
        }
        self.bad_rounds += 1;
        if self.bad_rounds > self.patience {
            self.bad_rounds = 0;
            let next = (self.lr * self.factor).max(self.min_lr);
            let changed = next < self.lr;
            self.lr = next;
            return changed;
        }
        false
    }

    pub fn at_floor(&self) -> bool {
        self.lr <= self.min_lr
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: ReduceOnPlateau,
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(model: &Model, schedule: ReduceOnPlateau) -> Self {
        let zeros: Vec<Tensor> = model
            .layers
            .iter()
            .flat_map(|l| l.params())
            .map(|p| Tensor::zeros(&p.shape))
            .collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr
    }

    /// One bias-corrected Adam update. Parameters of frozen layers are left
    /// untouched (their moments stay zero).
    pub fn step(&mut self, model: &mut Model, grads: &Gradients) -> Result<()> {
        let trainable: Vec<bool> = model
            .layers
            .iter()
            .flat_map(|l| std::iter::repeat(l.trainable()).take(l.params().len()))
            .collect();
        let params = model.params_mut();
        let gs: Vec<&Tensor> = grads.iter().collect();
        if params.len() != gs.len() || params.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                got: gs.len(),
            });
        }
        self.t += 1;
        let lr = self.schedule.lr;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.into_iter().zip(gs).enumerate() {
            if p.len() != g.len() {
                return Err(Error::DimensionMismatch {
                    expected: p.len(),
                    got: g.len(),
                });
            }
            if !trainable[k] {
                continue;
            }
            let (m, v) = (&mut self.m[k].data, &mut self.v[k].data);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p.data[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
