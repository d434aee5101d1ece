use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compression::LinearCompression;
use super::layers::{ActKind, Activation, Cache, Conv2d, Dense, Flatten, Layer, MaxPool2d, Padding};
use super::lstm::Lstm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Serializable description of one layer (sizes and hyperparameters, no weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: Padding,
    },
    Maxpool,
    Lstm {
        inputs: usize,
        hidden: usize,
        return_sequences: bool,
    },
    Activation {
        function: ActKind,
    },
    Flatten {
        keep_leading: bool,
    },
    LinearCompression {
        rows: usize,
        cols: usize,
        positions: Vec<usize>,
        grid: (usize, usize),
        tx_power_dbm: f64,
        floor_dbm: f64,
        norm_lo: f64,
        norm_hi: f64,
        learnable: bool,
    },
}

impl LayerSpec {
    /// Builds a freshly initialised layer. Compression layers start as the
    /// zero matrix; callers set the initial measurement matrix explicitly.
    pub fn build(&self, rng: &mut ChaCha8Rng) -> Layer {
        match self {
            LayerSpec::Dense { inputs, outputs } => Layer::Dense(Dense::new(*inputs, *outputs, rng)),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => Layer::Conv2d(Conv2d::new(*in_channels, *out_channels, *kernel, *padding, rng)),
            LayerSpec::Maxpool => Layer::MaxPool2d(MaxPool2d),
            LayerSpec::Lstm {
                inputs,
                hidden,
                return_sequences,
            } => Layer::Lstm(Lstm::new(*inputs, *hidden, *return_sequences, rng)),
            LayerSpec::Activation { function } => Layer::Activation(Activation { kind: *function }),
            LayerSpec::Flatten { keep_leading } => Layer::Flatten(Flatten {
                keep_leading: *keep_leading,
            }),
            LayerSpec::LinearCompression {
                rows,
                cols,
                positions,
                grid,
                tx_power_dbm,
                floor_dbm,
                norm_lo,
                norm_hi,
                learnable,
            } => Layer::LinearCompression(LinearCompression {
                re: Tensor::zeros(&[*rows, *cols]),
                im: Tensor::zeros(&[*rows, *cols]),
                positions: positions.clone(),
                grid: *grid,
                tx_power_dbm: *tx_power_dbm,
                floor_dbm: *floor_dbm,
                norm_lo: *norm_lo,
                norm_hi: *norm_hi,
                learnable: *learnable,
            }),
        }
    }
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(l) => LayerSpec::Dense {
                inputs: l.inputs(),
                outputs: l.outputs(),
            },
            Layer::Conv2d(l) => LayerSpec::Conv2d {
                in_channels: l.weight.shape[1],
                out_channels: l.weight.shape[0],
                kernel: l.weight.shape[2],
                padding: l.padding,
            },
            Layer::MaxPool2d(_) => LayerSpec::Maxpool,
            Layer::Lstm(l) => LayerSpec::Lstm {
                inputs: l.inputs(),
                hidden: l.hidden(),
                return_sequences: l.return_sequences,
            },
            Layer::Activation(a) => LayerSpec::Activation { function: a.kind },
            Layer::Flatten(f) => LayerSpec::Flatten {
                keep_leading: f.keep_leading,
            },
            Layer::LinearCompression(c) => LayerSpec::LinearCompression {
                rows: c.rows(),
                cols: c.cols(),
                positions: c.positions.clone(),
                grid: c.grid,
                tx_power_dbm: c.tx_power_dbm,
                floor_dbm: c.floor_dbm,
                norm_lo: c.norm_lo,
                norm_hi: c.norm_hi,
                learnable: c.learnable,
            },
        }
    }

    /// Whether the optimizer may update this layer's parameters.
    pub fn trainable(&self) -> bool {
        match self {
            Layer::LinearCompression(c) => c.learnable,
            _ => true,
        }
    }
}

/// Ordered layer stack. `version` increments on every parameter mutation so
/// caches from an earlier forward pass are detected as stale.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layers: Vec<Layer>,
    version: u64,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    caches: Vec<Cache>,
}

/// Parameter gradients, one list per layer in `Layer::params` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<Tensor>>);

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Gradients(
            model
                .layers
                .iter()
                .map(|l| l.params().iter().map(|p| Tensor::zeros(&p.shape)).collect())
                .collect(),
        )
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                x.add_assign(y);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().flatten().for_each(|t| t.scale(s));
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.0.iter().flatten()
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(Tensor::all_finite)
    }
}

/// Samples per work unit in batched gradient evaluation. Fixed so the
/// reduction order does not depend on the thread count.
const CHUNK: usize = 16;

impl Model {
    pub fn new(layers: Vec<Layer>) -> Self {
        Model { layers, version: 0 }
    }

    pub fn from_specs(specs: &[LayerSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Model::new(specs.iter().map(|s| s.build(&mut rng)).collect())
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(Tensor::len).sum()
    }

    /// Mutable access to every parameter tensor; bumps the version.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.version += 1;
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn layers_mut(&mut self) -> &mut Vec<Layer> {
        self.version += 1;
        &mut self.layers
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, c) = layer.forward(&cur).map_err(|msg| Error::Shape {
                layer: i,
                kind: layer.kind(),
                msg,
            })?;
            caches.push(c);
            cur = y;
        }
        Ok((
            cur,
            ForwardCache {
                version: self.version,
                caches,
            },
        ))
    }

    /// Inference only.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x).map(|(y, _)| y)
    }

    pub fn backward(&self, cache: &ForwardCache, loss_grad: &Tensor) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(cache, loss_grad, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates into `grads`; returns the gradient with respect to the input.
    pub fn backward_into(&self, cache: &ForwardCache, loss_grad: &Tensor, grads: &mut Gradients) -> Result<Tensor> {
        if cache.version != self.version || cache.caches.len() != self.layers.len() {
            return Err(Error::StaleCache {
                cache: cache.version,
                model: self.version,
            });
        }
        let mut g = loss_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = layer.backward(&cache.caches[i], &g, &mut grads.0[i]);
        }
        Ok(g)
    }

    /// Non-differentiable selection state (pool winners, ReLU signs, clamps).
    pub(crate) fn kink_signature(&self, cache: &ForwardCache) -> Vec<u64> {
        let mut out = Vec::new();
        for (l, c) in self.layers.iter().zip(&cache.caches) {
            l.kink_pattern(c, &mut out);
        }
        out
    }

    /// Mean per-sample MSE over a batch and the averaged parameter gradient.
    /// Chunks run in parallel; partial sums are reduced in chunk order.
    pub fn batch_loss_grad(&self, inputs: &[&Tensor], targets: &[&Tensor]) -> Result<(f64, Gradients)> {
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        if inputs.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let idx: Vec<usize> = (0..inputs.len()).collect();
        let partials: Vec<Result<(f64, Gradients)>> = idx
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grads = Gradients::zeros_like(self);
                let mut loss = 0.0;
                for &i in chunk {
                    let (y, cache) = self.forward(inputs[i])?;
                    let (l, g) = mse(&y, targets[i])?;
                    loss += l;
                    self.backward_into(&cache, &g, &mut grads)?;
                }
                Ok((loss, grads))
            })
            .collect();
        let mut total = 0.0;
        let mut grads = Gradients::zeros_like(self);
        for p in partials {
            let (l, g) = p?;
            total += l;
            grads.add_assign(&g);
        }
        let n = inputs.len() as f64;
        grads.scale(1.0 / n);
        Ok((total / n, grads))
    }

    /// Mean per-sample MSE without gradients.
    pub fn batch_loss(&self, inputs: &[&Tensor], targets: &[&Tensor]) -> Result<f64> {
        let idx: Vec<usize> = (0..inputs.len()).collect();
        let partials: Vec<Result<f64>> = idx
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut s = 0.0;
                for &i in chunk {
                    s += mse(&self.predict(inputs[i])?, targets[i])?.0;
                }
                Ok(s)
            })
            .collect();
        let mut total = 0.0;
        for p in partials {
            total += p?;
        }
        Ok(total / inputs.len().max(1) as f64)
    }
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: pred.len(),
            got: target.len(),
        });
    }
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&pred.shape);
    for ((g, p), t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}
