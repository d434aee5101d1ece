use rand::Rng;

use super::layers::{sigmoid, LayerResult};
use super::tensor::{gemv_acc, gemv_t_acc, outer_acc, Tensor};

/// Single LSTM layer over a `[T, F]` sequence, gate order i, f, g, o.
///
/// Returns `[T, H]` when `return_sequences` is set, otherwise the last hidden
/// state `[H]`. A plain vector input is treated as a length-1 sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// `[4H, F]`
    pub w_input: Tensor,
    /// `[4H, H]`
    pub w_hidden: Tensor,
    /// `[4H]`
    pub bias: Tensor,
    pub return_sequences: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct LstmCache {
    in_shape: Vec<usize>,
    x: Vec<f64>,
    // per step, post-nonlinearity gate values [4H]
    gates: Vec<Vec<f64>>,
    // c_t and h_t for t = 0..T (index 0 is the zero initial state)
    c: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

impl Lstm {
    pub fn new(inputs: usize, hidden: usize, return_sequences: bool, rng: &mut impl Rng) -> Self {
        let a = (1.0 / hidden as f64).sqrt();
        let mut init = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-a..a)).collect() };
        let mut bias = vec![0.0; 4 * hidden];
        // forget-gate bias of one keeps early gradients alive
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        Lstm {
            w_input: Tensor {
                shape: vec![4 * hidden, inputs],
                data: init(4 * hidden * inputs),
            },
            w_hidden: Tensor {
                shape: vec![4 * hidden, hidden],
                data: init(4 * hidden * hidden),
            },
            bias: Tensor::vector(bias),
            return_sequences,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.shape[1]
    }

    pub fn inputs(&self) -> usize {
        self.w_input.shape[1]
    }

    pub(crate) fn forward(&self, x: &Tensor) -> LayerResult<(Tensor, LstmCache)> {
        let f = self.inputs();
        let h = self.hidden();
        let steps = match x.shape.as_slice() {
            [n] if *n == f => 1,
            [t, n] if *n == f => *t,
            s => return Err(format!("expected [T, {f}] input, got {s:?}")),
        };
        let mut cache = LstmCache {
            in_shape: x.shape.clone(),
            x: x.data.clone(),
            gates: Vec::with_capacity(steps),
            c: vec![vec![0.0; h]],
            h: vec![vec![0.0; h]],
        };
        for t in 0..steps {
            let mut z = self.bias.data.clone();
            gemv_acc(&self.w_input.data, &x.data[t * f..(t + 1) * f], &mut z);
            gemv_acc(&self.w_hidden.data, &cache.h[t], &mut z);
            for (k, v) in z.iter_mut().enumerate() {
                *v = if (2 * h..3 * h).contains(&k) {
                    v.tanh()
                } else {
                    sigmoid(*v)
                };
            }
            let c_prev = &cache.c[t];
            let c: Vec<f64> = (0..h).map(|j| z[h + j] * c_prev[j] + z[j] * z[2 * h + j]).collect();
            let hs: Vec<f64> = (0..h).map(|j| z[3 * h + j] * c[j].tanh()).collect();
            cache.gates.push(z);
            cache.c.push(c);
            cache.h.push(hs);
        }
        let y = if self.return_sequences {
            Tensor {
                shape: vec![steps, h],
                data: cache.h[1..].concat(),
            }
        } else {
            Tensor::vector(cache.h[steps].clone())
        };
        Ok((y, cache))
    }

    pub(crate) fn backward(&self, cache: &LstmCache, gy: &Tensor, grads: &mut [Tensor]) -> Tensor {
        let f = self.inputs();
        let h = self.hidden();
        let steps = cache.gates.len();
        let mut dx = Tensor::zeros(&cache.in_shape);
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        let (gwi, rest) = grads.split_at_mut(1);
        let (gwh, gb) = rest.split_at_mut(1);
        for t in (0..steps).rev() {
            let mut dh = dh_next.clone();
            if self.return_sequences {
                for (a, b) in dh.iter_mut().zip(&gy.data[t * h..(t + 1) * h]) {
                    *a += b;
                }
            } else if t == steps - 1 {
                for (a, b) in dh.iter_mut().zip(&gy.data) {
                    *a += b;
                }
            }
            let z = &cache.gates[t];
            let c = &cache.c[t + 1];
            let c_prev = &cache.c[t];
            for j in 0..h {
                let (i, fg, g, o) = (z[j], z[h + j], z[2 * h + j], z[3 * h + j]);
                let tc = c[j].tanh();
                let dc = dc_next[j] + dh[j] * o * (1.0 - tc * tc);
                dz[j] = dc * g * i * (1.0 - i);
                dz[h + j] = dc * c_prev[j] * fg * (1.0 - fg);
                dz[2 * h + j] = dc * i * (1.0 - g * g);
                dz[3 * h + j] = dh[j] * tc * o * (1.0 - o);
                dc_next[j] = dc * fg;
            }
            let xt = &cache.x[t * f..(t + 1) * f];
            outer_acc(&dz, xt, &mut gwi[0].data);
            outer_acc(&dz, &cache.h[t], &mut gwh[0].data);
            for (a, b) in gb[0].data.iter_mut().zip(&dz) {
                *a += b;
            }
            gemv_t_acc(&self.w_input.data, &dz, &mut dx.data[t * f..(t + 1) * f]);
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            gemv_t_acc(&self.w_hidden.data, &dz, &mut dh_next);
        }
        dx
    }
}
