use crate::measurement::CompressionMatrix;

use super::layers::LayerResult;
use super::tensor::Tensor;

/// Min-max scaling shared by the dataset pipeline and the compression layer,
/// so both produce bitwise-identical features.
#[inline]
pub fn min_max(v: f64, lo: f64, hi: f64) -> f64 {
    (v - lo) / (hi - lo)
}

const DB_PER_LN: f64 = 10.0 / std::f64::consts::LN_10;

/// Learnable compressed-domain measurement front end.
///
/// Per time step the input row is `[Re h (n), Im h (n), noise_db (m)]` where
/// `h` holds the full-codebook beam coefficients. The layer forms `y = M h`,
/// converts each `|y_j|^2` to dBm (clamped at `floor_dbm`), adds the
/// pre-drawn noise, min-max normalises, and scatters the `m` values into a
/// zero `grid` image at `positions`. Output is `[T, 1, rows, cols]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCompression {
    /// `[m, n]`
    pub re: Tensor,
    /// `[m, n]`
    pub im: Tensor,
    pub positions: Vec<usize>,
    pub grid: (usize, usize),
    pub tx_power_dbm: f64,
    pub floor_dbm: f64,
    pub norm_lo: f64,
    pub norm_hi: f64,
    pub learnable: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct CompressionCache {
    in_shape: Vec<usize>,
    x: Vec<f64>,
    y: Vec<(f64, f64)>,
    pub(crate) clamped: Vec<bool>,
}

impl LinearCompression {
    pub fn from_matrix(
        m: &CompressionMatrix,
        positions: Vec<usize>,
        grid: (usize, usize),
        tx_power_dbm: f64,
        floor_dbm: f64,
        norm: (f64, f64),
    ) -> Self {
        LinearCompression {
            re: Tensor {
                shape: vec![m.rows, m.cols],
                data: m.re.clone(),
            },
            im: Tensor {
                shape: vec![m.rows, m.cols],
                data: m.im.clone(),
            },
            positions,
            grid,
            tx_power_dbm,
            floor_dbm,
            norm_lo: norm.0,
            norm_hi: norm.1,
            learnable: m.learnable,
        }
    }

    pub fn matrix(&self) -> CompressionMatrix {
        CompressionMatrix {
            rows: self.rows(),
            cols: self.cols(),
            re: self.re.data.clone(),
            im: self.im.data.clone(),
            learnable: self.learnable,
        }
    }

    pub fn rows(&self) -> usize {
        self.re.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.re.shape[1]
    }

    pub fn row_len(&self) -> usize {
        2 * self.cols() + self.rows()
    }

    pub(crate) fn validate(&self) -> LayerResult<()> {
        let cells = self.grid.0 * self.grid.1;
        if self.positions.len() != self.rows() {
            return Err(format!(
                "{} positions for {} measurements",
                self.positions.len(),
                self.rows()
            ));
        }
        if let Some(&p) = self.positions.iter().find(|&&p| p >= cells) {
            return Err(format!("position {p} outside {}x{} grid", self.grid.0, self.grid.1));
        }
        if self.norm_hi <= self.norm_lo {
            return Err("normalisation range is empty".into());
        }
        Ok(())
    }

    pub(crate) fn forward(&self, x: &Tensor) -> LayerResult<(Tensor, CompressionCache)> {
        self.validate()?;
        let (m, n, row) = (self.rows(), self.cols(), self.row_len());
        let steps = match x.shape.as_slice() {
            [k] if *k == row => 1,
            [t, k] if *k == row => *t,
            s => return Err(format!("expected [T, {row}] input, got {s:?}")),
        };
        let cells = self.grid.0 * self.grid.1;
        let out_shape = if x.shape.len() == 1 {
            vec![1, self.grid.0, self.grid.1]
        } else {
            vec![steps, 1, self.grid.0, self.grid.1]
        };
        let mut out = Tensor::zeros(&out_shape);
        let mut cache = CompressionCache {
            in_shape: x.shape.clone(),
            x: x.data.clone(),
            y: Vec::with_capacity(steps * m),
            clamped: Vec::with_capacity(steps * m),
        };
        for t in 0..steps {
            let xs = &x.data[t * row..(t + 1) * row];
            let (hr, rest) = xs.split_at(n);
            let (hi, noise) = rest.split_at(n);
            for j in 0..m {
                let a = &self.re.data[j * n..(j + 1) * n];
                let b = &self.im.data[j * n..(j + 1) * n];
                // same accumulation order as measurement::cs_measure
                let mut yr = 0.0;
                let mut yi = 0.0;
                for k in 0..n {
                    yr += a[k] * hr[k] - b[k] * hi[k];
                    yi += a[k] * hi[k] + b[k] * hr[k];
                }
                let p = yr * yr + yi * yi;
                let raw = if p > 0.0 {
                    self.tx_power_dbm + 10.0 * p.log10()
                } else {
                    f64::NEG_INFINITY
                };
                let clamped = !(raw > self.floor_dbm);
                let dbm = if clamped { self.floor_dbm } else { raw };
                out.data[t * cells + self.positions[j]] = min_max(dbm + noise[j], self.norm_lo, self.norm_hi);
                cache.y.push((yr, yi));
                cache.clamped.push(clamped);
            }
        }
        Ok((out, cache))
    }

    pub(crate) fn backward(&self, cache: &CompressionCache, g: &Tensor, grads: &mut [Tensor]) -> Tensor {
        let (m, n, row) = (self.rows(), self.cols(), self.row_len());
        let cells = self.grid.0 * self.grid.1;
        let steps = cache.y.len() / m.max(1);
        let scale = 1.0 / (self.norm_hi - self.norm_lo);
        let mut dx = Tensor::zeros(&cache.in_shape);
        let (gre, gim) = grads.split_at_mut(1);
        for t in 0..steps {
            let xs = &cache.x[t * row..(t + 1) * row];
            let (hr, rest) = xs.split_at(n);
            let hi = &rest[..n];
            let dxs = &mut dx.data[t * row..(t + 1) * row];
            for j in 0..m {
                let gp = g.data[t * cells + self.positions[j]] * scale;
                dxs[2 * n + j] = gp;
                let idx = t * m + j;
                if cache.clamped[idx] || gp == 0.0 {
                    continue;
                }
                let (yr, yi) = cache.y[idx];
                let p = yr * yr + yi * yi;
                let dyr = gp * DB_PER_LN * 2.0 * yr / p;
                let dyi = gp * DB_PER_LN * 2.0 * yi / p;
                let a = &self.re.data[j * n..(j + 1) * n];
                let b = &self.im.data[j * n..(j + 1) * n];
                let da = &mut gre[0].data[j * n..(j + 1) * n];
                for k in 0..n {
                    da[k] += dyr * hr[k] + dyi * hi[k];
                }
                let db = &mut gim[0].data[j * n..(j + 1) * n];
                for k in 0..n {
                    db[k] += -dyr * hi[k] + dyi * hr[k];
                }
                for k in 0..n {
                    dxs[k] += a[k] * dyr + b[k] * dyi;
                    dxs[n + k] += -b[k] * dyr + a[k] * dyi;
                }
            }
        }
        dx
    }
}
