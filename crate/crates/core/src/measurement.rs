//! What the UE observes: down-sampled L1-RSRP, compressed multi-beam linear
//! measurements, and time-filtered cell-level L3-RSRP.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{dbm_to_mw, mw_to_dbm};
use crate::codebook::{SetB, SetBKind};
use crate::error::{Error, Result};

/// Gathers the Set B entries of a full L1-RSRP vector, preserving order.
pub fn downsample_measure(l1_rsrp: &[f64], set_b: &SetB) -> Result<Vec<f64>> {
    let indices = match &set_b.kind {
        SetBKind::SubsetOfA { indices } => indices,
        SetBKind::Full => return Ok(l1_rsrp.to_vec()),
        other => {
            return Err(Error::Config(format!(
                "downsampling needs a subset Set B, got {other:?}"
            )))
        }
    };
    indices
        .iter()
        .map(|&i| {
            l1_rsrp.get(i).copied().ok_or(Error::IndexOutOfRange {
                index: i,
                len: l1_rsrp.len(),
            })
        })
        .collect()
}

/// Complex `m x n` measurement matrix, row-major, split into real and
/// imaginary planes so it can double as a trainable layer parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionMatrix {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub learnable: bool,
}

impl CompressionMatrix {
    /// One unit entry per row at `indices[j]`.
    pub fn selection(indices: &[usize], cols: usize) -> Result<Self> {
        let rows = indices.len();
        let mut re = vec![0.0; rows * cols];
        for (j, &i) in indices.iter().enumerate() {
            if i >= cols {
                return Err(Error::IndexOutOfRange { index: i, len: cols });
            }
            re[j * cols + i] = 1.0;
        }
        Ok(CompressionMatrix {
            rows,
            cols,
            re,
            im: vec![0.0; rows * cols],
            learnable: true,
        })
    }

    /// i.i.d. complex Gaussian entries with unit expected row norm.
    pub fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let s = (0.5 / cols as f64).sqrt();
        let mut draw = || rng.sample::<f64, _>(StandardNormal) * s;
        let re = (0..rows * cols).map(|_| draw()).collect();
        let im = (0..rows * cols).map(|_| draw()).collect();
        CompressionMatrix {
            rows,
            cols,
            re,
            im,
            learnable: true,
        }
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        Complex64::new(self.re[r * self.cols + c], self.im[r * self.cols + c])
    }

    /// True when every row holds exactly one `1` and zeros elsewhere.
    pub fn is_selection(&self) -> bool {
        self.im.iter().all(|&x| x == 0.0)
            && self
                .re
                .chunks(self.cols)
                .all(|row| row.iter().filter(|&&x| x == 1.0).count() == 1 && row.iter().all(|&x| x == 0.0 || x == 1.0))
    }
}

/// `y = M h`, written out so the real and imaginary planes are combined in
/// the same order the compression layer uses.
pub fn cs_measure(beam_coeffs: &[Complex64], m: &CompressionMatrix) -> Result<Vec<Complex64>> {
    if beam_coeffs.len() != m.cols {
        return Err(Error::DimensionMismatch {
            expected: m.cols,
            got: beam_coeffs.len(),
        });
    }
    Ok((0..m.rows)
        .map(|j| {
            let row_re = &m.re[j * m.cols..(j + 1) * m.cols];
            let row_im = &m.im[j * m.cols..(j + 1) * m.cols];
            let mut yr = 0.0;
            let mut yi = 0.0;
            for ((h, &a), &b) in beam_coeffs.iter().zip(row_re).zip(row_im) {
                yr += a * h.re - b * h.im;
                yi += a * h.im + b * h.re;
            }
            Complex64::new(yr, yi)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Max,
    Mean,
}

/// Layer-3 filter kind; exponential by default, sliding window mean optional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum L3Filter {
    Ema { alpha: f64 },
    WindowMean { len: usize },
}

impl Default for L3Filter {
    fn default() -> Self {
        L3Filter::Ema { alpha: 0.5 }
    }
}

/// Per-cell layer-3 filter state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L3State {
    pub filtered: Vec<Option<f64>>,
    pub filter: L3Filter,
    pub aggregation: Aggregation,
    history: Vec<std::collections::VecDeque<f64>>,
}

impl L3State {
    pub fn new(n_cells: usize, filter: L3Filter, aggregation: Aggregation) -> Self {
        L3State {
            filtered: vec![None; n_cells],
            filter,
            aggregation,
            history: vec![Default::default(); n_cells],
        }
    }

    /// Filtered values, with `floor` for cells never updated.
    pub fn values(&self, floor: f64) -> Vec<f64> {
        self.filtered.iter().map(|v| v.unwrap_or(floor)).collect()
    }
}

/// Cell-level instantaneous RSRP from per-beam values.
pub fn aggregate(beams: &[f64], mode: Aggregation) -> Option<f64> {
    if beams.is_empty() {
        return None;
    }
    Some(match mode {
        Aggregation::Max => beams.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregation::Mean => mw_to_dbm(beams.iter().map(|&x| dbm_to_mw(x)).sum::<f64>() / beams.len() as f64),
    })
}

/// Advances the filter by one slot. `per_cell[c]` is the L1-RSRP beam vector
/// of cell `c`.
pub fn l3_update(state: &mut L3State, per_cell: &[Vec<f64>]) -> Result<()> {
    if per_cell.len() != state.filtered.len() {
        return Err(Error::DimensionMismatch {
            expected: state.filtered.len(),
            got: per_cell.len(),
        });
    }
    for (c, beams) in per_cell.iter().enumerate() {
        let inst = aggregate(beams, state.aggregation).ok_or(Error::Empty("beam vector for in-range cell"))?;
        state.filtered[c] = Some(match state.filter {
            L3Filter::Ema { alpha } => match state.filtered[c] {
                None => inst,
                Some(f) => (1.0 - alpha) * f + alpha * inst,
            },
            L3Filter::WindowMean { len } => {
                let h = &mut state.history[c];
                h.push_back(inst);
                while h.len() > len.max(1) {
                    h.pop_front();
                }
                h.iter().sum::<f64>() / h.len() as f64
            }
        });
    }
    Ok(())
}

/// Additive Gaussian measurement error in dB (log-normal on linear power).
pub fn add_measurement_noise(values: &mut [f64], sigma_db: f64, rng: &mut impl Rng) {
    if sigma_db <= 0.0 {
        return;
    }
    for v in values {
        *v += sigma_db * rng.sample::<f64, _>(StandardNormal);
    }
}
