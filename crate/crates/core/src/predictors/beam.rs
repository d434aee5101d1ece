//! Beam-level spatial-temporal prediction: datasets, model inputs, baselines
//! and accuracy.

use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::container;
use super::train::{train_model, History, Split, TrainConfig};
use super::{ArchConfig, Normalizer, PredictorKind, PredictorSpec};
use crate::channel::{beam_coefficients, cell_codebooks, coeff_rsrp_dbm, synthesize_paths_at, ChannelRealization};
use crate::codebook::{select_set_b, Ratio, SelectionPattern, SetB};
use crate::error::{Error, Result};
use crate::measurement::CompressionMatrix;
use crate::nn::{argmax, ActKind, Layer, LayerSpec, LinearCompression, Model, Tensor};
use crate::scenario::Scenario;
use crate::trace::pass_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamDatasetConfig {
    /// Input window length in slots.
    pub t_in: usize,
    /// Target slot offset after the last input slot.
    pub horizon: usize,
    pub n_samples: usize,
    /// Independent channel realizations (runs along the track).
    pub n_passes: usize,
    pub ratio: Ratio,
    pub pattern: SelectionPattern,
    pub noise_sigma_db: f64,
    pub seed: u64,
}

impl Default for BeamDatasetConfig {
    fn default() -> Self {
        BeamDatasetConfig {
            t_in: 4,
            horizon: 1,
            n_samples: 10_000,
            n_passes: 10,
            ratio: Ratio { num: 1, den: 16 },
            pattern: SelectionPattern::Equidistant,
            noise_sigma_db: 1.0,
            seed: 0,
        }
    }
}

/// Metadata stored next to the arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamMeta {
    pub config: BeamDatasetConfig,
    pub speed_kmh: f64,
    pub scenario_hash: String,
    pub set_b: SetB,
    pub n_beams: usize,
    pub grid: (usize, usize),
    pub tx_power_dbm: f64,
    pub floor_dbm: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub input_norm: Normalizer,
    pub target_norm: Normalizer,
}

/// Samples ordered by (pass, slot); the split is contiguous in that order so
/// validation and test windows come from runs never seen in training.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamDataset {
    pub meta: BeamMeta,
    /// `[N, T, 2n]`: Re and Im of the full-codebook beam coefficients.
    pub coeffs: Vec<f64>,
    /// `[N, T, m]`: measurement noise in dB for each of the m measurements.
    pub noise: Vec<f64>,
    /// `[N, n]`: true L1-RSRP of every beam at the target slot, dBm.
    pub target: Vec<f64>,
    /// `[N, 3]`: pass, first slot, cell.
    pub origin: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

pub(crate) fn split_sizes(n: usize, parts: (usize, usize, usize)) -> (usize, usize, usize) {
    let total = parts.0 + parts.1 + parts.2;
    let val = n * parts.1 / total;
    let test = n * parts.2 / total;
    (n - val - test, val, test)
}

impl BeamDataset {
    pub fn len(&self) -> usize {
        self.target.len() / self.meta.n_beams
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn m(&self) -> usize {
        self.meta.set_b.count()
    }

    pub fn range(&self, split: SplitKind) -> std::ops::Range<usize> {
        let (a, b) = (self.meta.n_train, self.meta.n_train + self.meta.n_val);
        match split {
            SplitKind::Train => 0..a,
            SplitKind::Val => a..b,
            SplitKind::Test => b..self.len(),
        }
    }

    fn indices(&self) -> Vec<usize> {
        self.meta.set_b.indices().expect("beam datasets use a subset Set B")
    }

    /// Raw per-slot rows `[T, 2n + m]` consumed by the compression layer.
    pub fn raw_row(&self, i: usize) -> Tensor {
        let (t, n, m) = (self.meta.config.t_in, self.meta.n_beams, self.m());
        let mut data = Vec::with_capacity(t * (2 * n + m));
        for s in 0..t {
            let c = &self.coeffs[(i * t + s) * 2 * n..(i * t + s + 1) * 2 * n];
            data.extend_from_slice(c);
            data.extend_from_slice(&self.noise[(i * t + s) * m..(i * t + s + 1) * m]);
        }
        Tensor {
            shape: vec![t, 2 * n + m],
            data,
        }
    }

    /// Down-sampled measurements `[T, m]` in dBm (noise included).
    pub fn measured_dbm(&self, i: usize) -> Vec<f64> {
        let (t, n, m) = (self.meta.config.t_in, self.meta.n_beams, self.m());
        let idx = self.indices();
        let mut out = Vec::with_capacity(t * m);
        for s in 0..t {
            let c = &self.coeffs[(i * t + s) * 2 * n..(i * t + s + 1) * 2 * n];
            for (j, &b) in idx.iter().enumerate() {
                let h = Complex64::new(c[b], c[n + b]);
                out.push(
                    coeff_rsrp_dbm(h, self.meta.tx_power_dbm, self.meta.floor_dbm) + self.noise[(i * t + s) * m + j],
                );
            }
        }
        out
    }

    pub fn target_dbm(&self, i: usize) -> &[f64] {
        &self.target[i * self.meta.n_beams..(i + 1) * self.meta.n_beams]
    }

    /// Model input for sample `i` in the layout `kind` expects.
    pub fn input(&self, kind: PredictorKind, i: usize) -> Result<Tensor> {
        let (t, m) = (self.meta.config.t_in, self.m());
        let (gr, gc) = self.meta.grid;
        let norm = self.meta.input_norm;
        let scatter = |per_frame: usize| -> Vec<f64> {
            let meas = self.measured_dbm(i);
            let idx = self.indices();
            let mut img = vec![0.0; t * per_frame];
            for s in 0..t {
                for (j, &b) in idx.iter().enumerate() {
                    img[s * per_frame + b] = norm.normalize(meas[s * m + j]);
                }
            }
            img
        };
        Ok(match kind {
            PredictorKind::LstmDownsampled | PredictorKind::NonaiBestMeasured => Tensor {
                shape: vec![t, m],
                data: self.measured_dbm(i).iter().map(|&v| norm.normalize(v)).collect(),
            },
            PredictorKind::CnnFcDownsampled => Tensor {
                shape: vec![t, gr, gc],
                data: scatter(gr * gc),
            },
            PredictorKind::ConvlstmDownsampled => Tensor {
                shape: vec![t, 1, gr, gc],
                data: scatter(gr * gc),
            },
            PredictorKind::Csai => self.raw_row(i),
            k => return Err(Error::Config(format!("{k} is not a beam-level predictor"))),
        })
    }

    pub fn target_tensor(&self, i: usize) -> Tensor {
        Tensor::vector(
            self.target_dbm(i)
                .iter()
                .map(|&v| self.meta.target_norm.normalize(v))
                .collect(),
        )
    }

    pub fn tensors(&self, kind: PredictorKind, split: SplitKind) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let r = self.range(split);
        let xs = r
            .clone()
            .into_par_iter()
            .map(|i| self.input(kind, i))
            .collect::<Result<Vec<_>>>()?;
        let ts = r.map(|i| self.target_tensor(i)).collect();
        Ok((xs, ts))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let (n, t, m) = (self.len(), self.meta.config.t_in, self.m());
        container::write(
            dir,
            &self.meta,
            &[
                ("coeffs", vec![n, t, 2 * self.meta.n_beams], &self.coeffs),
                ("noise", vec![n, t, m], &self.noise),
                ("target", vec![n, self.meta.n_beams], &self.target),
                ("origin", vec![n, 3], &self.origin),
            ],
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (meta, mut arrays): (BeamMeta, _) = container::read(dir)?;
        let (_, coeffs) = container::take(&mut arrays, "coeffs", dir)?;
        let (_, noise) = container::take(&mut arrays, "noise", dir)?;
        let (_, target) = container::take(&mut arrays, "target", dir)?;
        let (_, origin) = container::take(&mut arrays, "origin", dir)?;
        Ok(BeamDataset {
            meta,
            coeffs,
            noise,
            target,
            origin,
        })
    }
}

struct Window {
    pass: usize,
    start: usize,
}

/// Builds the dataset for the scenario's configured speed.
///
/// Each sample follows the cell that is strongest at the last input slot.
pub fn generate_beam_dataset(s: &Scenario, cfg: &BeamDatasetConfig) -> Result<BeamDataset> {
    if cfg.horizon == 0 || cfg.t_in == 0 {
        return Err(Error::Config("t_in and horizon must be >= 1".into()));
    }
    if cfg.n_samples == 0 || cfg.n_passes == 0 {
        return Err(Error::Config("n_samples and n_passes must be >= 1".into()));
    }
    let books = cell_codebooks(s);
    let n = books[0].len();
    if books.iter().any(|b| b.len() != n) {
        return Err(Error::Config("all cells must use the same codebook size".into()));
    }
    let tx = s.sector(s.cells[0]).tx_power_dbm;
    if s.cells.iter().any(|&c| s.sector(c).tx_power_dbm != tx) {
        return Err(Error::Config("beam datasets need a uniform sector tx power".into()));
    }
    let set_b = select_set_b(n, cfg.pattern, cfg.ratio, cfg.seed)?;
    let idx = set_b.indices().expect("subset");
    let m = idx.len();
    let floor = s.config.channel.rsrp_floor_dbm;

    let span = cfg.t_in + cfg.horizon;
    if s.n_slots < span {
        return Err(Error::InsufficientSlots {
            needed: span,
            available: s.n_slots,
        });
    }
    let starts_per_pass = s.n_slots - span + 1;
    let passes = cfg.n_passes.min(cfg.n_samples);
    let mut windows = Vec::with_capacity(cfg.n_samples);
    for p in 0..passes {
        let k = cfg.n_samples / passes + usize::from(p < cfg.n_samples % passes);
        if k > starts_per_pass {
            return Err(Error::InsufficientSlots {
                needed: k + span - 1,
                available: s.n_slots,
            });
        }
        windows.extend((0..k).map(|i| Window {
            pass: p,
            start: i * starts_per_pass / k,
        }));
    }
    let reals: Vec<ChannelRealization> = (0..passes)
        .map(|p| ChannelRealization::new(s, pass_seed(cfg.seed, p as u64)))
        .collect();

    type Sample = (Vec<f64>, Vec<f64>, Vec<f64>, [f64; 3]);
    let samples: Vec<Sample> = windows
        .par_iter()
        .enumerate()
        .map(|(wi, w)| -> Result<Sample> {
            let real = &reals[w.pass];
            let last = w.start + cfg.t_in - 1;
            let coeffs_at = |cell: usize, slot: usize| -> Result<Vec<Complex64>> {
                let ue = s.ue_position(slot)?;
                let ps = synthesize_paths_at(s, real, cell, &ue)?;
                Ok(if ps.paths.is_empty() {
                    vec![Complex64::new(0.0, 0.0); n]
                } else {
                    beam_coefficients(&ps, &books[cell])
                })
            };
            let mut best_cell = 0;
            let mut best_p = f64::NEG_INFINITY;
            for c in 0..s.n_cells() {
                let p = coeffs_at(c, last)?.iter().map(|h| h.norm_sqr()).fold(0.0, f64::max);
                if p > best_p {
                    best_p = p;
                    best_cell = c;
                }
            }
            let mut co = Vec::with_capacity(cfg.t_in * 2 * n);
            for slot in w.start..=last {
                let h = coeffs_at(best_cell, slot)?;
                co.extend(h.iter().map(|c| c.re));
                co.extend(h.iter().map(|c| c.im));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(pass_seed(cfg.seed ^ 0x6E01_5E00, wi as u64));
            let noise: Vec<f64> = (0..cfg.t_in * m)
                .map(|_| {
                    if cfg.noise_sigma_db > 0.0 {
                        cfg.noise_sigma_db * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    }
                })
                .collect();
            let target = coeffs_at(best_cell, last + cfg.horizon)?
                .iter()
                .map(|&h| coeff_rsrp_dbm(h, tx, floor))
                .collect();
            Ok((co, noise, target, [w.pass as f64, w.start as f64, best_cell as f64]))
        })
        .collect::<Result<_>>()?;

    let mut ds = BeamDataset {
        meta: BeamMeta {
            config: cfg.clone(),
            speed_kmh: s.ue_speed_kmh,
            scenario_hash: s.hash(),
            set_b,
            n_beams: n,
            grid: books[0].beam_grid,
            tx_power_dbm: tx,
            floor_dbm: floor,
            n_train: 0,
            n_val: 0,
            n_test: 0,
            input_norm: Normalizer { lo: 0.0, hi: 1.0 },
            target_norm: Normalizer { lo: 0.0, hi: 1.0 },
        },
        coeffs: Vec::with_capacity(cfg.n_samples * cfg.t_in * 2 * n),
        noise: Vec::with_capacity(cfg.n_samples * cfg.t_in * m),
        target: Vec::with_capacity(cfg.n_samples * n),
        origin: Vec::with_capacity(cfg.n_samples * 3),
    };
    for (c, z, t, o) in samples {
        ds.coeffs.extend(c);
        ds.noise.extend(z);
        ds.target.extend(t);
        ds.origin.extend(o);
    }
    let (tr, va, te) = split_sizes(ds.len(), (8, 1, 1));
    ds.meta.n_train = tr;
    ds.meta.n_val = va;
    ds.meta.n_test = te;
    let fit_range = if tr > 0 { 0..tr } else { 0..ds.len() };
    let meas: Vec<f64> = fit_range.clone().flat_map(|i| ds.measured_dbm(i)).collect();
    ds.meta.input_norm = Normalizer::fit(&meas)?;
    ds.meta.target_norm = Normalizer::fit(&ds.target[fit_range.start * n..fit_range.end * n])?;
    Ok(ds)
}

/// Best measured Set-B beam, ties to the lowest index.
pub fn predict_nonai(measured: &[f64], set_b: &SetB) -> Result<usize> {
    if measured.is_empty() {
        return Err(Error::Empty("measurement vector"));
    }
    let idx = set_b
        .indices()
        .ok_or_else(|| Error::Config("non-AI baseline needs a subset Set B".into()))?;
    if idx.len() != measured.len() {
        return Err(Error::DimensionMismatch {
            expected: idx.len(),
            got: measured.len(),
        });
    }
    Ok(idx[argmax(measured)])
}

/// Fraction of samples whose prediction is among the true best beams.
pub fn top1_accuracy(predictions: &[usize], truth: &[Vec<f64>]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: predictions.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("accuracy inputs"));
    }
    let hits = predictions
        .iter()
        .zip(truth)
        .filter(|(&p, t)| {
            let best = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            t.get(p).is_some_and(|&v| v == best)
        })
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Network specs for a beam-level predictor on a given dataset geometry.
pub fn beam_model_specs(kind: PredictorKind, arch: &ArchConfig, meta: &BeamMeta) -> Result<Vec<LayerSpec>> {
    arch.validate()?;
    let (t, n, m) = (meta.config.t_in, meta.n_beams, meta.set_b.count());
    let (gr, gc) = meta.grid;
    let head = |inputs: usize| {
        vec![
            LayerSpec::Dense { inputs, outputs: n },
            LayerSpec::Activation {
                function: ActKind::Sigmoid,
            },
        ]
    };
    Ok(match kind {
        PredictorKind::LstmDownsampled => {
            let mut s = arch.lstm_stack(m, arch.lstm_layers);
            s.extend(head(arch.lstm_hidden));
            s
        }
        PredictorKind::CnnFcDownsampled => {
            let (mut s, (c, h, w)) = arch.conv_stack(t, gr, gc, 2);
            s.push(LayerSpec::Flatten { keep_leading: false });
            s.push(LayerSpec::Dense {
                inputs: c * h * w,
                outputs: arch.dense_hidden,
            });
            s.push(LayerSpec::Activation {
                function: ActKind::Relu,
            });
            s.extend(head(arch.dense_hidden));
            s
        }
        PredictorKind::ConvlstmDownsampled | PredictorKind::Csai => {
            let (mut s, (c, h, w)) = arch.conv_stack(1, gr, gc, 2);
            s.push(LayerSpec::Flatten { keep_leading: true });
            s.extend(arch.lstm_stack(c * h * w, 1));
            s.extend(head(arch.lstm_hidden));
            if kind == PredictorKind::Csai {
                s.insert(
                    0,
                    LayerSpec::LinearCompression {
                        rows: m,
                        cols: n,
                        positions: meta.set_b.indices().expect("subset"),
                        grid: meta.grid,
                        tx_power_dbm: meta.tx_power_dbm,
                        floor_dbm: meta.floor_dbm,
                        norm_lo: meta.input_norm.lo,
                        norm_hi: meta.input_norm.hi,
                        learnable: true,
                    },
                );
            }
            s
        }
        k => return Err(Error::Config(format!("{k} has no beam-level network"))),
    })
}

/// How the CSAI compression matrix starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionInit {
    Random,
    Selection,
}

/// Fresh, untrained model for `spec` on this dataset.
pub fn init_beam_model(spec: &PredictorSpec, meta: &BeamMeta, init: CompressionInit, seed: u64) -> Result<Model> {
    let specs = beam_model_specs(spec.kind, &spec.arch, meta)?;
    let mut model = Model::from_specs(&specs, seed);
    if let Some(Layer::LinearCompression(c)) = model.layers_mut().first_mut() {
        let mat = match init {
            CompressionInit::Selection => CompressionMatrix::selection(&c.positions, c.cols())?,
            CompressionInit::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0_3B_2E55);
                CompressionMatrix::random(c.rows(), c.cols(), &mut rng)
            }
        };
        c.re.data = mat.re;
        c.im.data = mat.im;
    }
    Ok(model)
}

/// A trained beam predictor with the normalisation it was trained under.
#[derive(Debug, Clone)]
pub struct TrainedBeamPredictor {
    pub spec: PredictorSpec,
    pub model: Model,
    pub meta: BeamMeta,
    pub history: History,
}

impl TrainedBeamPredictor {
    pub fn train(spec: &PredictorSpec, ds: &BeamDataset, init: CompressionInit, cfg: &TrainConfig) -> Result<Self> {
        let model = init_beam_model(spec, &ds.meta, init, cfg.seed)?;
        let (tx, tt) = ds.tensors(spec.kind, SplitKind::Train)?;
        let (vx, vt) = ds.tensors(spec.kind, SplitKind::Val)?;
        let (model, history) = train_model(model, Split::new(&tx, &tt)?, Split::new(&vx, &vt)?, cfg)?;
        Ok(TrainedBeamPredictor {
            spec: spec.clone(),
            model,
            meta: ds.meta.clone(),
            history,
        })
    }

    /// Predicted best beam for every sample of a split.
    pub fn predict_best(&self, ds: &BeamDataset, split: SplitKind) -> Result<Vec<usize>> {
        ds.range(split)
            .into_par_iter()
            .map(|i| Ok(predict_beam_rsrp(&self.model, &ds.input(self.spec.kind, i)?)?.argmax()))
            .collect()
    }
}

/// Normalised per-beam RSRP at the target slot; argmax is the predicted beam.
pub fn predict_beam_rsrp(model: &Model, input: &Tensor) -> Result<Tensor> {
    model.predict(input)
}

/// Top-1 accuracy of the non-AI baseline on a split.
pub fn nonai_accuracy(ds: &BeamDataset, split: SplitKind) -> Result<f64> {
    let t = ds.meta.config.t_in;
    let m = ds.m();
    let r = ds.range(split);
    let preds = r
        .clone()
        .map(|i| predict_nonai(&ds.measured_dbm(i)[(t - 1) * m..], &ds.meta.set_b))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<Vec<f64>> = r.map(|i| ds.target_dbm(i).to_vec()).collect();
    top1_accuracy(&preds, &truth)
}

/// Top-1 accuracy of a trained predictor on a split.
pub fn model_accuracy(p: &TrainedBeamPredictor, ds: &BeamDataset, split: SplitKind) -> Result<f64> {
    let preds = p.predict_best(ds, split)?;
    let truth: Vec<Vec<f64>> = ds.range(split).map(|i| ds.target_dbm(i).to_vec()).collect();
    top1_accuracy(&preds, &truth)
}

/// CSAI network whose compression layer is the frozen selection matrix of
/// Set B and whose remaining layers are copied from a `convlstm_downsampled`
/// model. Its outputs equal that model's on the same windows.
pub fn csai_from_downsampled(downsampled: &Model, meta: &BeamMeta) -> Result<Model> {
    let positions = meta.set_b.indices().expect("subset");
    let mat = CompressionMatrix::selection(&positions, meta.n_beams)?;
    let mut front = LinearCompression::from_matrix(
        &mat,
        positions,
        meta.grid,
        meta.tx_power_dbm,
        meta.floor_dbm,
        (meta.input_norm.lo, meta.input_norm.hi),
    );
    front.learnable = false;
    let mut layers = vec![Layer::LinearCompression(front)];
    layers.extend(downsampled.layers.iter().cloned());
    Ok(Model::new(layers))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeReport {
    pub samples: usize,
    /// Compression-layer output equals the down-sampled input image bit for bit.
    pub measurements_bitwise: bool,
    pub max_forward_diff: f64,
}

/// Compares a `convlstm_downsampled` model with its selection-initialised
/// CSAI counterpart on every window of `ds`.
pub fn bridge_check(ds: &BeamDataset, downsampled: &Model) -> Result<BridgeReport> {
    let csai = csai_from_downsampled(downsampled, &ds.meta)?;
    let front = Model::new(vec![csai.layers[0].clone()]);
    let mut r = BridgeReport {
        samples: ds.len(),
        measurements_bitwise: true,
        max_forward_diff: 0.0,
    };
    for i in 0..ds.len() {
        let raw = ds.input(PredictorKind::Csai, i)?;
        let image = ds.input(PredictorKind::ConvlstmDownsampled, i)?;
        let measured = front.predict(&raw)?;
        r.measurements_bitwise &= measured.data.len() == image.data.len()
            && measured
                .data
                .iter()
                .zip(&image.data)
                .all(|(a, b)| a.to_bits() == b.to_bits());
        let a = downsampled.predict(&image)?;
        let b = csai.predict(&raw)?;
        for (x, y) in a.data.iter().zip(&b.data) {
            r.max_forward_diff = r.max_forward_diff.max((x - y).abs());
        }
    }
    Ok(r)
}
