//! Cell-level L3-RSRP forecasting from partial L1 measurements.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::beam::split_sizes;
use super::container;
use super::train::{train_model, History, Split, TrainConfig};
use super::{ArchConfig, Normalizer, PredictorKind, PredictorSpec};
use crate::codebook::{select_set_b, Ratio, SelectionPattern};
use crate::error::{Error, Result};
use crate::handover::L3Forecaster;
use crate::nn::{ActKind, LayerSpec, Model, Tensor};
use crate::scenario::Scenario;
use crate::trace::{generate_trace, pass_seed, Trace, TraceConfig};

/// Which L1 measurements feed the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellVariant {
    AllBeamCell,
    /// Every beam of half of the cells.
    PartCell,
    /// Half of the beams of every cell.
    PartBeam,
}

impl CellVariant {
    pub const ALL: [CellVariant; 3] = [CellVariant::AllBeamCell, CellVariant::PartCell, CellVariant::PartBeam];

    pub fn id(&self) -> &'static str {
        match self {
            CellVariant::AllBeamCell => "all_beam_cell",
            CellVariant::PartCell => "part_cell",
            CellVariant::PartBeam => "part_beam",
        }
    }
}

impl fmt::Display for CellVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for CellVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CellVariant::ALL
            .into_iter()
            .find(|v| v.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown cell variant '{s}'")))
    }
}

/// The measured (cell, beam) pairs for a variant; equidistant selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSelection {
    pub variant: CellVariant,
    pub n_cells: usize,
    pub n_beams: usize,
    pub cells: Vec<usize>,
    pub beams: Vec<usize>,
}

impl CellSelection {
    pub fn new(variant: CellVariant, n_cells: usize, n_beams: usize) -> Result<Self> {
        let half = Ratio { num: 1, den: 2 };
        let pick = |size: usize| -> Result<Vec<usize>> {
            Ok(select_set_b(size, SelectionPattern::Equidistant, half, 0)?
                .indices()
                .expect("subset"))
        };
        let (cells, beams) = match variant {
            CellVariant::AllBeamCell => ((0..n_cells).collect(), (0..n_beams).collect()),
            CellVariant::PartCell => (pick(n_cells)?, (0..n_beams).collect()),
            CellVariant::PartBeam => ((0..n_cells).collect(), pick(n_beams)?),
        };
        let sel = CellSelection {
            variant,
            n_cells,
            n_beams,
            cells,
            beams,
        };
        let full = n_cells * n_beams;
        if variant != CellVariant::AllBeamCell {
            assert_eq!(
                2 * sel.count(),
                full,
                "{variant} must measure exactly half of {full} beams"
            );
        }
        Ok(sel)
    }

    /// Measurements per slot.
    pub fn count(&self) -> usize {
        self.cells.len() * self.beams.len()
    }

    /// `(rows, cols)` of the per-slot input image.
    pub fn image(&self) -> (usize, usize) {
        (self.cells.len(), self.beams.len())
    }

    /// Selected L1 values of one slot, cell-major.
    pub fn extract(&self, trace: &Trace, slot: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count());
        for &c in &self.cells {
            let row = trace.measured_at(slot, c);
            out.extend(self.beams.iter().map(|&b| row[b]));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellDatasetConfig {
    pub t_in: usize,
    pub horizon: usize,
    pub n_samples: usize,
    pub n_passes: usize,
    /// Train:val:test parts.
    pub split: (usize, usize, usize),
    pub trace: TraceConfig,
    pub seed: u64,
}

impl Default for CellDatasetConfig {
    fn default() -> Self {
        CellDatasetConfig {
            t_in: 6,
            horizon: 4,
            n_samples: 5000,
            n_passes: 5,
            split: (3, 1, 1),
            trace: TraceConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMeta {
    pub config: CellDatasetConfig,
    pub selection: CellSelection,
    pub speed_kmh: f64,
    pub scenario_hash: String,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub input_norm: Normalizer,
    pub target_norm: Normalizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellDataset {
    pub meta: CellMeta,
    /// `[N, t_in, count]` measured L1-RSRP, dBm.
    pub inputs: Vec<f64>,
    /// `[N, horizon, n_cells]` L3-RSRP, dBm.
    pub targets: Vec<f64>,
}

impl CellDataset {
    pub fn len(&self) -> usize {
        self.targets.len() / (self.meta.config.horizon * self.meta.selection.n_cells)
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn in_len(&self) -> usize {
        self.meta.config.t_in * self.meta.selection.count()
    }

    fn out_len(&self) -> usize {
        self.meta.config.horizon * self.meta.selection.n_cells
    }

    pub fn input_dbm(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.in_len()..(i + 1) * self.in_len()]
    }

    pub fn target_dbm(&self, i: usize) -> &[f64] {
        &self.targets[i * self.out_len()..(i + 1) * self.out_len()]
    }

    pub fn range(&self, split: super::beam::SplitKind) -> std::ops::Range<usize> {
        use super::beam::SplitKind;
        let (a, b) = (self.meta.n_train, self.meta.n_train + self.meta.n_val);
        match split {
            SplitKind::Train => 0..a,
            SplitKind::Val => a..b,
            SplitKind::Test => b..self.len(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let c = &self.meta.config;
        container::write(
            dir,
            &self.meta,
            &[
                (
                    "inputs",
                    vec![self.len(), c.t_in, self.meta.selection.count()],
                    &self.inputs,
                ),
                (
                    "targets",
                    vec![self.len(), c.horizon, self.meta.selection.n_cells],
                    &self.targets,
                ),
            ],
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (meta, mut arrays): (CellMeta, _) = container::read(dir)?;
        let (_, inputs) = container::take(&mut arrays, "inputs", dir)?;
        let (_, targets) = container::take(&mut arrays, "targets", dir)?;
        Ok(CellDataset { meta, inputs, targets })
    }
}

/// Window `[start, start + t_in)` of selected L1 values from a trace.
pub fn window_from_trace(trace: &Trace, sel: &CellSelection, start: usize, t_in: usize) -> Vec<f64> {
    (start..start + t_in).flat_map(|s| sel.extract(trace, s)).collect()
}

pub fn generate_cell_dataset(s: &Scenario, cfg: &CellDatasetConfig, variant: CellVariant) -> Result<CellDataset> {
    if cfg.t_in == 0 || cfg.horizon == 0 || cfg.n_samples == 0 || cfg.n_passes == 0 {
        return Err(Error::Config(
            "t_in, horizon, n_samples and n_passes must be >= 1".into(),
        ));
    }
    let span = cfg.t_in + cfg.horizon;
    if s.n_slots < span {
        return Err(Error::InsufficientSlots {
            needed: span,
            available: s.n_slots,
        });
    }
    let starts = s.n_slots - span + 1;
    let passes = cfg.n_passes.min(cfg.n_samples);
    let traces: Vec<Trace> = (0..passes)
        .into_par_iter()
        .map(|p| generate_trace(s, &cfg.trace, pass_seed(cfg.seed, p as u64)))
        .collect::<Result<_>>()?;
    let sel = CellSelection::new(variant, traces[0].n_cells, traces[0].n_beams)?;

    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for (p, tr) in traces.iter().enumerate() {
        let k = cfg.n_samples / passes + usize::from(p < cfg.n_samples % passes);
        if k > starts {
            return Err(Error::InsufficientSlots {
                needed: k + span - 1,
                available: s.n_slots,
            });
        }
        for i in 0..k {
            let start = i * starts / k;
            inputs.extend(window_from_trace(tr, &sel, start, cfg.t_in));
            for h in 0..cfg.horizon {
                targets.extend_from_slice(tr.l3_at(start + cfg.t_in + h));
            }
        }
    }
    let n = cfg.n_samples;
    let (tr, va, te) = split_sizes(n, cfg.split);
    let fit_n = if tr > 0 { tr } else { n };
    let per_in = cfg.t_in * sel.count();
    let per_out = cfg.horizon * sel.n_cells;
    let floor = s.config.channel.rsrp_floor_dbm;
    // Floor-filled entries (cells out of range) would stretch the scale.
    let input_norm = Normalizer::fit(inputs[..fit_n * per_in].iter().filter(|&&v| v > floor))
        .or_else(|_| Normalizer::fit(&inputs[..fit_n * per_in]))?;
    let target_norm = Normalizer::fit(&targets[..fit_n * per_out])?;
    Ok(CellDataset {
        meta: CellMeta {
            config: cfg.clone(),
            selection: sel,
            speed_kmh: s.ue_speed_kmh,
            scenario_hash: s.hash(),
            n_train: tr,
            n_val: va,
            n_test: te,
            input_norm,
            target_norm,
        },
        inputs,
        targets,
    })
}

/// Network specs; `cell_lstm` returns one spec list per horizon.
pub fn cell_model_specs(kind: PredictorKind, arch: &ArchConfig, meta: &CellMeta) -> Result<Vec<Vec<LayerSpec>>> {
    arch.validate()?;
    let (t, h, nc) = (meta.config.t_in, meta.config.horizon, meta.selection.n_cells);
    let sigmoid = LayerSpec::Activation {
        function: ActKind::Sigmoid,
    };
    match kind {
        PredictorKind::CellLstm => {
            let mut s = arch.lstm_stack(meta.selection.count(), arch.lstm_layers);
            s.push(LayerSpec::Dense {
                inputs: arch.lstm_hidden,
                outputs: nc,
            });
            s.push(sigmoid);
            Ok(vec![s; h])
        }
        PredictorKind::CellCnn => {
            let (r, c) = meta.selection.image();
            let (mut s, (ch, oh, ow)) = arch.conv_stack(t, r, c, arch.conv_channels.len());
            s.push(LayerSpec::Flatten { keep_leading: false });
            s.push(LayerSpec::Dense {
                inputs: ch * oh * ow,
                outputs: arch.dense_hidden,
            });
            s.push(LayerSpec::Activation {
                function: ActKind::Relu,
            });
            s.push(LayerSpec::Dense {
                inputs: arch.dense_hidden,
                outputs: h * nc,
            });
            s.push(sigmoid);
            Ok(vec![s])
        }
        k => Err(Error::Config(format!("{k} is not a cell-level predictor"))),
    }
}

/// Normalised model input for a window of selected L1 values (dBm).
pub(crate) fn model_input(kind: PredictorKind, meta: &CellMeta, window_dbm: &[f64]) -> Result<Tensor> {
    let t = meta.config.t_in;
    let (r, c) = meta.selection.image();
    if window_dbm.len() != t * r * c {
        return Err(Error::DimensionMismatch {
            expected: t * r * c,
            got: window_dbm.len(),
        });
    }
    let data = window_dbm.iter().map(|&v| meta.input_norm.normalize(v)).collect();
    let shape = match kind {
        PredictorKind::CellCnn => vec![t, r, c],
        _ => vec![t, r * c],
    };
    Ok(Tensor { shape, data })
}

#[derive(Debug, Clone)]
pub struct TrainedCellPredictor {
    pub spec: PredictorSpec,
    /// Four per-horizon networks for `cell_lstm`, one joint network for `cell_cnn`.
    pub models: Vec<Model>,
    pub meta: CellMeta,
    pub histories: Vec<History>,
}

impl TrainedCellPredictor {
    pub fn train(spec: &PredictorSpec, ds: &CellDataset, cfg: &TrainConfig) -> Result<Self> {
        use super::beam::SplitKind;
        let specs = cell_model_specs(spec.kind, &spec.arch, &ds.meta)?;
        let nc = ds.meta.selection.n_cells;
        let tensors = |split: SplitKind| -> Result<(Vec<Tensor>, Vec<Vec<f64>>)> {
            let r = ds.range(split);
            let xs = r
                .clone()
                .map(|i| model_input(spec.kind, &ds.meta, ds.input_dbm(i)))
                .collect::<Result<Vec<_>>>()?;
            let ys = r
                .map(|i| {
                    ds.target_dbm(i)
                        .iter()
                        .map(|&v| ds.meta.target_norm.normalize(v))
                        .collect()
                })
                .collect();
            Ok((xs, ys))
        };
        let (tx, ty) = tensors(SplitKind::Train)?;
        let (vx, vy) = tensors(SplitKind::Val)?;
        let pick = |ys: &[Vec<f64>], h: Option<usize>| -> Vec<Tensor> {
            ys.iter()
                .map(|y| match h {
                    Some(h) => Tensor::vector(y[h * nc..(h + 1) * nc].to_vec()),
                    None => Tensor::vector(y.clone()),
                })
                .collect()
        };
        let joint = specs.len() == 1;
        let mut models = Vec::with_capacity(specs.len());
        let mut histories = Vec::with_capacity(specs.len());
        for (h, s) in specs.iter().enumerate() {
            let horizon = (!joint).then_some(h);
            let (tt, vt) = (pick(&ty, horizon), pick(&vy, horizon));
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(h as u64);
            let model = Model::from_specs(s, c.seed);
            let (m, hist) = train_model(model, Split::new(&tx, &tt)?, Split::new(&vx, &vt)?, &c)?;
            models.push(m);
            histories.push(hist);
        }
        Ok(TrainedCellPredictor {
            spec: spec.clone(),
            models,
            meta: ds.meta.clone(),
            histories,
        })
    }
}

impl L3Forecaster for TrainedCellPredictor {
    fn history(&self) -> usize {
        self.meta.config.t_in
    }

    fn forecast(&self, trace: &Trace, t: usize) -> Result<Vec<Vec<f64>>> {
        let t_in = self.meta.config.t_in;
        if t < t_in {
            return Err(Error::InsufficientSlots {
                needed: t_in,
                available: t,
            });
        }
        let w = window_from_trace(trace, &self.meta.selection, t - t_in, t_in);
        predict_cell_l3(self, self.meta.selection.variant, &w)
    }
}

/// Forecast `[horizon][n_cells]` L3-RSRP in dBm from a window of selected
/// L1 measurements taken under `variant`.
pub fn predict_cell_l3(p: &TrainedCellPredictor, variant: CellVariant, window_dbm: &[f64]) -> Result<Vec<Vec<f64>>> {
    if variant != p.meta.selection.variant {
        return Err(Error::VariantMismatch {
            model: p.meta.selection.variant.to_string(),
            input: variant.to_string(),
        });
    }
    let x = model_input(p.spec.kind, &p.meta, window_dbm)?;
    let nc = p.meta.selection.n_cells;
    let h = p.meta.config.horizon;
    let norm = p.meta.target_norm;
    let mut out = Vec::with_capacity(h);
    if p.models.len() == 1 {
        let y = p.models[0].predict(&x)?;
        for k in 0..h {
            out.push(
                y.data[k * nc..(k + 1) * nc]
                    .iter()
                    .map(|&v| norm.denormalize(v))
                    .collect(),
            );
        }
    } else {
        for m in &p.models {
            out.push(m.predict(&x)?.data.iter().map(|&v| norm.denormalize(v)).collect());
        }
    }
    Ok(out)
}

/// `Σ(pred − true)² / Σ(true − mean(true))²`.
pub fn nmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("nmse inputs"));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    let den: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    Ok(if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    })
}

/// Absolute L3 prediction error per entry, dB.
pub fn rsrp_difference(pred: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).collect())
}

/// Test-split NMSE and mean absolute error (dB) of a trained predictor.
pub fn evaluate_cell(p: &TrainedCellPredictor, ds: &CellDataset) -> Result<(f64, f64)> {
    let r = ds.range(super::beam::SplitKind::Test);
    let preds: Vec<Vec<f64>> = r
        .clone()
        .into_par_iter()
        .map(|i| Ok(predict_cell_l3(p, ds.meta.selection.variant, ds.input_dbm(i))?.concat()))
        .collect::<Result<_>>()?;
    let pred: Vec<f64> = preds.concat();
    let truth: Vec<f64> = r.flat_map(|i| ds.target_dbm(i).to_vec()).collect();
    let diff = rsrp_difference(&pred, &truth)?;
    Ok((nmse(&pred, &truth)?, diff.iter().sum::<f64>() / diff.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::beam::SplitKind;
    use crate::scenario::{build_scenario, ScenarioConfig};

    fn scenario() -> Scenario {
        let mut c = ScenarioConfig::default();
        c.layout.n_bs = 2;
        c.layout.array_rows = 2;
        c.layout.array_cols = 2;
        c.n_slots = Some(80);
        c.ue_speed_kmh = 500.0;
        build_scenario(&c).unwrap()
    }

    fn cfg() -> CellDatasetConfig {
        CellDatasetConfig {
            n_samples: 40,
            n_passes: 2,
            seed: 3,
            ..CellDatasetConfig::default()
        }
    }

    fn tiny() -> ArchConfig {
        ArchConfig {
            lstm_hidden: 4,
            lstm_layers: 1,
            conv_channels: vec![2],
            dense_hidden: 4,
            kernel: 3,
        }
    }

    #[test]
    fn selections_measure_half() {
        let all = CellSelection::new(CellVariant::AllBeamCell, 24, 16).unwrap();
        let pc = CellSelection::new(CellVariant::PartCell, 24, 16).unwrap();
        let pb = CellSelection::new(CellVariant::PartBeam, 24, 16).unwrap();
        assert_eq!(all.image(), (24, 16));
        assert_eq!(pc.image(), (12, 16));
        assert_eq!(pb.image(), (24, 8));
        assert_eq!(pc.cells, (0..24).step_by(2).collect::<Vec<_>>());
        assert!(matches!(
            CellSelection::new(CellVariant::PartCell, 21, 16),
            Err(Error::NonIntegralCount { .. })
        ));
        for v in CellVariant::ALL {
            assert_eq!(v.id().parse::<CellVariant>().unwrap(), v);
        }
    }

    #[test]
    fn dataset_windows_follow_the_trace() {
        let s = scenario();
        let ds = generate_cell_dataset(&s, &cfg(), CellVariant::PartBeam).unwrap();
        assert_eq!(ds.len(), 40);
        assert_eq!((ds.meta.n_train, ds.meta.n_val, ds.meta.n_test), (24, 8, 8));
        let sel = &ds.meta.selection;
        assert_eq!(sel.count(), 6 * 2);
        let tr = generate_trace(&s, &cfg().trace, pass_seed(3, 1)).unwrap();
        // Sample 20 is the first window of the second pass (start slot 0).
        let i = 20;
        for t in 0..6 {
            for (k, &c) in sel.cells.iter().enumerate() {
                for (j, &b) in sel.beams.iter().enumerate() {
                    assert_eq!(ds.input_dbm(i)[t * 12 + k * 2 + j], tr.measured_at(t, c)[b]);
                }
            }
        }
        for h in 0..4 {
            assert_eq!(&ds.target_dbm(i)[h * 6..(h + 1) * 6], tr.l3_at(6 + h));
        }
    }

    #[test]
    fn dataset_round_trip() {
        let ds = generate_cell_dataset(&scenario(), &cfg(), CellVariant::PartCell).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(CellDataset::load(dir.path()).unwrap(), ds);
    }

    #[test]
    fn prediction_shape_and_variant_check() {
        let ds = generate_cell_dataset(&scenario(), &cfg(), CellVariant::AllBeamCell).unwrap();
        let tc = TrainConfig {
            max_epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        for kind in [PredictorKind::CellLstm, PredictorKind::CellCnn] {
            let p = TrainedCellPredictor::train(&PredictorSpec { kind, arch: tiny() }, &ds, &tc).unwrap();
            assert_eq!(p.models.len(), if kind == PredictorKind::CellLstm { 4 } else { 1 });
            let y = predict_cell_l3(&p, CellVariant::AllBeamCell, ds.input_dbm(0)).unwrap();
            assert_eq!(y.len(), 4);
            assert!(y.iter().all(|r| r.len() == 6 && r.iter().all(|v| v.is_finite())));
            let err = predict_cell_l3(&p, CellVariant::PartBeam, ds.input_dbm(0)).unwrap_err();
            assert!(matches!(err, Error::VariantMismatch { .. }));
            let (n, mae) = evaluate_cell(&p, &ds).unwrap();
            assert!(n.is_finite() && mae.is_finite());
        }
        assert_eq!(ds.range(SplitKind::Test), 32..40);
    }

    #[test]
    fn nmse_formula() {
        let truth = [1.0, 2.0, 3.0, 6.0];
        assert_eq!(nmse(&truth, &truth).unwrap(), 0.0);
        assert_eq!(nmse(&[3.0; 4], &truth).unwrap(), 1.0);
        // Σ(p−t)² = 1 + 0 + 4 + 1 = 6; Σ(t−3)² = 4 + 1 + 0 + 9 = 14.
        let v = nmse(&[2.0, 2.0, 1.0, 5.0], &truth).unwrap();
        assert!((v - 6.0 / 14.0).abs() < 1e-15);
        assert!(nmse(&[1.0], &truth).is_err());
        assert_eq!(
            rsrp_difference(&[-80.0, -70.0], &[-78.5, -75.0]).unwrap(),
            vec![1.5, 5.0]
        );
    }
}
