//! Beam- and cell-level predictors: datasets, architectures, training and
//! accuracy metrics.

pub mod beam;
pub mod cell;
pub mod container;
pub mod train;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{checkpoint, min_max, ActKind, LayerSpec, Padding};

pub use beam::{
    generate_beam_dataset, predict_beam_rsrp, predict_nonai, top1_accuracy, BeamDataset, BeamDatasetConfig,
    TrainedBeamPredictor,
};
pub use cell::{
    generate_cell_dataset, nmse, predict_cell_l3, rsrp_difference, CellDataset, CellDatasetConfig, CellVariant,
    TrainedCellPredictor,
};
pub use train::{train_model, EpochRecord, History, Split, TrainConfig};

/// Min-max scaling to `[0, 1]`, fitted on a training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub lo: f64,
    pub hi: f64,
}

impl Normalizer {
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a f64>) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Empty("normalisation data"));
        }
        if hi <= lo {
            hi = lo + 1.0;
        }
        Ok(Normalizer { lo, hi })
    }

    #[inline]
    pub fn normalize(&self, v: f64) -> f64 {
        min_max(v, self.lo, self.hi)
    }

    #[inline]
    pub fn denormalize(&self, y: f64) -> f64 {
        self.lo + y * (self.hi - self.lo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    NonaiBestMeasured,
    LstmDownsampled,
    CnnFcDownsampled,
    ConvlstmDownsampled,
    Csai,
    CellLstm,
    CellCnn,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 7] = [
        PredictorKind::NonaiBestMeasured,
        PredictorKind::LstmDownsampled,
        PredictorKind::CnnFcDownsampled,
        PredictorKind::ConvlstmDownsampled,
        PredictorKind::Csai,
        PredictorKind::CellLstm,
        PredictorKind::CellCnn,
    ];

    pub const BEAM_AI: [PredictorKind; 4] = [
        PredictorKind::LstmDownsampled,
        PredictorKind::CnnFcDownsampled,
        PredictorKind::ConvlstmDownsampled,
        PredictorKind::Csai,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            PredictorKind::NonaiBestMeasured => "nonai_best_measured",
            PredictorKind::LstmDownsampled => "lstm_downsampled",
            PredictorKind::CnnFcDownsampled => "cnn_fc_downsampled",
            PredictorKind::ConvlstmDownsampled => "convlstm_downsampled",
            PredictorKind::Csai => "csai",
            PredictorKind::CellLstm => "cell_lstm",
            PredictorKind::CellCnn => "cell_cnn",
        }
    }

    pub fn is_cell_level(&self) -> bool {
        matches!(self, PredictorKind::CellLstm | PredictorKind::CellCnn)
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for PredictorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PredictorKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown predictor '{s}'")))
    }
}

/// Architecture sizes shared by all predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub lstm_hidden: usize,
    /// Stacked LSTM layers in the beam LSTM and in each cell-LSTM network.
    pub lstm_layers: usize,
    pub conv_channels: Vec<usize>,
    pub dense_hidden: usize,
    pub kernel: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            lstm_hidden: 64,
            lstm_layers: 2,
            conv_channels: vec![8, 16, 16],
            dense_hidden: 64,
            kernel: 3,
        }
    }
}

impl ArchConfig {
    /// Sizes quoted for the full-scale models.
    pub fn paper_scale() -> Self {
        ArchConfig {
            lstm_hidden: 168,
            lstm_layers: 4,
            conv_channels: vec![12, 24, 32],
            dense_hidden: 256,
            kernel: 3,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lstm_hidden == 0 || self.lstm_layers == 0 || self.dense_hidden == 0 {
            return Err(Error::Config("architecture sizes must be positive".into()));
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::Config("conv_channels must be non-empty and positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config("kernel size must be odd".into()));
        }
        Ok(())
    }

    /// Conv → ReLU → max-pool blocks (pool skipped once a side reaches 1).
    /// Returns the specs and the output `(channels, h, w)`.
    pub(crate) fn conv_stack(
        &self,
        in_c: usize,
        h: usize,
        w: usize,
        blocks: usize,
    ) -> (Vec<LayerSpec>, (usize, usize, usize)) {
        let mut specs = Vec::new();
        let (mut c, mut h, mut w) = (in_c, h, w);
        for &out in self.conv_channels.iter().take(blocks) {
            specs.push(LayerSpec::Conv2d {
                in_channels: c,
                out_channels: out,
                kernel: self.kernel,
                padding: Padding::Same,
            });
            specs.push(LayerSpec::Activation {
                function: ActKind::Relu,
            });
            if h >= 2 && w >= 2 {
                specs.push(LayerSpec::Maxpool);
                h /= 2;
                w /= 2;
            }
            c = out;
        }
        (specs, (c, h, w))
    }

    pub(crate) fn lstm_stack(&self, inputs: usize, layers: usize) -> Vec<LayerSpec> {
        (0..layers)
            .map(|i| LayerSpec::Lstm {
                inputs: if i == 0 { inputs } else { self.lstm_hidden },
                hidden: self.lstm_hidden,
                return_sequences: i + 1 < layers,
            })
            .collect()
    }
}

/// Registry entry: which predictor and its architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub kind: PredictorKind,
    #[serde(default)]
    pub arch: ArchConfig,
}

impl PredictorSpec {
    pub fn new(kind: PredictorKind) -> Self {
        PredictorSpec {
            kind,
            arch: ArchConfig::default(),
        }
    }

    /// Human-readable note on how the architecture departs from the figure it
    /// reproduces.
    pub fn notes(&self) -> &'static str {
        match self.kind {
            PredictorKind::NonaiBestMeasured => "best measured Set-B beam; no model",
            PredictorKind::LstmDownsampled => "stacked LSTM over measured RSRP, dense + sigmoid head",
            PredictorKind::CnnFcDownsampled => "time-as-channels CNN on the sparse beam grid, two FC layers",
            PredictorKind::ConvlstmDownsampled => {
                "per-frame conv feature extractor then LSTM (not a true conv-LSTM cell); sub-pixel upsampling replaced by a dense projection"
            }
            PredictorKind::Csai => "learnable complex compression layer in front of the convlstm_downsampled network",
            PredictorKind::CellLstm => "four per-horizon stacked-LSTM networks with dense + sigmoid heads",
            PredictorKind::CellCnn => "time-as-channels CNN over the cell x beam image, two FC layers, joint 4-horizon output",
        }
    }
}

/// A trained predictor of either level, as stored on disk: a directory with
/// `predictor.json` plus one checkpoint per network (`model_<k>.ckpt`).
#[derive(Debug, Clone)]
pub enum TrainedPredictor {
    Beam(TrainedBeamPredictor),
    Cell(TrainedCellPredictor),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "level", rename_all = "snake_case")]
enum LevelMeta {
    Beam { meta: beam::BeamMeta },
    Cell { meta: cell::CellMeta },
}

#[derive(Serialize, Deserialize)]
struct Bundle {
    spec: PredictorSpec,
    histories: Vec<History>,
    n_models: usize,
    #[serde(flatten)]
    level: LevelMeta,
}

impl TrainedPredictor {
    pub fn spec(&self) -> &PredictorSpec {
        match self {
            TrainedPredictor::Beam(p) => &p.spec,
            TrainedPredictor::Cell(p) => &p.spec,
        }
    }

    pub fn save(&self, dir: &Path, train: &TrainConfig) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (models, bundle) = match self {
            TrainedPredictor::Beam(p) => (
                std::slice::from_ref(&p.model),
                Bundle {
                    spec: p.spec.clone(),
                    histories: vec![p.history.clone()],
                    n_models: 1,
                    level: LevelMeta::Beam { meta: p.meta.clone() },
                },
            ),
            TrainedPredictor::Cell(p) => (
                &p.models[..],
                Bundle {
                    spec: p.spec.clone(),
                    histories: p.histories.clone(),
                    n_models: p.models.len(),
                    level: LevelMeta::Cell { meta: p.meta.clone() },
                },
            ),
        };
        let hyper = serde_json::json!({ "predictor": bundle.spec, "train": train });
        for (k, m) in models.iter().enumerate() {
            checkpoint::save(m, &dir.join(format!("model_{k}.ckpt")), hyper.clone())?;
        }
        let path = dir.join("predictor.json");
        fs::write(&path, serde_json::to_vec_pretty(&bundle)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("predictor.json");
        let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let b: Bundle = serde_json::from_slice(&raw)?;
        let mut models = (0..b.n_models)
            .map(|k| Ok(checkpoint::load(&dir.join(format!("model_{k}.ckpt")))?.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(match b.level {
            LevelMeta::Beam { meta } => TrainedPredictor::Beam(TrainedBeamPredictor {
                spec: b.spec,
                model: models.pop().ok_or(Error::Empty("predictor bundle"))?,
                meta,
                history: b.histories.into_iter().next().unwrap_or_default(),
            }),
            LevelMeta::Cell { meta } => TrainedPredictor::Cell(TrainedCellPredictor {
                spec: b.spec,
                models,
                meta,
                histories: b.histories,
            }),
        })
    }
}
