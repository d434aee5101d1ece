//! Experiment pipeline: sweep configuration, stage execution with completion
//! markers, and the accuracy-vs-speed and RLF tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codebook::Ratio;
use crate::error::{Error, Result};
use crate::handover::{kpis, simulate, HandoverConfig, HoMode, KpiReport, L3Forecaster};
use crate::predictors::beam::{model_accuracy, nonai_accuracy, CompressionInit, SplitKind};
use crate::predictors::{
    generate_beam_dataset, generate_cell_dataset, ArchConfig, BeamDatasetConfig, CellDatasetConfig, CellVariant,
    PredictorKind, PredictorSpec, TrainConfig, TrainedBeamPredictor, TrainedCellPredictor, TrainedPredictor,
};
use crate::scenario::{build_scenario, Scenario, ScenarioConfig, DEFAULT_SPEEDS_KMH};
use crate::trace::{generate_trace, pass_seed, Trace};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Salt separating evaluation passes from the passes datasets are built on.
const EVAL_SALT: u64 = 0xE7A1_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweep {
    pub speeds: Vec<f64>,
    pub ratios: Vec<Ratio>,
    pub variants: Vec<CellVariant>,
    pub seeds: Vec<u64>,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            speeds: DEFAULT_SPEEDS_KMH.to_vec(),
            ratios: vec![Ratio { num: 1, den: 16 }],
            variants: CellVariant::ALL.to_vec(),
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamStage {
    pub predictors: Vec<PredictorKind>,
    pub compression_init: CompressionInit,
    pub dataset: BeamDatasetConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
}

impl Default for BeamStage {
    fn default() -> Self {
        let mut predictors = vec![PredictorKind::NonaiBestMeasured];
        predictors.extend(PredictorKind::BEAM_AI);
        BeamStage {
            predictors,
            compression_init: CompressionInit::Random,
            dataset: BeamDatasetConfig::default(),
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellStage {
    pub predictors: Vec<PredictorKind>,
    /// Held-out passes the handover simulation runs on, per speed and seed.
    pub eval_passes: usize,
    pub dataset: CellDatasetConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
}

impl Default for CellStage {
    fn default() -> Self {
        CellStage {
            predictors: vec![PredictorKind::CellCnn, PredictorKind::CellLstm],
            eval_passes: 10,
            dataset: CellDatasetConfig::default(),
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Layout used for cell-level work: 8 sites (24 cells, so half of the cells
/// is an integer) with 4x4 arrays.
pub fn default_cell_scenario() -> ScenarioConfig {
    let mut c = ScenarioConfig::default();
    c.layout.n_bs = 8;
    c.layout.array_rows = 4;
    c.layout.array_cols = 4;
    c
}

fn yes() -> bool {
    true
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Use the full-size architectures instead of the desk-scale ones.
    #[serde(default)]
    pub paper_scale: bool,
    /// Write every generated dataset under `datasets/` (checkpoints and
    /// reports are always written).
    #[serde(default = "yes")]
    pub save_datasets: bool,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default = "default_cell_scenario")]
    pub cell_scenario: ScenarioConfig,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub beam: BeamStage,
    #[serde(default)]
    pub cell: CellStage,
    #[serde(default)]
    pub handover: HandoverConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: default_output(),
            paper_scale: false,
            save_datasets: true,
            scenario: ScenarioConfig::default(),
            cell_scenario: default_cell_scenario(),
            sweep: Sweep::default(),
            beam: BeamStage::default(),
            cell: CellStage::default(),
            handover: HandoverConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Digest of everything that affects results (the output path does not).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serializes")))
    }

    pub fn beam_arch(&self) -> ArchConfig {
        if self.paper_scale {
            ArchConfig::paper_scale()
        } else {
            self.beam.arch.clone()
        }
    }

    pub fn cell_arch(&self) -> ArchConfig {
        if self.paper_scale {
            ArchConfig::paper_scale()
        } else {
            self.cell.arch.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sweep;
        if s.speeds.is_empty() || s.seeds.is_empty() {
            return Err(Error::Config("sweep.speeds and sweep.seeds must be non-empty".into()));
        }
        if s.speeds.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("sweep speeds must be positive".into()));
        }
        if !self.beam.predictors.is_empty() && s.ratios.is_empty() {
            return Err(Error::Config(
                "sweep.ratios must be non-empty when beam predictors are listed".into(),
            ));
        }
        if !self.cell.predictors.is_empty() && s.variants.is_empty() {
            return Err(Error::Config(
                "sweep.variants must be non-empty when cell predictors are listed".into(),
            ));
        }
        if self.beam.predictors.iter().any(|k| k.is_cell_level()) {
            return Err(Error::Config("beam.predictors lists a cell-level predictor".into()));
        }
        if self.cell.predictors.iter().any(|k| !k.is_cell_level()) {
            return Err(Error::Config("cell.predictors lists a beam-level predictor".into()));
        }
        if self.cell.eval_passes == 0 && !self.cell.predictors.is_empty() {
            return Err(Error::Config("cell.eval_passes must be positive".into()));
        }
        self.handover.validate()?;
        build_scenario(&self.scenario)?;
        build_scenario(&self.cell_scenario)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub speed_kmh: f64,
    pub ratio: Ratio,
    pub seed: u64,
    pub predictor: PredictorKind,
    pub top1_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlfRecord {
    pub speed_kmh: f64,
    pub seed: u64,
    /// Table row label, e.g. `Non-AI` or `CNN_Part_Cell`.
    pub row: String,
    pub kpis: KpiReport,
}

pub fn table2_label(kind: PredictorKind, variant: CellVariant) -> String {
    let k = match kind {
        PredictorKind::CellLstm => "LSTM",
        _ => "CNN",
    };
    let v = match variant {
        CellVariant::AllBeamCell => "All_Beam_Cell",
        CellVariant::PartCell => "Part_Cell",
        CellVariant::PartBeam => "Part_Beam",
    };
    format!("{k}_{v}")
}

pub const NON_AI_ROW: &str = "Non-AI";

fn speed_tag(v: f64) -> String {
    format!("{v}").replace('.', "p")
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(v)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_marker<T: DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    match fs::read(path) {
        Ok(b) => Ok(Some(serde_json::from_slice(&b)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// One beam-level run: dataset, training and test accuracy of every listed
/// predictor at one (speed, ratio, seed).
pub fn run_beam(cfg: &ExperimentConfig, speed: f64, ratio: Ratio, seed: u64) -> Result<Vec<AccuracyRecord>> {
    let tag = format!("{}kmh_{}_{}_s{seed}", speed_tag(speed), ratio.num, ratio.den);
    let marker = cfg.output_dir.join("stages/beam").join(format!("{tag}.json"));
    if let Some(done) = read_marker(&marker)? {
        return Ok(done);
    }
    let s = build_scenario(&cfg.scenario.with_speed(speed))?;
    let dcfg = BeamDatasetConfig {
        ratio,
        seed,
        ..cfg.beam.dataset.clone()
    };
    let ds = generate_beam_dataset(&s, &dcfg)?;
    if cfg.save_datasets {
        ds.save(&cfg.output_dir.join("datasets/beam").join(&tag))?;
    }
    let train = TrainConfig {
        seed,
        ..cfg.beam.train.clone()
    };
    let mut out = Vec::new();
    for &kind in &cfg.beam.predictors {
        let acc = if kind == PredictorKind::NonaiBestMeasured {
            nonai_accuracy(&ds, SplitKind::Test)?
        } else {
            let spec = PredictorSpec {
                kind,
                arch: cfg.beam_arch(),
            };
            let p = TrainedBeamPredictor::train(&spec, &ds, cfg.beam.compression_init, &train)?;
            let acc = model_accuracy(&p, &ds, SplitKind::Test)?;
            TrainedPredictor::Beam(p).save(
                &cfg.output_dir.join("checkpoints/beam").join(&tag).join(kind.id()),
                &train,
            )?;
            acc
        };
        out.push(AccuracyRecord {
            speed_kmh: speed,
            ratio,
            seed,
            predictor: kind,
            top1_accuracy: acc,
        });
    }
    write_json(&marker, &out)?;
    Ok(out)
}

/// Held-out passes for handover evaluation: independent of every pass a
/// dataset is built from.
pub fn eval_traces(cfg: &ExperimentConfig, s: &Scenario, seed: u64) -> Result<Vec<Trace>> {
    (0..cfg.cell.eval_passes as u64)
        .into_par_iter()
        .map(|p| generate_trace(s, &cfg.cell.dataset.trace, pass_seed(seed ^ EVAL_SALT, p)))
        .collect()
}

pub fn pooled_kpis(traces: &[Trace], ho: &HandoverConfig, f: Option<&dyn L3Forecaster>) -> Result<KpiReport> {
    let reports = traces
        .iter()
        .map(|t| kpis(&simulate(t, ho, f)?, ho))
        .collect::<Result<Vec<_>>>()?;
    Ok(KpiReport::pooled(&reports))
}

/// One cell-level run at (speed, seed): the traditional baseline plus every
/// (predictor, variant) pair driving AI option 1, all on the same held-out
/// passes.
pub fn run_cell(cfg: &ExperimentConfig, speed: f64, seed: u64) -> Result<Vec<RlfRecord>> {
    let tag = format!("{}kmh_s{seed}", speed_tag(speed));
    let marker = cfg.output_dir.join("stages/cell").join(format!("{tag}.json"));
    if let Some(done) = read_marker(&marker)? {
        return Ok(done);
    }
    let s = build_scenario(&cfg.cell_scenario.with_speed(speed))?;
    let traces = eval_traces(cfg, &s, seed)?;
    let base = HandoverConfig {
        mode: HoMode::Traditional,
        ..cfg.handover.clone()
    };
    let mut out = vec![RlfRecord {
        speed_kmh: speed,
        seed,
        row: NON_AI_ROW.into(),
        kpis: pooled_kpis(&traces, &base, None)?,
    }];
    let ai = HandoverConfig {
        mode: HoMode::AiOption1,
        ..cfg.handover.clone()
    };
    let train = TrainConfig {
        seed,
        ..cfg.cell.train.clone()
    };
    let dcfg = CellDatasetConfig {
        seed,
        ..cfg.cell.dataset.clone()
    };
    let mut ai_rows = Vec::new();
    for &variant in &cfg.sweep.variants {
        let ds = generate_cell_dataset(&s, &dcfg, variant)?;
        let vtag = format!("{tag}_{variant}");
        if cfg.save_datasets {
            ds.save(&cfg.output_dir.join("datasets/cell").join(&vtag))?;
        }
        for &kind in &cfg.cell.predictors {
            let spec = PredictorSpec {
                kind,
                arch: cfg.cell_arch(),
            };
            let p = TrainedCellPredictor::train(&spec, &ds, &train)?;
            let k = pooled_kpis(&traces, &ai, Some(&p))?;
            TrainedPredictor::Cell(p).save(
                &cfg.output_dir.join("checkpoints/cell").join(&vtag).join(kind.id()),
                &train,
            )?;
            ai_rows.push((kind, variant, k));
        }
    }
    // Rows in table order: predictor-major, then variant.
    for &kind in &cfg.cell.predictors {
        for &variant in &cfg.sweep.variants {
            let (_, _, k) = ai_rows
                .iter()
                .find(|r| r.0 == kind && r.1 == variant)
                .expect("row trained");
            out.push(RlfRecord {
                speed_kmh: speed,
                seed,
                row: table2_label(kind, variant),
                kpis: k.clone(),
            });
        }
    }
    write_json(&cfg.output_dir.join("runs").join(format!("cell_{tag}.json")), &out)?;
    write_json(&marker, &out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig3Row {
    pub speed_kmh: f64,
    pub ratio: Ratio,
    pub predictor: PredictorKind,
    /// Mean over seeds.
    pub top1_accuracy: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub row: String,
    /// Mean RLF rate over seeds, one entry per swept speed.
    pub rlf_rate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub code_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig3Table {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub rows: Vec<Fig3Row>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2 {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub speeds_kmh: Vec<f64>,
    pub rlf_rate_definition: String,
    pub rows: Vec<Table2Row>,
}

pub fn fig3_table(cfg: &ExperimentConfig, records: &[AccuracyRecord]) -> Fig3Table {
    let mut rows = Vec::new();
    for &speed in &cfg.sweep.speeds {
        for &ratio in &cfg.sweep.ratios {
            for &kind in &cfg.beam.predictors {
                let accs: Vec<f64> = records
                    .iter()
                    .filter(|r| r.speed_kmh == speed && r.ratio == ratio && r.predictor == kind)
                    .map(|r| r.top1_accuracy)
                    .collect();
                if accs.is_empty() {
                    continue;
                }
                rows.push(Fig3Row {
                    speed_kmh: speed,
                    ratio,
                    predictor: kind,
                    top1_accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
                    n_seeds: accs.len(),
                });
            }
        }
    }
    Fig3Table {
        provenance: provenance(cfg),
        rows,
    }
}

pub fn table2(cfg: &ExperimentConfig, records: &[RlfRecord]) -> Table2 {
    let mut labels = vec![NON_AI_ROW.to_string()];
    for &kind in &cfg.cell.predictors {
        for &v in &cfg.sweep.variants {
            labels.push(table2_label(kind, v));
        }
    }
    let rows = labels
        .into_iter()
        .map(|row| {
            let rlf_rate = cfg
                .sweep
                .speeds
                .iter()
                .map(|&speed| {
                    let v: Vec<f64> = records
                        .iter()
                        .filter(|r| r.row == row && r.speed_kmh == speed)
                        .map(|r| r.kpis.rlf_rate)
                        .collect();
                    if v.is_empty() {
                        f64::NAN
                    } else {
                        v.iter().sum::<f64>() / v.len() as f64
                    }
                })
                .collect();
            Table2Row { row, rlf_rate }
        })
        .collect();
    Table2 {
        provenance: provenance(cfg),
        speeds_kmh: cfg.sweep.speeds.clone(),
        rlf_rate_definition: crate::handover::RLF_RATE_DEFINITION.to_string(),
        rows,
    }
}

fn provenance(cfg: &ExperimentConfig) -> Provenance {
    Provenance {
        config_hash: cfg.hash(),
        seeds: cfg.sweep.seeds.clone(),
        code_version: CODE_VERSION.to_string(),
    }
}

fn seeds_field(p: &Provenance) -> String {
    p.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";")
}

/// `speed_kmh,ratio,predictor,top1_accuracy,n_seeds,config_hash,seeds,code_version`
pub fn fig3_csv(t: &Fig3Table) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "speed_kmh",
        "ratio",
        "predictor",
        "top1_accuracy",
        "n_seeds",
        "config_hash",
        "seeds",
        "code_version",
    ])?;
    let seeds = seeds_field(&t.provenance);
    for r in &t.rows {
        w.write_record([
            format!("{}", r.speed_kmh),
            r.ratio.to_string(),
            r.predictor.id().to_string(),
            format!("{:.6}", r.top1_accuracy),
            r.n_seeds.to_string(),
            t.provenance.config_hash.clone(),
            seeds.clone(),
            t.provenance.code_version.clone(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))
}

/// One row per method, one column per speed (RLF rate), then provenance.
pub fn table2_csv(t: &Table2) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_string()];
    header.extend(t.speeds_kmh.iter().map(|v| format!("{v}km/h")));
    header.extend(["config_hash", "seeds", "code_version"].map(String::from));
    w.write_record(&header)?;
    let seeds = seeds_field(&t.provenance);
    for r in &t.rows {
        let mut rec = vec![r.row.clone()];
        rec.extend(r.rlf_rate.iter().map(|v| format!("{v:.6}")));
        rec.extend([
            t.provenance.config_hash.clone(),
            seeds.clone(),
            t.provenance.code_version.clone(),
        ]);
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStyle {
    Fig3,
    Table2,
}

/// Writes `<style>.csv` and `<style>.json` from the stage markers found in
/// the output directory. Returns the CSV path.
pub fn write_report(cfg: &ExperimentConfig, style: ReportStyle) -> Result<PathBuf> {
    let dir = &cfg.output_dir;
    let (name, csv, json) = match style {
        ReportStyle::Fig3 => {
            let t = fig3_table(cfg, &collect_markers::<AccuracyRecord>(&dir.join("stages/beam"))?);
            ("fig3", fig3_csv(&t)?, serde_json::to_vec_pretty(&t)?)
        }
        ReportStyle::Table2 => {
            let t = table2(cfg, &collect_markers::<RlfRecord>(&dir.join("stages/cell"))?);
            ("table2", table2_csv(&t)?, serde_json::to_vec_pretty(&t)?)
        }
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(format!("{name}.csv"));
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    let json_path = dir.join(format!("{name}.json"));
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok(csv_path)
}

fn collect_markers<T: DeserializeOwned>(dir: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(Error::io(dir, e)),
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for p in paths {
        let v: Vec<T> = read_marker(&p)?.unwrap_or_default();
        out.extend(v);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub dir: PathBuf,
    pub fig3: Fig3Table,
    pub table2: Table2,
    pub accuracy: Vec<AccuracyRecord>,
    pub rlf: Vec<RlfRecord>,
    /// Wall-clock seconds of the beam and cell stages (not written to the
    /// report files, which must be reproducible byte for byte).
    pub stage_seconds: BTreeMap<String, f64>,
}

/// Runs every stage. Completed runs are skipped on re-execution (their
/// markers under `stages/` hold the results).
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("config.json"), cfg)?;
    let mut stage_seconds = BTreeMap::new();

    let t0 = std::time::Instant::now();
    let mut beam_runs = Vec::new();
    if !cfg.beam.predictors.is_empty() {
        for &sp in &cfg.sweep.speeds {
            for &r in &cfg.sweep.ratios {
                for &sd in &cfg.sweep.seeds {
                    beam_runs.push((sp, r, sd));
                }
            }
        }
    }
    let accuracy: Vec<AccuracyRecord> = beam_runs
        .par_iter()
        .map(|&(sp, r, sd)| run_beam(cfg, sp, r, sd))
        .collect::<Result<Vec<_>>>()?
        .concat();
    stage_seconds.insert("beam".into(), t0.elapsed().as_secs_f64());

    let t0 = std::time::Instant::now();
    let mut cell_runs = Vec::new();
    for &sp in &cfg.sweep.speeds {
        for &sd in &cfg.sweep.seeds {
            cell_runs.push((sp, sd));
        }
    }
    let rlf: Vec<RlfRecord> = cell_runs
        .par_iter()
        .map(|&(sp, sd)| run_cell(cfg, sp, sd))
        .collect::<Result<Vec<_>>>()?
        .concat();
    stage_seconds.insert("cell".into(), t0.elapsed().as_secs_f64());

    write_report(cfg, ReportStyle::Fig3)?;
    write_report(cfg, ReportStyle::Table2)?;
    Ok(PipelineOutput {
        dir: dir.clone(),
        fig3: fig3_table(cfg, &accuracy),
        table2: table2(cfg, &rlf),
        accuracy,
        rlf,
        stage_seconds,
    })
}

/// Minimal sweep that exercises every stage in a few seconds.
pub fn smoke_config(output_dir: PathBuf) -> ExperimentConfig {
    let arch = ArchConfig {
        lstm_hidden: 8,
        lstm_layers: 1,
        conv_channels: vec![2, 4],
        dense_hidden: 8,
        kernel: 3,
    };
    let train = TrainConfig {
        batch_size: 32,
        max_epochs: 2,
        initial_lr: 3e-3,
        ..TrainConfig::default()
    };
    ExperimentConfig {
        output_dir,
        sweep: Sweep {
            speeds: vec![500.0],
            ratios: vec![Ratio { num: 1, den: 16 }],
            variants: vec![CellVariant::PartBeam],
            seeds: vec![0],
        },
        beam: BeamStage {
            predictors: vec![PredictorKind::NonaiBestMeasured, PredictorKind::LstmDownsampled],
            dataset: BeamDatasetConfig {
                n_samples: 100,
                n_passes: 2,
                ..BeamDatasetConfig::default()
            },
            arch: arch.clone(),
            train: train.clone(),
            ..BeamStage::default()
        },
        cell: CellStage {
            predictors: vec![PredictorKind::CellCnn],
            eval_passes: 1,
            dataset: CellDatasetConfig {
                n_samples: 100,
                n_passes: 2,
                ..CellDatasetConfig::default()
            },
            arch,
            train,
        },
        ..ExperimentConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_sweep_is_rejected_before_any_output() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let mut cfg = smoke_config(out.clone());
        cfg.sweep.speeds.clear();
        let e = run_pipeline(&cfg).unwrap_err();
        assert!(e.is_validation());
        assert!(!out.exists());

        let mut cfg = smoke_config(out.clone());
        cfg.sweep.variants.clear();
        assert!(run_pipeline(&cfg).unwrap_err().is_validation());
        assert!(!out.exists());
    }

    #[test]
    fn mismatched_predictor_levels_are_rejected() {
        let mut cfg = smoke_config(PathBuf::from("unused"));
        cfg.beam.predictors.push(PredictorKind::CellCnn);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = smoke_config(PathBuf::from("a"));
        let b = smoke_config(PathBuf::from("b"));
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.sweep.seeds = vec![1];
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = smoke_config(PathBuf::from("x"));
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let d = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(d, ExperimentConfig::default());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn table2_labels() {
        assert_eq!(
            table2_label(PredictorKind::CellCnn, CellVariant::PartCell),
            "CNN_Part_Cell"
        );
        assert_eq!(
            table2_label(PredictorKind::CellLstm, CellVariant::AllBeamCell),
            "LSTM_All_Beam_Cell"
        );
    }

    #[test]
    fn fig3_averages_over_seeds() {
        let cfg = smoke_config(PathBuf::from("x"));
        let r = Ratio { num: 1, den: 16 };
        let rec = |seed, acc| AccuracyRecord {
            speed_kmh: 500.0,
            ratio: r,
            seed,
            predictor: PredictorKind::LstmDownsampled,
            top1_accuracy: acc,
        };
        let t = fig3_table(&cfg, &[rec(0, 0.5), rec(1, 0.75)]);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].top1_accuracy, 0.625);
        assert_eq!(t.rows[0].n_seeds, 2);
        let csv = String::from_utf8(fig3_csv(&t).unwrap()).unwrap();
        assert!(csv.starts_with("speed_kmh,ratio,predictor,top1_accuracy,n_seeds,config_hash,seeds,code_version\n"));
        assert!(csv.contains("500,1/16,lstm_downsampled,0.625000,2,"));
    }
}
