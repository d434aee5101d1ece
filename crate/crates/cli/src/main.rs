use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use hsr_mobility::codebook::{Ratio, SelectionPattern};
use hsr_mobility::handover::{kpis, simulate, HandoverConfig, HoMode, KpiReport, L3Forecaster, OracleForecaster};
use hsr_mobility::pipeline::{eval_traces, run_pipeline, write_report, ExperimentConfig, ReportStyle};
use hsr_mobility::predictors::beam::{model_accuracy, nonai_accuracy, SplitKind};
use hsr_mobility::predictors::cell::evaluate_cell;
use hsr_mobility::predictors::{
    generate_beam_dataset, generate_cell_dataset, BeamDataset, BeamDatasetConfig, CellDataset, CellDatasetConfig,
    CellVariant, PredictorKind, PredictorSpec, TrainConfig, TrainedBeamPredictor, TrainedCellPredictor,
    TrainedPredictor,
};
use hsr_mobility::scenario::build_scenario;
use hsr_mobility::verify::verify;
use hsr_mobility::Error;

/// Environment variable holding the worker-thread count.
const WORKERS_ENV: &str = "HSRMM_WORKERS";

#[derive(Parser)]
#[command(
    name = "hsrmm",
    version,
    about = "Beam- and cell-level mobility management experiments for high-speed railways"
)]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the configured one).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use the full-size architectures.
    #[arg(long, global = true)]
    paper_scale: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Scenario geometry.
    Scenario {
        #[command(subcommand)]
        cmd: ScenarioCmd,
    },
    /// Dataset generation.
    Dataset {
        #[command(subcommand)]
        cmd: DatasetCmd,
    },
    /// Train a predictor on a dataset directory.
    Train {
        #[arg(long)]
        predictor: PredictorKind,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a trained predictor on the test split of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Run the handover simulation on held-out passes and print pooled KPIs.
    Simulate {
        #[arg(long, default_value_t = 350.0)]
        speed: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "traditional")]
        mode: HoMode,
        /// Trained cell-level predictor driving the AI modes.
        #[arg(long, conflicts_with = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Drive the AI modes with the true future L3 values.
        #[arg(long)]
        oracle: bool,
    },
    /// Run every stage of the configured sweep.
    Run,
    /// Write aggregate tables from completed stages.
    Report {
        #[arg(long, value_enum)]
        style: Style,
    },
    /// Run the invariant suite.
    Verify,
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Print the resolved scenario as JSON.
    Dump {
        #[arg(long)]
        speed: Option<f64>,
        /// Dump the cell-level layout instead of the beam-level one.
        #[arg(long)]
        cell_level: bool,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Generate a beam- or cell-level dataset.
    Gen(GenArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "beam")]
    level: Level,
    #[arg(long, default_value_t = 350.0)]
    speed: f64,
    /// Measured fraction of the codebook, e.g. 1/16.
    #[arg(long)]
    ratio: Option<Ratio>,
    /// Set-B selection pattern: equidistant or random.
    #[arg(long)]
    scheme: Option<SelectionPattern>,
    /// Cell-level measurement variant.
    #[arg(long, default_value = "all_beam_cell")]
    variant: CellVariant,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Beam,
    Cell,
}

#[derive(Clone, Copy, ValueEnum)]
enum Style {
    Fig3,
    Table2,
}

/// Failure classes, mapped to exit codes 1, 2 and 3.
enum Failure {
    Validation(anyhow::Error),
    Invariant(anyhow::Error),
    Runtime(anyhow::Error),
}

fn classify(e: anyhow::Error) -> Failure {
    match e.downcast_ref::<Error>() {
        Some(err) if err.is_validation() => Failure::Validation(e),
        Some(Error::Checksum { .. }) | Some(Error::Corrupt { .. }) => Failure::Invariant(e),
        _ => Failure::Runtime(e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(e) = init_workers() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    let res = load_config(&cli)
        .map_err(Failure::Validation)
        .and_then(|cfg| execute(&cli, &cfg));
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Invariant(e)) => {
            eprintln!("invariant failure: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn init_workers() -> anyhow::Result<()> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .with_context(|| format!("{WORKERS_ENV}={v} is not a thread count"))?;
    if n == 0 {
        bail!("{WORKERS_ENV} must be positive");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    cfg.paper_scale |= cli.paper_scale;
    Ok(cfg)
}

fn execute(cli: &Cli, cfg: &ExperimentConfig) -> Result<(), Failure> {
    match &cli.cmd {
        Cmd::Verify => {
            let report = verify(cfg).map_err(|e| classify(e.into()))?;
            for c in &report.checks {
                emit(&c.to_string()).map_err(Failure::Runtime)?;
            }
            if report.all_passed() {
                Ok(())
            } else {
                let failed = report.checks.iter().filter(|c| !c.passed).count();
                Err(Failure::Invariant(anyhow::anyhow!("{failed} check(s) failed")))
            }
        }
        cmd => dispatch(cmd, cfg).map_err(classify),
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> anyhow::Result<()> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn print_json(v: &serde_json::Value) -> anyhow::Result<()> {
    emit(&serde_json::to_string_pretty(v)?)
}

fn dispatch(cmd: &Cmd, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    match cmd {
        Cmd::Scenario {
            cmd: ScenarioCmd::Dump { speed, cell_level },
        } => {
            let base = if *cell_level { &cfg.cell_scenario } else { &cfg.scenario };
            let sc = match speed {
                Some(v) => base.with_speed(*v),
                None => base.clone(),
            };
            emit(&build_scenario(&sc)?.dump_json()?)?;
        }
        Cmd::Dataset {
            cmd: DatasetCmd::Gen(a),
        } => {
            let dir = gen_dataset(cfg, a)?;
            emit(&dir.display().to_string())?;
        }
        Cmd::Train {
            predictor,
            dataset,
            seed,
        } => {
            let spec = PredictorSpec {
                kind: *predictor,
                arch: if predictor.is_cell_level() {
                    cfg.cell_arch()
                } else {
                    cfg.beam_arch()
                },
            };
            let base = if predictor.is_cell_level() {
                &cfg.cell.train
            } else {
                &cfg.beam.train
            };
            let train = TrainConfig {
                seed: seed.unwrap_or(base.seed),
                ..base.clone()
            };
            let p = if predictor.is_cell_level() {
                let ds = CellDataset::load(dataset)?;
                TrainedPredictor::Cell(TrainedCellPredictor::train(&spec, &ds, &train)?)
            } else if *predictor == PredictorKind::NonaiBestMeasured {
                bail!(Error::Config("nonai_best_measured has nothing to train".into()));
            } else {
                let ds = BeamDataset::load(dataset)?;
                TrainedPredictor::Beam(TrainedBeamPredictor::train(
                    &spec,
                    &ds,
                    cfg.beam.compression_init,
                    &train,
                )?)
            };
            let dir = cfg.output_dir.join("checkpoints").join(predictor.id());
            p.save(&dir, &train)?;
            emit(&dir.display().to_string())?;
        }
        Cmd::Eval { checkpoint, dataset } => match TrainedPredictor::load(checkpoint)? {
            TrainedPredictor::Beam(p) => {
                let ds = BeamDataset::load(dataset)?;
                print_json(&json!({
                    "predictor": p.spec.kind.id(),
                    "top1_accuracy": model_accuracy(&p, &ds, SplitKind::Test)?,
                    "nonai_top1_accuracy": nonai_accuracy(&ds, SplitKind::Test)?,
                    "test_samples": ds.meta.n_test,
                }))?;
            }
            TrainedPredictor::Cell(p) => {
                let ds = CellDataset::load(dataset)?;
                let (nmse, mae) = evaluate_cell(&p, &ds)?;
                print_json(&json!({
                    "predictor": p.spec.kind.id(),
                    "nmse": nmse,
                    "rsrp_mae_db": mae,
                    "test_samples": ds.meta.n_test,
                }))?;
            }
        },
        Cmd::Simulate {
            speed,
            seed,
            mode,
            checkpoint,
            oracle,
        } => {
            let k = run_simulation(cfg, *speed, *seed, *mode, checkpoint.as_deref(), *oracle)?;
            print_json(&serde_json::to_value(k)?)?;
        }
        Cmd::Run => {
            let out = run_pipeline(cfg)?;
            for (stage, secs) in &out.stage_seconds {
                eprintln!("{stage}: {secs:.1} s");
            }
            emit(&out.dir.display().to_string())?;
        }
        Cmd::Report { style } => {
            let style = match style {
                Style::Fig3 => ReportStyle::Fig3,
                Style::Table2 => ReportStyle::Table2,
            };
            let path = write_report(cfg, style)?;
            emit(fs::read_to_string(&path)?.trim_end())?;
        }
        Cmd::Verify => unreachable!("handled by execute"),
    }
    Ok(())
}

fn gen_dataset(cfg: &ExperimentConfig, a: &GenArgs) -> anyhow::Result<PathBuf> {
    let root = cfg.output_dir.join("datasets");
    match a.level {
        Level::Beam => {
            let base = &cfg.beam.dataset;
            let dcfg = BeamDatasetConfig {
                ratio: a.ratio.unwrap_or(base.ratio),
                pattern: a.scheme.unwrap_or(base.pattern),
                seed: a.seed.unwrap_or(base.seed),
                ..base.clone()
            };
            let s = build_scenario(&cfg.scenario.with_speed(a.speed))?;
            let ds = generate_beam_dataset(&s, &dcfg)?;
            let dir = root.join(format!(
                "beam_{}kmh_{}_{}_s{}",
                a.speed, dcfg.ratio.num, dcfg.ratio.den, dcfg.seed
            ));
            ds.save(&dir)?;
            Ok(dir)
        }
        Level::Cell => {
            let base = &cfg.cell.dataset;
            let dcfg = CellDatasetConfig {
                seed: a.seed.unwrap_or(base.seed),
                ..base.clone()
            };
            let s = build_scenario(&cfg.cell_scenario.with_speed(a.speed))?;
            let ds = generate_cell_dataset(&s, &dcfg, a.variant)?;
            let dir = root.join(format!("cell_{}kmh_{}_s{}", a.speed, a.variant, dcfg.seed));
            ds.save(&dir)?;
            Ok(dir)
        }
    }
}

fn run_simulation(
    cfg: &ExperimentConfig,
    speed: f64,
    seed: u64,
    mode: HoMode,
    checkpoint: Option<&Path>,
    oracle: bool,
) -> anyhow::Result<KpiReport> {
    let s = build_scenario(&cfg.cell_scenario.with_speed(speed))?;
    let traces = eval_traces(cfg, &s, seed)?;
    let ho = HandoverConfig {
        mode,
        ..cfg.handover.clone()
    };
    let loaded;
    let oracle_f = OracleForecaster { horizon: 4 };
    let forecaster: Option<&dyn L3Forecaster> = match (checkpoint, oracle) {
        (Some(dir), _) => match TrainedPredictor::load(dir)? {
            TrainedPredictor::Cell(p) => {
                loaded = p;
                Some(&loaded)
            }
            TrainedPredictor::Beam(_) => bail!(Error::Config("simulation needs a cell-level predictor".into())),
        },
        (None, true) => Some(&oracle_f),
        (None, false) => None,
    };
    if mode != HoMode::Traditional && forecaster.is_none() {
        bail!(Error::Config(format!(
            "mode {} needs --checkpoint or --oracle",
            mode.id()
        )));
    }
    let logs_dir = cfg.output_dir.join("handover_logs");
    fs::create_dir_all(&logs_dir)?;
    let mut reports = Vec::new();
    for (p, tr) in traces.iter().enumerate() {
        let log = simulate(tr, &ho, forecaster)?;
        let path = logs_dir.join(format!("{}_{speed}kmh_s{seed}_p{p}.csv", mode.id()));
        log.write_csv(fs::File::create(&path)?)?;
        reports.push(kpis(&log, &ho)?);
    }
    Ok(KpiReport::pooled(&reports))
}
