//! Cell-level mobility: A3/TTT handover, preparation and execution delays,
//! T310-based radio link failure, failure classification and KPIs.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{dbm_to_mw, mw_to_dbm};
use crate::error::{Error, Result};
use crate::nn::argmax;
use crate::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoMode {
    Traditional,
    /// Predicted L3 over the TTT window replaces the measured dwell; the
    /// command is sent immediately.
    AiOption1,
    /// Prediction arms the handover; the command waits for the measured A3
    /// condition (no further dwell).
    AiOption2,
}

impl HoMode {
    pub fn id(&self) -> &'static str {
        match self {
            HoMode::Traditional => "traditional",
            HoMode::AiOption1 => "ai_option1",
            HoMode::AiOption2 => "ai_option2",
        }
    }
}

impl fmt::Display for HoMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for HoMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [HoMode::Traditional, HoMode::AiOption1, HoMode::AiOption2]
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown handover mode '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HandoverConfig {
    pub a3_offset_db: f64,
    pub ttt_s: f64,
    pub prep_delay_s: f64,
    pub exec_interruption_s: f64,
    pub qout_db: f64,
    pub qin_db: f64,
    pub t310_s: f64,
    pub pingpong_window_s: f64,
    pub reestablish_delay_s: f64,
    /// Load scaling applied to interfering cells in the SINR.
    pub activity_factor: f64,
    pub mode: HoMode,
}

impl Default for HandoverConfig {
    fn default() -> Self {
        HandoverConfig {
            a3_offset_db: 3.0,
            ttt_s: 0.16,
            prep_delay_s: 0.05,
            exec_interruption_s: 0.04,
            qout_db: -8.0,
            qin_db: -6.0,
            t310_s: 1.0,
            pingpong_window_s: 1.0,
            reestablish_delay_s: 0.1,
            activity_factor: 1.0,
            mode: HoMode::Traditional,
        }
    }
}

impl HandoverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.qin_db > self.qout_db) {
            return Err(Error::Config(format!(
                "qin ({}) must exceed qout ({})",
                self.qin_db, self.qout_db
            )));
        }
        let durations = [
            ("ttt_s", self.ttt_s),
            ("prep_delay_s", self.prep_delay_s),
            ("exec_interruption_s", self.exec_interruption_s),
            ("t310_s", self.t310_s),
            ("pingpong_window_s", self.pingpong_window_s),
            ("reestablish_delay_s", self.reestablish_delay_s),
        ];
        for (name, d) in durations {
            if !(d >= 0.0) || !d.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be a finite non-negative duration, got {d}"
                )));
            }
        }
        if !(self.activity_factor >= 0.0) {
            return Err(Error::Config("activity_factor must be non-negative".into()));
        }
        if self.a3_offset_db.is_nan() {
            return Err(Error::Config("a3_offset_db is NaN".into()));
        }
        Ok(())
    }
}

fn to_slots(d: f64, slot_s: f64) -> usize {
    (d / slot_s).round() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HofKind {
    TooLate,
    TooEarly,
    WrongCell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "hof")]
pub enum EventKind {
    A3Start,
    A3Cancel,
    HoCommand,
    HoSuccess,
    Hof(HofKind),
    Rlf,
    Reestablish,
    Pingpong,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::A3Start => "a3_start",
            EventKind::A3Cancel => "a3_cancel",
            EventKind::HoCommand => "ho_command",
            EventKind::HoSuccess => "ho_success",
            EventKind::Hof(HofKind::TooLate) => "hof_too_late",
            EventKind::Hof(HofKind::TooEarly) => "hof_too_early",
            EventKind::Hof(HofKind::WrongCell) => "hof_wrong_cell",
            EventKind::Rlf => "rlf",
            EventKind::Reestablish => "reestablish",
            EventKind::Pingpong => "pingpong",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub slot: usize,
    pub kind: EventKind,
    pub serving: usize,
    pub target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HandoverLog {
    pub slot_duration_s: f64,
    pub events: Vec<Event>,
    /// Slots simulated.
    pub n_slots: usize,
}

impl HandoverLog {
    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn hof_events(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Hof(_)))
            .count()
    }

    /// One row per event: `t,kind,serving,target`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "kind", "serving", "target"])?;
        for e in &self.events {
            wr.write_record([
                format!("{:.3}", e.slot as f64 * self.slot_duration_s),
                e.kind.name().to_string(),
                e.serving.to_string(),
                e.target.map(|t| t.to_string()).unwrap_or_default(),
            ])?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "phase")]
pub enum Phase {
    Connected,
    Preparing { target: usize, until: usize },
    Executing { target: usize, until: usize },
    RlfRecovery { until: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeConnState {
    pub serving: usize,
    pub phase: Phase,
    /// Slot at which the A3 condition started holding, per cell.
    pub a3_since: Vec<Option<usize>>,
    pub t310_since: Option<usize>,
    /// `ai_option2`: target armed by a prediction.
    pub armed: Option<usize>,
    /// Last completed handover: (slot, source, target).
    pub last_ho: Option<(usize, usize, usize)>,
    pub slot_duration_s: f64,
    pub log: Vec<Event>,
}

impl UeConnState {
    pub fn new(serving: usize, n_cells: usize, slot_duration_s: f64) -> Self {
        UeConnState {
            serving,
            phase: Phase::Connected,
            a3_since: vec![None; n_cells],
            t310_since: None,
            armed: None,
            last_ho: None,
            slot_duration_s,
            log: Vec::new(),
        }
    }

    fn emit(&mut self, out: &mut Vec<Event>, slot: usize, kind: EventKind, target: Option<usize>) {
        let e = Event {
            slot,
            kind,
            serving: self.serving,
            target,
        };
        self.log.push(e);
        out.push(e);
    }

    fn clear_a3(&mut self) {
        self.a3_since.iter_mut().for_each(|t| *t = None);
        self.armed = None;
    }

    pub fn in_flight(&self) -> bool {
        matches!(self.phase, Phase::Preparing { .. } | Phase::Executing { .. })
    }
}

/// Advances the T310 timer; emits `rlf` (and the failure of an in-flight
/// preparation) when it expires. Frozen while executing or recovering.
pub fn detect_rlf(state: &mut UeConnState, cfg: &HandoverConfig, sinr_db: f64, t: usize) -> Vec<Event> {
    let mut out = Vec::new();
    if !matches!(state.phase, Phase::Connected | Phase::Preparing { .. }) {
        return out;
    }
    let sinr = if sinr_db.is_nan() { f64::NEG_INFINITY } else { sinr_db };
    match state.t310_since {
        None if sinr < cfg.qout_db => state.t310_since = Some(t),
        Some(_) if sinr > cfg.qin_db => state.t310_since = None,
        _ => {}
    }
    let t310 = to_slots(cfg.t310_s, state.slot_duration_s);
    if let Some(start) = state.t310_since {
        if t - start >= t310 {
            if let Phase::Preparing { target, .. } = state.phase {
                state.emit(&mut out, t, EventKind::Hof(HofKind::TooLate), Some(target));
            }
            state.emit(&mut out, t, EventKind::Rlf, None);
            state.t310_since = None;
            state.clear_a3();
            state.phase = Phase::RlfRecovery {
                until: t + to_slots(cfg.reestablish_delay_s, state.slot_duration_s),
            };
        }
    }
    out
}

/// One slot of the state machine. `l3` is the measured per-cell L3-RSRP at
/// `t`; `predicted[k]` is the forecast for slot `t + k` (AI modes only).
pub fn step(
    state: &mut UeConnState,
    cfg: &HandoverConfig,
    l3: &[f64],
    predicted: Option<&[Vec<f64>]>,
    sinr_db: f64,
    t: usize,
) -> Vec<Event> {
    let mut out = Vec::new();
    let slot_s = state.slot_duration_s;
    match state.phase {
        Phase::Preparing { target, until } if t >= until => {
            state.phase = Phase::Executing {
                target,
                until: t + to_slots(cfg.exec_interruption_s, slot_s),
            };
        }
        Phase::RlfRecovery { until } if t >= until => {
            let best = argmax(l3);
            state.serving = best;
            state.phase = Phase::Connected;
            state.t310_since = None;
            state.emit(&mut out, t, EventKind::Reestablish, Some(best));
        }
        _ => {}
    }
    if let Phase::Executing { target, until } = state.phase {
        if t >= until {
            complete_handover(state, cfg, target, t, &mut out);
        }
    }
    out.extend(detect_rlf(state, cfg, sinr_db, t));
    if state.phase == Phase::Connected {
        evaluate_a3(state, cfg, l3, predicted, t, &mut out);
    }
    out
}

fn complete_handover(state: &mut UeConnState, cfg: &HandoverConfig, target: usize, t: usize, out: &mut Vec<Event>) {
    let source = state.serving;
    state.emit(out, t, EventKind::HoSuccess, Some(target));
    let window = to_slots(cfg.pingpong_window_s, state.slot_duration_s);
    if let Some((when, from, to)) = state.last_ho {
        if to == source && from == target && t - when <= window {
            state.emit(out, t, EventKind::Pingpong, Some(target));
        }
    }
    state.serving = target;
    state.last_ho = Some((t, source, target));
    state.phase = Phase::Connected;
    state.t310_since = None;
    state.clear_a3();
}

fn command(state: &mut UeConnState, cfg: &HandoverConfig, target: usize, t: usize, out: &mut Vec<Event>) {
    state.emit(out, t, EventKind::HoCommand, Some(target));
    state.clear_a3();
    let prep = to_slots(cfg.prep_delay_s, state.slot_duration_s);
    state.phase = Phase::Preparing {
        target,
        until: t + prep,
    };
    // Zero-length stages complete within the same slot.
    if prep == 0 {
        state.phase = Phase::Executing {
            target,
            until: t + to_slots(cfg.exec_interruption_s, state.slot_duration_s),
        };
        if let Phase::Executing { until, .. } = state.phase {
            if until == t {
                complete_handover(state, cfg, target, t, out);
            }
        }
    }
}

/// Neighbour whose forecast satisfies A3 at every instance of the window,
/// best mean forecast first; lowest index on ties.
fn predicted_target(state: &UeConnState, cfg: &HandoverConfig, pred: &[Vec<f64>], window: usize) -> Option<usize> {
    let w = window.clamp(1, pred.len());
    let s = state.serving;
    let mut best: Option<(usize, f64)> = None;
    for n in 0..pred[0].len() {
        if n == s {
            continue;
        }
        if (0..w).all(|k| pred[k][n] > pred[k][s] + cfg.a3_offset_db) {
            let score: f64 = (0..w).map(|k| pred[k][n]).sum::<f64>() / w as f64;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((n, score));
            }
        }
    }
    best.map(|(n, _)| n)
}

fn evaluate_a3(
    state: &mut UeConnState,
    cfg: &HandoverConfig,
    l3: &[f64],
    predicted: Option<&[Vec<f64>]>,
    t: usize,
    out: &mut Vec<Event>,
) {
    let ttt = to_slots(cfg.ttt_s, state.slot_duration_s);
    let s = state.serving;
    let pred = predicted.filter(|p| !p.is_empty() && cfg.mode != HoMode::Traditional);
    if let (Some(p), HoMode::AiOption1) = (pred, cfg.mode) {
        if let Some(target) = predicted_target(state, cfg, p, ttt) {
            command(state, cfg, target, t, out);
            return;
        }
    }
    if let (Some(p), HoMode::AiOption2) = (pred, cfg.mode) {
        if state.armed.is_none() {
            state.armed = predicted_target(state, cfg, p, ttt);
        }
    }
    if let Some(target) = state.armed {
        if l3[target] > l3[s] + cfg.a3_offset_db {
            command(state, cfg, target, t, out);
            return;
        }
    }

    let mut fired: Option<usize> = None;
    for n in 0..l3.len() {
        if n == s {
            continue;
        }
        let holds = l3[n] > l3[s] + cfg.a3_offset_db;
        match (holds, state.a3_since[n]) {
            (true, None) => {
                state.a3_since[n] = Some(t);
                state.emit(out, t, EventKind::A3Start, Some(n));
            }
            (false, Some(_)) => {
                state.a3_since[n] = None;
                state.emit(out, t, EventKind::A3Cancel, Some(n));
            }
            _ => {}
        }
        if let Some(since) = state.a3_since[n] {
            if t - since >= ttt && fired.is_none_or(|f| l3[n] > l3[f]) {
                fired = Some(n);
            }
        }
    }
    if let Some(target) = fired {
        command(state, cfg, target, t, out);
    }
}

/// Resolves a handover still in flight when the run ends: it completes at
/// its scheduled time (no further radio information exists to fail it).
pub fn finish(state: &mut UeConnState, cfg: &HandoverConfig) {
    let mut out = Vec::new();
    let slot_s = state.slot_duration_s;
    if let Phase::Preparing { target, until } = state.phase {
        state.phase = Phase::Executing {
            target,
            until: until + to_slots(cfg.exec_interruption_s, slot_s),
        };
    }
    if let Phase::Executing { target, until } = state.phase {
        complete_handover(state, cfg, target, until, &mut out);
    }
}

/// Serving-cell SINR from best-beam RSRPs.
pub fn serving_sinr_db(best_beam_dbm: &[f64], serving: usize, activity: f64, noise_floor_dbm: f64) -> f64 {
    let interference: f64 = best_beam_dbm
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != serving)
        .map(|(_, &p)| activity * dbm_to_mw(p))
        .sum();
    best_beam_dbm[serving] - mw_to_dbm(interference + dbm_to_mw(noise_floor_dbm))
}

/// Source of L3 forecasts for the AI modes.
pub trait L3Forecaster: Sync {
    /// Past slots needed before the first forecast.
    fn history(&self) -> usize;
    /// Forecast `[k][cell]` for slots `t + k`, using measurements before `t`.
    fn forecast(&self, trace: &Trace, t: usize) -> Result<Vec<Vec<f64>>>;
}

/// Perfect forecasts read from the trace itself.
#[derive(Debug, Clone, Copy)]
pub struct OracleForecaster {
    pub horizon: usize,
}

impl L3Forecaster for OracleForecaster {
    fn history(&self) -> usize {
        0
    }

    fn forecast(&self, trace: &Trace, t: usize) -> Result<Vec<Vec<f64>>> {
        Ok((0..self.horizon)
            .map(|k| trace.l3_at((t + k).min(trace.n_slots - 1)).to_vec())
            .collect())
    }
}

/// Runs the state machine over a whole trace. The UE starts on the cell with
/// the strongest L3 at slot 0. AI modes fall back to the measured TTT until
/// the forecaster has enough history.
pub fn simulate(trace: &Trace, cfg: &HandoverConfig, forecaster: Option<&dyn L3Forecaster>) -> Result<HandoverLog> {
    cfg.validate()?;
    if trace.n_slots == 0 {
        return Err(Error::Empty("trace"));
    }
    if cfg.mode != HoMode::Traditional && forecaster.is_none() {
        return Err(Error::Config(format!("{} needs a forecaster", cfg.mode)));
    }
    let mut state = UeConnState::new(argmax(trace.l3_at(0)), trace.n_cells, trace.slot_duration_s);
    for t in 0..trace.n_slots {
        let pred = match forecaster {
            Some(f) if cfg.mode != HoMode::Traditional && t >= f.history() && state.phase == Phase::Connected => {
                Some(f.forecast(trace, t)?)
            }
            _ => None,
        };
        let sinr = serving_sinr_db(
            trace.best_beam_at(t),
            state.serving,
            cfg.activity_factor,
            trace.noise_floor_dbm,
        );
        step(&mut state, cfg, trace.l3_at(t), pred.as_deref(), sinr, t);
    }
    finish(&mut state, cfg);
    Ok(HandoverLog {
        slot_duration_s: trace.slot_duration_s,
        events: state.log,
        n_slots: trace.n_slots,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure(HofKind),
}

/// Outcome of one handover attempt: a command, or an RLF that struck while
/// an A3 condition was pending.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub slot: usize,
    pub source: usize,
    pub target: usize,
    pub outcome: Outcome,
}

/// Labels every handover attempt in a completed log.
pub fn classify_hof(log: &HandoverLog, cfg: &HandoverConfig) -> Result<Vec<Attempt>> {
    let window = to_slots(cfg.pingpong_window_s, log.slot_duration_s);
    let ev = &log.events;
    if ev.windows(2).any(|w| w[1].slot < w[0].slot) {
        return Err(Error::MalformedLog("events are not time-ordered".into()));
    }
    let mut attempts = Vec::new();
    let mut pending_a3: Vec<(usize, usize)> = Vec::new();
    for (i, e) in ev.iter().enumerate() {
        match e.kind {
            EventKind::A3Start => pending_a3.push((e.target.unwrap_or(usize::MAX), e.slot)),
            EventKind::A3Cancel => pending_a3.retain(|&(n, _)| Some(n) != e.target),
            EventKind::HoCommand => {
                pending_a3.clear();
                let target = e
                    .target
                    .ok_or_else(|| Error::MalformedLog(format!("ho_command at slot {} has no target", e.slot)))?;
                let close = ev[i + 1..]
                    .iter()
                    .position(|x| matches!(x.kind, EventKind::HoSuccess | EventKind::Hof(_) | EventKind::HoCommand))
                    .map(|k| i + 1 + k);
                let outcome = match close.map(|k| &ev[k]) {
                    Some(x) if x.kind == EventKind::HoSuccess && x.target == Some(target) => {
                        classify_success(ev, close.unwrap(), e.serving, target, window)
                    }
                    Some(x) if matches!(x.kind, EventKind::Hof(_)) && x.target == Some(target) => match x.kind {
                        EventKind::Hof(k) => Outcome::Failure(k),
                        _ => unreachable!(),
                    },
                    _ => {
                        return Err(Error::MalformedLog(format!(
                            "ho_command at slot {} has no matching completion",
                            e.slot
                        )))
                    }
                };
                attempts.push(Attempt {
                    slot: e.slot,
                    source: e.serving,
                    target,
                    outcome,
                });
            }
            EventKind::Rlf => {
                // A failure while the state machine had not yet commanded.
                if let Some(&(n, _)) = pending_a3.first() {
                    attempts.push(Attempt {
                        slot: e.slot,
                        source: e.serving,
                        target: n,
                        outcome: Outcome::Failure(HofKind::TooLate),
                    });
                }
                pending_a3.clear();
            }
            EventKind::HoSuccess | EventKind::Reestablish => pending_a3.clear(),
            _ => {}
        }
    }
    Ok(attempts)
}

fn classify_success(ev: &[Event], done: usize, source: usize, target: usize, window: usize) -> Outcome {
    let t0 = ev[done].slot;
    for x in &ev[done + 1..] {
        if x.slot - t0 > window {
            break;
        }
        match x.kind {
            EventKind::Rlf if x.serving == target => return Outcome::Failure(HofKind::TooEarly),
            EventKind::HoCommand if x.serving == target && x.target.is_some_and(|c| c != source) => {
                return Outcome::Failure(HofKind::WrongCell)
            }
            _ => {}
        }
    }
    Outcome::Success
}

pub const RLF_RATE_DEFINITION: &str = "rlf / (rlf + successful handovers), counted per run";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiReport {
    pub handovers: usize,
    /// `ho_success` events (handovers that completed execution).
    pub completed: usize,
    /// Attempts classified as successful.
    pub successes: usize,
    pub hofs: usize,
    pub too_late: usize,
    pub too_early: usize,
    pub wrong_cell: usize,
    pub rlfs: usize,
    pub pingpongs: usize,
    pub hof_rate: f64,
    pub rlf_rate: f64,
    pub pingpong_rate: f64,
    pub mean_interruption_ms: f64,
    pub max_interruption_ms: f64,
    pub rlf_rate_definition: String,
    /// Nothing happened in the run; every rate is reported as zero.
    pub degenerate: bool,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl KpiReport {
    /// Pools several runs: counts are summed and the rates recomputed.
    pub fn pooled(reports: &[KpiReport]) -> KpiReport {
        let sum = |f: fn(&KpiReport) -> usize| reports.iter().map(f).sum::<usize>();
        let completed = sum(|r| r.completed);
        let (hofs, successes, rlfs, pingpongs) = (
            sum(|r| r.hofs),
            sum(|r| r.successes),
            sum(|r| r.rlfs),
            sum(|r| r.pingpongs),
        );
        let weighted: f64 = reports
            .iter()
            .map(|r| r.mean_interruption_ms * r.completed as f64)
            .sum();
        KpiReport {
            handovers: sum(|r| r.handovers),
            completed,
            successes,
            hofs,
            too_late: sum(|r| r.too_late),
            too_early: sum(|r| r.too_early),
            wrong_cell: sum(|r| r.wrong_cell),
            rlfs,
            pingpongs,
            hof_rate: ratio(hofs, hofs + successes),
            rlf_rate: ratio(rlfs, rlfs + completed),
            pingpong_rate: ratio(pingpongs, completed),
            mean_interruption_ms: if completed == 0 {
                0.0
            } else {
                weighted / completed as f64
            },
            max_interruption_ms: reports.iter().map(|r| r.max_interruption_ms).fold(0.0, f64::max),
            rlf_rate_definition: RLF_RATE_DEFINITION.to_string(),
            degenerate: reports.iter().all(|r| r.degenerate),
        }
    }
}

pub fn kpis(log: &HandoverLog, cfg: &HandoverConfig) -> Result<KpiReport> {
    let attempts = classify_hof(log, cfg)?;
    let count = |k: HofKind| attempts.iter().filter(|a| a.outcome == Outcome::Failure(k)).count();
    let (too_late, too_early, wrong_cell) = (
        count(HofKind::TooLate),
        count(HofKind::TooEarly),
        count(HofKind::WrongCell),
    );
    let hofs = too_late + too_early + wrong_cell;
    let successes = attempts.len() - hofs;
    let completed = log.count(EventKind::HoSuccess);
    let rlfs = log.count(EventKind::Rlf);
    let pingpongs = log.count(EventKind::Pingpong);

    // Interruption: execution time of every completed handover.
    let mut interruptions = Vec::new();
    let mut commanded: Option<usize> = None;
    let mut prep_end: Option<usize> = None;
    let prep = to_slots(cfg.prep_delay_s, log.slot_duration_s);
    for e in &log.events {
        match e.kind {
            EventKind::HoCommand => {
                commanded = Some(e.slot);
                prep_end = Some(e.slot + prep);
            }
            EventKind::HoSuccess => {
                if let (Some(_), Some(p)) = (commanded.take(), prep_end.take()) {
                    interruptions.push((e.slot - p) as f64 * log.slot_duration_s * 1e3);
                }
            }
            EventKind::Hof(_) => {
                commanded = None;
                prep_end = None;
            }
            _ => {}
        }
    }
    let mean = if interruptions.is_empty() {
        0.0
    } else {
        interruptions.iter().sum::<f64>() / interruptions.len() as f64
    };
    let max = interruptions.iter().copied().fold(0.0, f64::max);
    Ok(KpiReport {
        handovers: log.count(EventKind::HoCommand),
        completed,
        successes,
        hofs,
        too_late,
        too_early,
        wrong_cell,
        rlfs,
        pingpongs,
        hof_rate: ratio(hofs, hofs + successes),
        rlf_rate: ratio(rlfs, rlfs + completed),
        pingpong_rate: ratio(pingpongs, completed),
        mean_interruption_ms: mean,
        max_interruption_ms: max,
        rlf_rate_definition: RLF_RATE_DEFINITION.to_string(),
        degenerate: log.events.is_empty(),
    })
}

/// Hand-labelled event log covering every outcome class, with the expected
/// per-attempt outcomes under the default configuration: a clean handover, a
/// too-early one (RLF on the target right after), a wrong-cell one, an RLF
/// while A3 was pending, and a failure during preparation.
pub fn labelled_fixture() -> (HandoverLog, Vec<Outcome>) {
    use EventKind::*;
    let ev = |slot, kind, serving, target| Event {
        slot,
        kind,
        serving,
        target,
    };
    let events = vec![
        ev(10, HoCommand, 0, Some(1)),
        ev(19, HoSuccess, 0, Some(1)),
        ev(200, HoCommand, 1, Some(2)),
        ev(209, HoSuccess, 1, Some(2)),
        ev(250, Rlf, 2, None),
        ev(260, Reestablish, 2, Some(1)),
        ev(400, HoCommand, 1, Some(0)),
        ev(409, HoSuccess, 1, Some(0)),
        ev(450, HoCommand, 0, Some(2)),
        ev(459, HoSuccess, 0, Some(2)),
        ev(700, A3Start, 2, Some(1)),
        ev(710, Rlf, 2, None),
        ev(720, Reestablish, 2, Some(2)),
        ev(900, HoCommand, 2, Some(1)),
        ev(905, Hof(HofKind::TooLate), 2, Some(1)),
        ev(905, Rlf, 2, None),
    ];
    let log = HandoverLog {
        slot_duration_s: 0.01,
        n_slots: 1000,
        events,
    };
    let f = Outcome::Failure;
    let want = vec![
        Outcome::Success,
        f(HofKind::TooEarly),
        f(HofKind::WrongCell),
        Outcome::Success,
        f(HofKind::TooLate),
        f(HofKind::TooLate),
    ];
    (log, want)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// A trace whose L3, L1 and best-beam values are all `l3[slot][cell]`.
    pub(crate) fn flat_trace(l3: &[Vec<f64>]) -> Trace {
        Trace::from_l3(l3, 0.01)
    }

    fn crossing(t_star: usize, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|t| vec![-80.0, if t < t_star { -90.0 } else { -70.0 }])
            .collect()
    }

    fn first(log: &HandoverLog, kind: EventKind) -> Option<usize> {
        log.events.iter().find(|e| e.kind == kind).map(|e| e.slot)
    }

    fn ev(slot: usize, kind: EventKind, serving: usize, target: Option<usize>) -> Event {
        Event {
            slot,
            kind,
            serving,
            target,
        }
    }

    #[test]
    fn traditional_fires_after_ttt() {
        let tr = flat_trace(&crossing(30, 100));
        let cfg = HandoverConfig::default();
        let log = simulate(&tr, &cfg, None).unwrap();
        assert_eq!(first(&log, EventKind::A3Start), Some(30));
        assert_eq!(first(&log, EventKind::HoCommand), Some(30 + 16));
        // prep 5 slots, execution 4 slots.
        assert_eq!(first(&log, EventKind::HoSuccess), Some(46 + 5 + 4));
        let k = kpis(&log, &cfg).unwrap();
        assert_eq!((k.successes, k.hofs, k.rlfs), (1, 0, 0));
        assert!((k.mean_interruption_ms - 40.0).abs() < 1e-9);
        assert!((k.max_interruption_ms - 40.0).abs() < 1e-9);
    }

    #[test]
    fn infinite_offset_never_hands_over() {
        let tr = flat_trace(&crossing(10, 200));
        let cfg = HandoverConfig {
            a3_offset_db: f64::INFINITY,
            // Interference-free, so the weaker serving link never fails.
            activity_factor: 0.0,
            ..HandoverConfig::default()
        };
        let log = simulate(&tr, &cfg, None).unwrap();
        assert!(log.events.is_empty());
        let k = kpis(&log, &cfg).unwrap();
        assert!(k.degenerate);
        assert_eq!((k.hof_rate, k.rlf_rate, k.pingpong_rate), (0.0, 0.0, 0.0));
    }

    #[test]
    fn oracle_ai_saves_the_ttt() {
        let tr = flat_trace(&crossing(30, 100));
        let base = HandoverConfig {
            ttt_s: 0.04,
            ..HandoverConfig::default()
        };
        let ai = HandoverConfig {
            mode: HoMode::AiOption1,
            ..base.clone()
        };
        let oracle = OracleForecaster { horizon: 4 };
        let t = first(&simulate(&tr, &base, None).unwrap(), EventKind::HoCommand).unwrap();
        let a = first(&simulate(&tr, &ai, Some(&oracle)).unwrap(), EventKind::HoCommand).unwrap();
        assert_eq!((t, a), (34, 30));
        assert!(simulate(&tr, &ai, None).is_err());
    }

    fn rlf_run(sinr: impl Fn(usize) -> f64, n: usize) -> Vec<Event> {
        let cfg = HandoverConfig::default();
        let mut st = UeConnState::new(0, 2, 0.01);
        for t in 0..n {
            detect_rlf(&mut st, &cfg, sinr(t), t);
        }
        st.log
    }

    #[test]
    fn t310_expiry_and_cancel() {
        let log = rlf_run(|_| -9.0, 101);
        assert_eq!(log.iter().filter(|e| e.kind == EventKind::Rlf).count(), 1);
        assert_eq!(log[0].slot, 100);
        let log = rlf_run(|t| if t < 50 { -9.0 } else { -5.0 }, 400);
        assert!(log.is_empty());
        // Crosses below qout and above qin on alternate slots.
        let log = rlf_run(|t| if t % 2 == 0 { -9.0 } else { -5.0 }, 1000);
        assert!(log.is_empty());
        // Between qout and qin the timer keeps running.
        let log = rlf_run(|t| if t == 0 { -9.0 } else { -7.0 }, 101);
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn rlf_recovery_reestablishes_on_strongest() {
        let cfg = HandoverConfig::default();
        let mut st = UeConnState::new(0, 2, 0.01);
        let mut all = Vec::new();
        for t in 0..120 {
            all.extend(step(&mut st, &cfg, &[-80.0, -79.0], None, -20.0, t));
        }
        let kinds: Vec<EventKind> = all.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EventKind::Rlf, EventKind::Reestablish]);
        assert_eq!((all[0].slot, all[1].slot), (100, 110));
        assert_eq!(st.serving, 1);
    }

    #[test]
    fn rlf_during_ttt_is_too_late() {
        let log = HandoverLog {
            slot_duration_s: 0.01,
            n_slots: 100,
            events: vec![
                ev(10, EventKind::A3Start, 0, Some(1)),
                ev(20, EventKind::Rlf, 0, None),
                ev(30, EventKind::Reestablish, 0, Some(1)),
            ],
        };
        let a = classify_hof(&log, &HandoverConfig::default()).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].outcome, Outcome::Failure(HofKind::TooLate));
    }

    #[test]
    fn hand_labelled_fixture() {
        use EventKind::*;
        let (log, want) = labelled_fixture();
        let cfg = HandoverConfig::default();
        let got: Vec<Outcome> = classify_hof(&log, &cfg).unwrap().iter().map(|a| a.outcome).collect();
        assert_eq!(got, want);
        assert_eq!(log.count(HoCommand), log.count(HoSuccess) + log.hof_events());
        let k = kpis(&log, &cfg).unwrap();
        assert_eq!(
            (k.hofs, k.successes, k.too_late, k.too_early, k.wrong_cell),
            (4, 2, 2, 1, 1)
        );
        assert_eq!(k.hof_rate, 4.0 / 6.0);
        assert_eq!(k.rlf_rate, 3.0 / 7.0);
    }

    #[test]
    fn hof_rate_quarter() {
        use EventKind::*;
        let mut events = Vec::new();
        for (i, (s, t)) in [(0, 1), (1, 0), (0, 1)].into_iter().enumerate() {
            events.push(ev(i * 300, HoCommand, s, Some(t)));
            events.push(ev(i * 300 + 9, HoSuccess, s, Some(t)));
        }
        events.push(ev(1000, HoCommand, 1, Some(0)));
        events.push(ev(1003, Hof(HofKind::TooLate), 1, Some(0)));
        events.push(ev(1003, Rlf, 1, None));
        let log = HandoverLog {
            slot_duration_s: 0.01,
            n_slots: 1100,
            events,
        };
        assert_eq!(kpis(&log, &HandoverConfig::default()).unwrap().hof_rate, 0.25);
    }

    #[test]
    fn malformed_logs_are_rejected() {
        let cfg = HandoverConfig::default();
        let dangling = HandoverLog {
            slot_duration_s: 0.01,
            n_slots: 10,
            events: vec![ev(1, EventKind::HoCommand, 0, Some(1))],
        };
        assert!(matches!(classify_hof(&dangling, &cfg), Err(Error::MalformedLog(_))));
        let unordered = HandoverLog {
            slot_duration_s: 0.01,
            n_slots: 10,
            events: vec![
                ev(5, EventKind::Rlf, 0, None),
                ev(1, EventKind::Reestablish, 0, Some(0)),
            ],
        };
        assert!(classify_hof(&unordered, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = HandoverConfig {
            qin_db: -9.0,
            ..HandoverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = HandoverConfig {
            ttt_s: -0.1,
            ..HandoverConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(HandoverConfig::default().validate().is_ok());
        assert_eq!("ai_option1".parse::<HoMode>().unwrap(), HoMode::AiOption1);
    }

    #[test]
    fn pingpong_is_flagged() {
        // Serving alternates in strength every 30 slots.
        let l3: Vec<Vec<f64>> = (0..200)
            .map(|t| {
                if (t / 30) % 2 == 0 {
                    vec![-80.0, -70.0]
                } else {
                    vec![-70.0, -80.0]
                }
            })
            .collect();
        let cfg = HandoverConfig {
            ttt_s: 0.0,
            ..HandoverConfig::default()
        };
        let log = simulate(&flat_trace(&l3), &cfg, None).unwrap();
        let k = kpis(&log, &cfg).unwrap();
        assert!(k.pingpongs > 0);
        assert!(k.pingpong_rate > 0.0 && k.pingpong_rate <= 1.0);
    }

    #[test]
    fn csv_export() {
        let tr = flat_trace(&crossing(30, 100));
        let log = simulate(&tr, &HandoverConfig::default(), None).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,kind,serving,target");
        assert_eq!(lines[1], "0.300,a3_start,0,1");
        assert_eq!(lines[2], "0.460,ho_command,0,1");
        assert_eq!(lines.len(), 1 + log.events.len());
    }

    /// Random-walk L3 for three cells; large steps give frequent crossings.
    fn walk(seed_vals: &[f64], n_cells: usize) -> Vec<Vec<f64>> {
        let mut cur = vec![-80.0; n_cells];
        seed_vals
            .chunks(n_cells)
            .map(|d| {
                for (c, v) in cur.iter_mut().zip(d) {
                    *c = (*c + v).clamp(-120.0, -50.0);
                }
                cur.clone()
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn oracle_ai_never_later(steps in prop::collection::vec(-3.0f64..3.0, 3 * 150)) {
            let tr = flat_trace(&walk(&steps, 3));
            let base = HandoverConfig { t310_s: 0.1, ..HandoverConfig::default() };
            let ai = HandoverConfig { mode: HoMode::AiOption1, ..base.clone() };
            let oracle = OracleForecaster { horizon: 4 };
            let lt = simulate(&tr, &base, None).unwrap();
            let la = simulate(&tr, &ai, Some(&oracle)).unwrap();
            if let Some(t) = first(&lt, EventKind::HoCommand) {
                let a = first(&la, EventKind::HoCommand);
                prop_assert!(a.is_some_and(|a| a <= t), "ai {:?} vs traditional {}", a, t);
            }
        }

        #[test]
        fn log_invariants(steps in prop::collection::vec(-4.0f64..4.0, 3 * 200), t310 in 0usize..30, ttt in 0usize..20) {
            let tr = flat_trace(&walk(&steps, 3));
            let cfg = HandoverConfig { t310_s: t310 as f64 * 0.01, ttt_s: ttt as f64 * 0.01, ..HandoverConfig::default() };
            let log = simulate(&tr, &cfg, None).unwrap();
            prop_assert!(log.events.windows(2).all(|w| w[0].slot <= w[1].slot));
            prop_assert_eq!(log.count(EventKind::HoCommand), log.count(EventKind::HoSuccess) + log.hof_events());
            let k = kpis(&log, &cfg).unwrap();
            for r in [k.hof_rate, k.rlf_rate, k.pingpong_rate] {
                prop_assert!((0.0..=1.0).contains(&r));
            }
            prop_assert_eq!(&log, &simulate(&tr, &cfg, None).unwrap());
        }
    }

    #[test]
    fn longer_ttt_is_never_less_late() {
        // The neighbour overtakes fast while the serving link collapses.
        let l3: Vec<Vec<f64>> = (0..300)
            .map(|t| {
                let x = t as f64;
                vec![-70.0 - 0.3 * x, -100.0 + 0.3 * x]
            })
            .collect();
        let mut last = 0;
        for ttt in [0.0, 0.04, 0.08, 0.16, 0.32, 0.64] {
            let cfg = HandoverConfig {
                ttt_s: ttt,
                t310_s: 0.1,
                ..HandoverConfig::default()
            };
            let k = kpis(&simulate(&flat_trace(&l3), &cfg, None).unwrap(), &cfg).unwrap();
            assert!(k.too_late >= last, "ttt {ttt}: {} < {last}", k.too_late);
            last = k.too_late;
        }
        assert!(last > 0);
    }
}
