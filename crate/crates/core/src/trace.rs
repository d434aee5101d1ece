//! Per-pass measurement traces: what the UE sees on one run along the track.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{cell_codebooks, coeff_rsrp_dbm, slot_coefficients, ChannelRealization};
use crate::error::{Error, Result};
use crate::measurement::{add_measurement_noise, aggregate, l3_update, Aggregation, L3Filter, L3State};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    /// Gaussian L1 measurement error, dB.
    pub noise_sigma_db: f64,
    pub l3_filter: L3Filter,
    pub aggregation: Aggregation,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            noise_sigma_db: 1.0,
            l3_filter: L3Filter::default(),
            aggregation: Aggregation::Max,
        }
    }
}

/// Slot-major arrays for one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub n_slots: usize,
    pub n_cells: usize,
    pub n_beams: usize,
    pub slot_duration_s: f64,
    /// Noiseless best-beam RSRP, `[slot][cell]`, dBm.
    pub best_beam: Vec<f64>,
    /// Noisy L1-RSRP, `[slot][cell][beam]`, dBm.
    pub measured: Vec<f64>,
    /// L3-filtered RSRP from all measured beams, `[slot][cell]`, dBm.
    pub l3: Vec<f64>,
    pub noise_floor_dbm: f64,
}

impl Trace {
    /// Synthetic trace with one beam per cell whose measured, best-beam and
    /// L3 values all equal `l3` (`[slot][cell]`, dBm).
    pub fn from_l3(l3: &[Vec<f64>], slot_duration_s: f64) -> Trace {
        let n_cells = l3.first().map_or(0, Vec::len);
        let flat: Vec<f64> = l3.concat();
        Trace {
            n_slots: l3.len(),
            n_cells,
            n_beams: 1,
            slot_duration_s,
            best_beam: flat.clone(),
            measured: flat.clone(),
            l3: flat,
            noise_floor_dbm: -200.0,
        }
    }

    pub fn best_beam_at(&self, slot: usize) -> &[f64] {
        &self.best_beam[slot * self.n_cells..(slot + 1) * self.n_cells]
    }

    pub fn l3_at(&self, slot: usize) -> &[f64] {
        &self.l3[slot * self.n_cells..(slot + 1) * self.n_cells]
    }

    pub fn measured_at(&self, slot: usize, cell: usize) -> &[f64] {
        let base = (slot * self.n_cells + cell) * self.n_beams;
        &self.measured[base..base + self.n_beams]
    }
}

/// Seed of pass `pass` within a run seeded by `seed` (SplitMix64 step).
pub fn pass_seed(seed: u64, pass: u64) -> u64 {
    let mut z = seed ^ pass.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_trace(s: &Scenario, cfg: &TraceConfig, seed: u64) -> Result<Trace> {
    let books = cell_codebooks(s);
    let n_beams = books.first().map(|b| b.len()).ok_or(Error::Empty("cell list"))?;
    if books.iter().any(|b| b.len() != n_beams) {
        return Err(Error::Config("all cells must use the same codebook size".into()));
    }
    let n_cells = s.n_cells();
    let real = ChannelRealization::new(s, seed);
    let floor = s.config.channel.rsrp_floor_dbm;
    let tx: Vec<f64> = s.cells.iter().map(|&c| s.sector(c).tx_power_dbm).collect();

    let per_slot: Vec<(Vec<f64>, Vec<f64>)> = (0..s.n_slots)
        .into_par_iter()
        .map(|slot| -> Result<(Vec<f64>, Vec<f64>)> {
            let coeffs = slot_coefficients(s, &real, &books, slot)?;
            let mut rng = ChaCha8Rng::seed_from_u64(pass_seed(seed, slot as u64 + (1 << 32)));
            let mut best = Vec::with_capacity(n_cells);
            let mut meas = Vec::with_capacity(n_cells * n_beams);
            for (c, row) in coeffs.iter().enumerate() {
                let mut r: Vec<f64> = row.iter().map(|&h| coeff_rsrp_dbm(h, tx[c], floor)).collect();
                best.push(r.iter().copied().fold(f64::NEG_INFINITY, f64::max));
                add_measurement_noise(&mut r, cfg.noise_sigma_db, &mut rng);
                meas.extend(r);
            }
            Ok((best, meas))
        })
        .collect::<Result<_>>()?;

    let mut state = L3State::new(n_cells, cfg.l3_filter, cfg.aggregation);
    let mut trace = Trace {
        n_slots: s.n_slots,
        n_cells,
        n_beams,
        slot_duration_s: s.slot_duration_s,
        best_beam: Vec::with_capacity(s.n_slots * n_cells),
        measured: Vec::with_capacity(s.n_slots * n_cells * n_beams),
        l3: Vec::with_capacity(s.n_slots * n_cells),
        noise_floor_dbm: s.noise_floor_dbm,
    };
    for (best, meas) in per_slot {
        let cells: Vec<Vec<f64>> = meas.chunks(n_beams).map(|c| c.to_vec()).collect();
        l3_update(&mut state, &cells)?;
        trace.l3.extend(state.values(floor));
        trace.best_beam.extend(best);
        trace.measured.extend(meas);
    }
    Ok(trace)
}

/// Instantaneous cell-level RSRP from one slot's beams (no filtering).
pub fn cell_level(beams: &[f64], mode: Aggregation) -> f64 {
    aggregate(beams, mode).unwrap_or(f64::NEG_INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_scenario, ScenarioConfig};

    fn small() -> Scenario {
        let mut c = ScenarioConfig::default();
        c.layout.n_bs = 2;
        c.layout.array_rows = 2;
        c.layout.array_cols = 2;
        c.n_slots = Some(40);
        c.ue_speed_kmh = 360.0;
        build_scenario(&c).unwrap()
    }

    #[test]
    fn trace_shapes_and_determinism() {
        let s = small();
        let cfg = TraceConfig::default();
        let a = generate_trace(&s, &cfg, 5).unwrap();
        let b = generate_trace(&s, &cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.best_beam.len(), 40 * 6);
        assert_eq!(a.measured.len(), 40 * 6 * 4);
        assert_eq!(a.l3.len(), 40 * 6);
        assert_ne!(a, generate_trace(&s, &cfg, 6).unwrap());
    }

    #[test]
    fn noiseless_first_l3_is_best_beam() {
        let s = small();
        let cfg = TraceConfig {
            noise_sigma_db: 0.0,
            ..TraceConfig::default()
        };
        let t = generate_trace(&s, &cfg, 1).unwrap();
        assert_eq!(t.l3_at(0), t.best_beam_at(0));
        for c in 0..t.n_cells {
            let m = t.measured_at(3, c).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(m, t.best_beam_at(3)[c]);
        }
    }

    #[test]
    fn pass_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..100).map(|p| pass_seed(7, p)).collect();
        assert_eq!(seeds.len(), 100);
    }
}
