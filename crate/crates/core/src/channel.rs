//! Geometric multipath channel: one LoS path plus a few fixed point
//! scatterers per cell, a log-distance path-loss law, a sector element
//! pattern, and optional slow log-normal shadowing. Produces beam-domain
//! coefficients and L1-RSRP for every (slot, cell, beam).

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{dft_codebook_with_spacing, Codebook};
use crate::error::{Error, Result};
use crate::scenario::{distance, Point3, Scenario, Sector};

/// Planar-array steering vector. Element `(r, c)` sits at index `r * cols + c`;
/// rows run along the horizontal (azimuth) axis, columns along the vertical.
pub fn array_response(rows: usize, cols: usize, spacing: f64, azimuth_deg: f64, elevation_deg: f64) -> Vec<Complex64> {
    let az = azimuth_deg.to_radians();
    let el = elevation_deg.to_radians();
    let u = az.sin() * el.cos();
    let v = el.sin();
    let k = 2.0 * PI * spacing;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(Complex64::from_polar(1.0, k * (r as f64 * u + c as f64 * v)));
        }
    }
    out
}

/// Log-distance LoS path loss, dB: `28 + 22 log10(d) + 20 log10(f_GHz)`.
pub fn path_loss_db(distance_m: f64, freq_ghz: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::Config(format!("path loss needs distance > 0, got {distance_m}")));
    }
    Ok(28.0 + 22.0 * distance_m.log10() + 20.0 * freq_ghz.log10())
}

/// Sector antenna element gain, dBi, for sector-local angles.
pub fn element_gain_db(azimuth_deg: f64, elevation_deg: f64) -> f64 {
    let a_h = -(12.0 * (azimuth_deg / 65.0).powi(2)).min(30.0);
    let a_v = -(12.0 * (elevation_deg / 65.0).powi(2)).min(30.0);
    8.0 - (-(a_h + a_v)).min(30.0)
}

/// Wraps an angle into `[-180, 180)`.
pub fn wrap_deg(a: f64) -> f64 {
    (a + 180.0).rem_euclid(360.0) - 180.0
}

/// Sector-local (azimuth, elevation) of the direction `from -> to`, degrees.
pub fn local_angles(from: &Point3, to: &Point3, boresight_deg: f64) -> (f64, f64) {
    let dx = to[0] - from[0];
    let dy = to[1] - from[1];
    let dz = to[2] - from[2];
    let horiz = (dx * dx + dy * dy).sqrt();
    let az = dy.atan2(dx).to_degrees();
    let el = dz.atan2(horiz).to_degrees();
    (wrap_deg(az - boresight_deg), el)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    /// Complex amplitude including path loss, element gain and shadowing
    /// (transmit power excluded).
    pub gain: Complex64,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub los: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub paths: Vec<Path>,
    pub los: bool,
}

impl PathSet {
    pub fn empty() -> Self {
        PathSet {
            paths: Vec::new(),
            los: false,
        }
    }
}

/// Spatially correlated log-normal shadowing along the track (AR(1) on a 1 m grid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowingProfile {
    values_db: Vec<f64>,
}

impl ShadowingProfile {
    pub fn generate(length_m: f64, sigma_db: f64, corr_m: f64, rng: &mut impl Rng) -> Self {
        let n = length_m.max(0.0).ceil() as usize + 2;
        let rho = (-1.0 / corr_m.max(1e-9)).exp();
        let innov = (1.0 - rho * rho).sqrt();
        let mut values_db = Vec::with_capacity(n);
        let mut s: f64 = rng.sample::<f64, _>(StandardNormal) * sigma_db;
        for _ in 0..n {
            values_db.push(s);
            s = rho * s + innov * sigma_db * rng.sample::<f64, _>(StandardNormal);
        }
        ShadowingProfile { values_db }
    }

    pub fn at(&self, d: f64) -> f64 {
        let d = d.max(0.0);
        let i = d.floor() as usize;
        if i + 1 >= self.values_db.len() {
            return *self.values_db.last().unwrap_or(&0.0);
        }
        let f = d - i as f64;
        self.values_db[i] * (1.0 - f) + self.values_db[i + 1] * f
    }
}

/// Per-pass random state: one shadowing profile and one scatterer phase
/// offset set per cell. A pure function of (scenario, pass seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub pass_seed: u64,
    pub shadowing: Option<Vec<ShadowingProfile>>,
    pub phase_offsets: Vec<Vec<f64>>,
}

impl ChannelRealization {
    pub fn new(s: &Scenario, pass_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ pass_seed);
        let ch = &s.config.channel;
        let shadowing = ch.shadowing.then(|| {
            (0..s.n_cells())
                .map(|_| {
                    ShadowingProfile::generate(
                        s.track_length_m + 1.0,
                        ch.shadowing_sigma_db,
                        ch.shadowing_corr_m,
                        &mut rng,
                    )
                })
                .collect()
        });
        let phase_offsets = s
            .scatterers
            .iter()
            .map(|sc| sc.iter().map(|_| rng.gen_range(0.0..2.0 * PI)).collect())
            .collect();
        ChannelRealization {
            pass_seed,
            shadowing,
            phase_offsets,
        }
    }

    /// Deterministic realization without shadowing or phase randomisation.
    pub fn fixed(s: &Scenario) -> Self {
        ChannelRealization {
            pass_seed: 0,
            shadowing: None,
            phase_offsets: s.scatterers.iter().map(|sc| vec![0.0; sc.len()]).collect(),
        }
    }
}

/// Propagation paths from cell `cell` (flat index) to the UE at `slot`.
pub fn synthesize_paths(s: &Scenario, real: &ChannelRealization, cell: usize, slot: usize) -> Result<PathSet> {
    let ue = s.ue_position(slot)?;
    synthesize_paths_at(s, real, cell, &ue)
}

pub fn synthesize_paths_at(s: &Scenario, real: &ChannelRealization, cell: usize, ue: &Point3) -> Result<PathSet> {
    let id = *s.cells.get(cell).ok_or(Error::IndexOutOfRange {
        index: cell,
        len: s.n_cells(),
    })?;
    let bs = &s.bs_list[id.bs];
    let sector = &bs.sectors[id.sector];
    let d_los = distance(&bs.position, ue).max(1e-3);
    if let Some(r) = s.config.channel.max_range_m {
        if d_los > r {
            return Ok(PathSet::empty());
        }
    }
    let lambda = s.wavelength_m();
    let f = s.carrier_freq_ghz;
    let shadow = real
        .shadowing
        .as_ref()
        .map(|p| p[cell].at(ue[0] - s.track_start[0]))
        .unwrap_or(0.0);

    let mut paths = Vec::with_capacity(1 + s.scatterers[cell].len());
    let (az, el) = local_angles(&bs.position, ue, sector.boresight_deg);
    let g_db = -path_loss_db(d_los, f)? + element_gain_db(az, el) + shadow;
    paths.push(Path {
        gain: Complex64::from_polar(10f64.powf(g_db / 20.0), -2.0 * PI * d_los / lambda),
        azimuth_deg: az,
        elevation_deg: el,
        los: true,
    });
    for (k, sc) in s.scatterers[cell].iter().enumerate() {
        let len = distance(&bs.position, &sc.position) + distance(&sc.position, ue);
        let (az, el) = local_angles(&bs.position, &sc.position, sector.boresight_deg);
        let g_db = -path_loss_db(len.max(1e-3), f)? - sc.below_los_db + element_gain_db(az, el) + shadow;
        let phase = -2.0 * PI * len / lambda + sc.phase_rad + real.phase_offsets[cell][k];
        paths.push(Path {
            gain: Complex64::from_polar(10f64.powf(g_db / 20.0), phase),
            azimuth_deg: az,
            elevation_deg: el,
            los: false,
        });
    }
    Ok(PathSet { paths, los: true })
}

/// Beam-domain coefficients `h_b = <w_b, sum_p g_p a(angles_p)>`.
pub fn beam_coefficients(paths: &PathSet, codebook: &Codebook) -> Vec<Complex64> {
    let n = codebook.rows * codebook.cols;
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for p in &paths.paths {
        let a = array_response(
            codebook.rows,
            codebook.cols,
            codebook.spacing,
            p.azimuth_deg,
            p.elevation_deg,
        );
        for (xi, ai) in x.iter_mut().zip(&a) {
            *xi += p.gain * ai;
        }
    }
    codebook
        .beams
        .iter()
        .map(|w| w.iter().zip(&x).map(|(wi, xi)| wi.conj() * xi).sum())
        .collect()
}

/// Received power of one coefficient, dBm, clamped at `floor_dbm`.
#[inline]
pub fn coeff_rsrp_dbm(c: Complex64, tx_power_dbm: f64, floor_dbm: f64) -> f64 {
    let p = c.norm_sqr();
    if p > 0.0 {
        (tx_power_dbm + 10.0 * p.log10()).max(floor_dbm)
    } else {
        floor_dbm
    }
}

/// Per-beam L1-RSRP, dBm. An empty path set yields `floor_dbm` everywhere.
pub fn beam_rsrp(paths: &PathSet, codebook: &Codebook, tx_power_dbm: f64, floor_dbm: f64) -> Vec<f64> {
    if paths.paths.is_empty() {
        return vec![floor_dbm; codebook.len()];
    }
    beam_coefficients(paths, codebook)
        .into_iter()
        .map(|c| coeff_rsrp_dbm(c, tx_power_dbm, floor_dbm))
        .collect()
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// SINR in dB from dBm quantities, computed in the linear domain.
pub fn sinr_db(serving_dbm: f64, interferers_dbm: &[f64], noise_floor_dbm: f64) -> f64 {
    let i: f64 = interferers_dbm.iter().map(|&x| dbm_to_mw(x)).sum();
    mw_to_dbm(dbm_to_mw(serving_dbm)) - mw_to_dbm(i + dbm_to_mw(noise_floor_dbm))
}

/// Codebook for a sector according to the scenario's layout switches.
pub fn sector_codebook(s: &Scenario, sector: &Sector) -> Codebook {
    dft_codebook_with_spacing(sector.rows, sector.cols, s.config.layout.oversampling, sector.spacing)
}

/// One codebook per flat cell index.
pub fn cell_codebooks(s: &Scenario) -> Vec<Codebook> {
    s.cells.iter().map(|&c| sector_codebook(s, s.sector(c))).collect()
}

/// Beam coefficients of every cell at the UE position of `slot`.
pub fn slot_coefficients(
    s: &Scenario,
    real: &ChannelRealization,
    codebooks: &[Codebook],
    slot: usize,
) -> Result<Vec<Vec<Complex64>>> {
    let ue = s.ue_position(slot)?;
    (0..s.n_cells())
        .map(|c| {
            let ps = synthesize_paths_at(s, real, c, &ue)?;
            Ok(if ps.paths.is_empty() {
                vec![Complex64::new(0.0, 0.0); codebooks[c].len()]
            } else {
                beam_coefficients(&ps, &codebooks[c])
            })
        })
        .collect()
}

/// L1-RSRP of every cell and beam at `slot`.
pub fn slot_rsrp(
    s: &Scenario,
    real: &ChannelRealization,
    codebooks: &[Codebook],
    slot: usize,
) -> Result<Vec<Vec<f64>>> {
    let floor = s.config.channel.rsrp_floor_dbm;
    Ok(slot_coefficients(s, real, codebooks, slot)?
        .into_iter()
        .enumerate()
        .map(|(c, h)| {
            let tx = s.sector(s.cells[c]).tx_power_dbm;
            h.into_iter().map(|x| coeff_rsrp_dbm(x, tx, floor)).collect()
        })
        .collect())
}

/// Full L1-RSRP tensor `[n_slots x n_cells x n_beams]` (row-major). All cells
/// must share a codebook size. Slots are generated in parallel and merged by
/// index, so the result does not depend on the worker count.
pub fn rsrp_tensor(s: &Scenario, real: &ChannelRealization) -> Result<(Vec<f64>, [usize; 3])> {
    let codebooks = cell_codebooks(s);
    let n_beams = codebooks[0].len();
    if codebooks.iter().any(|c| c.len() != n_beams) {
        return Err(Error::Config(
            "rsrp tensor needs equal codebook sizes across cells".into(),
        ));
    }
    let per_slot: Vec<Vec<f64>> = (0..s.n_slots)
        .into_par_iter()
        .map(|t| slot_rsrp(s, real, &codebooks, t).map(|v| v.concat()))
        .collect::<Result<_>>()?;
    Ok((per_slot.concat(), [s.n_slots, s.n_cells(), n_beams]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::dft_codebook;
    use crate::scenario::{build_scenario, ScenarioConfig};

    #[test]
    fn array_response_examples() {
        let a = array_response(1, 1, 0.5, 37.0, -12.0);
        assert_eq!(a.len(), 1);
        assert!((a[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);

        let a = array_response(2, 1, 0.5, 0.0, 0.0);
        for x in &a {
            assert!((x - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }

        // Oracle: phase 2*pi*0.5*sin(30deg)*k = pi/2*k evaluated directly.
        let a = array_response(4, 1, 0.5, 30.0, 0.0);
        for (k, x) in a.iter().enumerate() {
            let want = Complex64::new(0.0, std::f64::consts::FRAC_PI_2 * k as f64).exp();
            assert!((x - want).norm() < 1e-12);
            assert!((x.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn path_loss_examples() {
        let want = 28.0 + 20.0 * 30f64.log10();
        assert!((path_loss_db(1.0, 30.0).unwrap() - want).abs() < 1e-12);
        assert!((want - 57.5424).abs() < 1e-3);
        let d = path_loss_db(100.0, 30.0).unwrap() - path_loss_db(10.0, 30.0).unwrap();
        assert!((d - 22.0).abs() < 1e-12);
        let d = path_loss_db(80.0, 30.0).unwrap() - path_loss_db(40.0, 30.0).unwrap();
        assert!((d - 6.6227).abs() < 1e-3);
        assert!(path_loss_db(0.0, 30.0).is_err());
        assert!(path_loss_db(-3.0, 30.0).is_err());
    }

    #[test]
    fn sinr_examples() {
        assert!((sinr_db(-80.0, &[], -94.0) - 14.0).abs() < 1e-12);
        assert!(sinr_db(-80.0, &[-80.0], -200.0).abs() < 1e-6);
        assert!(sinr_db(-80.0, &[], -80.0).abs() < 1e-12);
    }

    fn single_cell(n_nlos: usize) -> Scenario {
        let mut c = ScenarioConfig::default();
        c.layout.n_bs = 1;
        c.layout.sector_azimuths_deg = vec![-90.0];
        c.channel.n_nlos = n_nlos;
        build_scenario(&c).unwrap()
    }

    #[test]
    fn los_only_gain_is_reference_minus_path_loss() {
        let s = single_cell(0);
        let real = ChannelRealization::fixed(&s);
        let ps = synthesize_paths(&s, &real, 0, 5).unwrap();
        assert_eq!(ps.paths.len(), 1);
        assert!(ps.paths[0].los && ps.los);
        let ue = s.ue_position(5).unwrap();
        let bs = s.bs_list[0].position;
        let (az, el) = local_angles(&bs, &ue, -90.0);
        let want = -path_loss_db(distance(&bs, &ue), 30.0).unwrap() + element_gain_db(az, el);
        assert!((20.0 * ps.paths[0].gain.norm().log10() - want).abs() < 1e-9);
    }

    #[test]
    fn paths_are_deterministic() {
        let s = single_cell(3);
        let r1 = ChannelRealization::new(&s, 11);
        let r2 = ChannelRealization::new(&s, 11);
        assert_eq!(
            synthesize_paths(&s, &r1, 0, 40).unwrap(),
            synthesize_paths(&s, &r2, 0, 40).unwrap()
        );
        assert_eq!(synthesize_paths(&s, &r1, 0, 40).unwrap().paths.len(), 4);
    }

    #[test]
    fn los_azimuth_follows_geometry() {
        let mut c = ScenarioConfig::default().with_speed(350.0);
        c.layout.n_bs = 1;
        c.layout.sector_azimuths_deg = vec![-90.0];
        let s = build_scenario(&c).unwrap();
        let real = ChannelRealization::fixed(&s);
        let bs = s.bs_list[0].position;
        for k in [10usize, 50, 90] {
            let a = synthesize_paths(&s, &real, 0, k).unwrap().paths[0].azimuth_deg;
            let b = synthesize_paths(&s, &real, 0, k + 1).unwrap().paths[0].azimuth_deg;
            // Independent geometry: UE x advances by v*dt along the x-axis.
            let step = 350.0 / 3.6 * 0.01;
            let x0 = step * k as f64 - bs[0];
            let x1 = step * (k + 1) as f64 - bs[0];
            let y = -bs[1];
            let az0 = y.atan2(x0).to_degrees() + 90.0;
            let az1 = y.atan2(x1).to_degrees() + 90.0;
            assert!(((b - a) - (az1 - az0)).abs() < 1e-9);
        }
    }

    #[test]
    fn los_on_beam_direction_picks_that_beam() {
        let cb = dft_codebook(8, 8, 1);
        for b in [0usize, 9, 18, 27, 50] {
            let lab = cb.labels[b];
            if lab.u.abs() >= lab.elevation_deg.to_radians().cos() {
                continue;
            }
            let ps = PathSet {
                paths: vec![Path {
                    gain: Complex64::new(1e-5, 0.0),
                    azimuth_deg: lab.azimuth_deg,
                    elevation_deg: lab.elevation_deg,
                    los: true,
                }],
                los: true,
            };
            let r = beam_rsrp(&ps, &cb, 30.0, -160.0);
            // Brute-force inner products.
            let a = array_response(8, 8, 0.5, lab.azimuth_deg, lab.elevation_deg);
            let brute: Vec<f64> = cb
                .beams
                .iter()
                .map(|w| w.iter().zip(&a).map(|(x, y)| x.conj() * y).sum::<Complex64>().norm())
                .collect();
            assert_eq!(argmax(&r), b);
            assert_eq!(argmax(&brute), b);
        }
    }

    fn argmax(v: &[f64]) -> usize {
        let mut best = 0;
        for (i, &x) in v.iter().enumerate() {
            if x > v[best] {
                best = i;
            }
        }
        best
    }

    #[test]
    fn empty_paths_give_floor() {
        let cb = dft_codebook(4, 4, 1);
        let r = beam_rsrp(&PathSet::empty(), &cb, 30.0, -160.0);
        assert!(r.iter().all(|&x| x == -160.0));
        assert_eq!(r.len(), 16);
    }

    #[test]
    fn tx_power_shift_preserves_argmax() {
        let s = single_cell(3);
        let real = ChannelRealization::new(&s, 2);
        let cb = dft_codebook(8, 8, 1);
        for slot in [3usize, 70, 200] {
            let ps = synthesize_paths(&s, &real, 0, slot).unwrap();
            let a = beam_rsrp(&ps, &cb, 30.0, -300.0);
            let b = beam_rsrp(&ps, &cb, 33.0, -300.0);
            assert_eq!(argmax(&a), argmax(&b));
            for (x, y) in a.iter().zip(&b) {
                assert!((y - x - 3.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn best_beam_tracks_true_azimuth_los_only() {
        // Fine (oversampled) horizontal codebook, LoS only.
        let s = single_cell(0);
        let real = ChannelRealization::fixed(&s);
        let cb = dft_codebook_with_spacing(16, 1, 4, 0.5);
        let beamwidth = (2.0f64 / 16.0).asin().to_degrees() * 2.0;
        let bs = s.bs_list[0].position;
        let slots = s.slots_near(bs[0], 40.0);
        let stride = (slots.len() / 10).max(1);
        let mut checked = 0;
        for slot in slots.step_by(stride) {
            let ps = synthesize_paths(&s, &real, 0, slot).unwrap();
            let los = &ps.paths[0];
            let ps_flat = PathSet {
                paths: vec![Path {
                    elevation_deg: 0.0,
                    ..los.clone()
                }],
                los: true,
            };
            let r = beam_rsrp(&ps_flat, &cb, 0.0, -300.0);
            let b = argmax(&r);
            assert!(
                (cb.labels[b].azimuth_deg - los.azimuth_deg).abs() <= beamwidth,
                "slot {slot}"
            );
            checked += 1;
        }
        assert!(checked >= 8);
    }

    #[test]
    fn best_beam_moves_smoothly() {
        // Bound: at 500 km/h the LoS azimuth moves by at most
        // v*dt / d_min rad per slot; with d_min = 30 m and beam spacing
        // ~ 2/8 in u-space this is under one beam step, so allow one row and
        // one column step.
        let mut c = ScenarioConfig::default().with_speed(500.0);
        c.layout.n_bs = 1;
        c.layout.sector_azimuths_deg = vec![-90.0];
        c.channel.n_nlos = 0;
        let s = build_scenario(&c).unwrap();
        let real = ChannelRealization::fixed(&s);
        let cb = dft_codebook(8, 8, 1);
        let bs = s.bs_list[0].position;
        let mut prev: Option<usize> = None;
        for slot in s.slots_near(bs[0], 50.0) {
            let r = beam_rsrp(&synthesize_paths(&s, &real, 0, slot).unwrap(), &cb, 30.0, -300.0);
            let b = argmax(&r);
            if let Some(p) = prev {
                let (pr, pc) = (p / 8, p % 8);
                let (br, bc) = (b / 8, b % 8);
                let dr = (pr as i64 - br as i64)
                    .rem_euclid(8)
                    .min((br as i64 - pr as i64).rem_euclid(8));
                let dc = (pc as i64 - bc as i64)
                    .rem_euclid(8)
                    .min((bc as i64 - pc as i64).rem_euclid(8));
                assert!(dr <= 1 && dc <= 1, "slot {slot}: {p} -> {b}");
            }
            prev = Some(b);
        }
    }

    #[test]
    fn rsrp_tensor_is_reproducible() {
        let mut c = ScenarioConfig::default();
        c.layout.n_bs = 2;
        c.layout.array_rows = 4;
        c.layout.array_cols = 2;
        c.n_slots = Some(50);
        c.channel.shadowing = true;
        let s = build_scenario(&c).unwrap();
        let (a, shape) = rsrp_tensor(&s, &ChannelRealization::new(&s, 5)).unwrap();
        let (b, _) = rsrp_tensor(&s, &ChannelRealization::new(&s, 5)).unwrap();
        assert_eq!(shape, [50, 6, 8]);
        assert_eq!(a.len(), 50 * 6 * 8);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn shadowing_has_configured_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ShadowingProfile::generate(200_000.0, 4.0, 50.0, &mut rng);
        let n = p.values_db.len() as f64;
        let mean = p.values_db.iter().sum::<f64>() / n;
        let var = p.values_db.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() - 4.0).abs() < 0.4, "std {}", var.sqrt());
        // Correlation at 50 m lag ~ exp(-1).
        let lag = 50;
        let c: f64 = p
            .values_db
            .windows(lag + 1)
            .map(|w| (w[0] - mean) * (w[lag] - mean))
            .sum::<f64>()
            / (n - lag as f64)
            / var;
        assert!((c - (-1f64).exp()).abs() < 0.1, "corr {c}");
    }
}
