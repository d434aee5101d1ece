//! Physical world: a straight rail track along the x-axis, base stations with
//! sectorised planar arrays placed alternately on either side of it, and the
//! slot clock every other module runs on.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Speeds used by the default experiment sweeps, km/h.
pub const DEFAULT_SPEEDS_KMH: [f64; 4] = [60.0, 120.0, 350.0, 500.0];

fn default_speed() -> f64 {
    350.0
}
fn default_slot() -> f64 {
    0.01
}
fn default_noise() -> f64 {
    -90.0
}
fn default_freq() -> f64 {
    30.0
}
fn default_ue_height() -> f64 {
    1.5
}
fn default_n_bs() -> usize {
    7
}
fn default_isd() -> f64 {
    200.0
}
fn default_lateral() -> f64 {
    30.0
}
fn default_bs_height() -> f64 {
    25.0
}
fn default_sector_az() -> Vec<f64> {
    vec![30.0, 150.0, -90.0]
}
fn default_tx_power() -> f64 {
    30.0
}
fn default_rows() -> usize {
    8
}
fn default_spacing() -> f64 {
    0.5
}
fn default_one() -> usize {
    1
}
fn default_n_nlos() -> usize {
    3
}
fn default_nlos_db() -> [f64; 2] {
    [10.0, 20.0]
}
fn default_shadow_sigma() -> f64 {
    4.0
}
fn default_shadow_corr() -> f64 {
    50.0
}
fn default_floor() -> f64 {
    -160.0
}
fn default_scatter_spread() -> f64 {
    40.0
}

/// Resolved configuration of the physical scenario. This is the `[scenario]`
/// table of a config file; every key has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_speed")]
    pub ue_speed_kmh: f64,
    #[serde(default = "default_slot")]
    pub slot_duration_s: f64,
    /// Defaults to the largest slot count that keeps the UE on the track.
    #[serde(default)]
    pub n_slots: Option<usize>,
    /// Defaults to `n_bs * isd_m`.
    #[serde(default)]
    pub track_length_m: Option<f64>,
    #[serde(default = "default_noise")]
    pub noise_floor_dbm: f64,
    #[serde(default = "default_freq")]
    pub carrier_freq_ghz: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ue_height")]
    pub ue_height_m: f64,
    #[serde(default)]
    pub layout: LayoutConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    #[serde(default = "default_n_bs")]
    pub n_bs: usize,
    #[serde(default = "default_isd")]
    pub isd_m: f64,
    #[serde(default = "default_lateral")]
    pub lateral_offset_m: f64,
    #[serde(default = "default_bs_height")]
    pub bs_height_m: f64,
    #[serde(default = "default_sector_az")]
    pub sector_azimuths_deg: Vec<f64>,
    #[serde(default = "default_tx_power")]
    pub tx_power_dbm: f64,
    #[serde(default = "default_rows")]
    pub array_rows: usize,
    #[serde(default = "default_rows")]
    pub array_cols: usize,
    #[serde(default = "default_spacing")]
    pub element_spacing: f64,
    #[serde(default = "default_one")]
    pub oversampling: usize,
    /// Use the 2x2-aggregated wide-beam codebook as Set B.
    #[serde(default)]
    pub wide_beam: bool,
    /// Explicit base stations; overrides the generated layout when non-empty.
    #[serde(default)]
    pub base_stations: Vec<BaseStation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    #[serde(default = "default_n_nlos")]
    pub n_nlos: usize,
    /// NLoS power below the LoS path-loss reference, dB, drawn uniformly.
    #[serde(default = "default_nlos_db")]
    pub nlos_below_los_db: [f64; 2],
    #[serde(default)]
    pub shadowing: bool,
    #[serde(default = "default_shadow_sigma")]
    pub shadowing_sigma_db: f64,
    #[serde(default = "default_shadow_corr")]
    pub shadowing_corr_m: f64,
    #[serde(default = "default_floor")]
    pub rsrp_floor_dbm: f64,
    /// Cells farther than this from the UE produce no paths.
    #[serde(default)]
    pub max_range_m: Option<f64>,
    /// Lateral half-width of the scatterer placement region, m.
    #[serde(default = "default_scatter_spread")]
    pub scatterer_spread_m: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

impl Default for LayoutConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

impl Default for ChannelConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sector {
    pub boresight_deg: f64,
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
    pub tx_power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseStation {
    pub position: Point3,
    pub sectors: Vec<Sector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId {
    pub bs: usize,
    pub sector: usize,
}

/// A fixed point scatterer attached to one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: Point3,
    /// Excess loss relative to the LoS path-loss reference, dB.
    pub below_los_db: f64,
    pub phase_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub track_length_m: f64,
    pub ue_speed_kmh: f64,
    pub slot_duration_s: f64,
    pub n_slots: usize,
    pub bs_list: Vec<BaseStation>,
    pub noise_floor_dbm: f64,
    pub carrier_freq_ghz: f64,
    pub seed: u64,
    pub track_start: Point3,
    pub track_direction: Point3,
    /// Flat cell list, ordered by (bs, sector).
    pub cells: Vec<CellId>,
    /// Scatterers per flat cell index.
    pub scatterers: Vec<Vec<Scatterer>>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn with_speed(&self, speed_kmh: f64) -> Self {
        let mut c = self.clone();
        c.ue_speed_kmh = speed_kmh;
        c
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

pub fn speed_mps(speed_kmh: f64) -> f64 {
    speed_kmh / 3.6
}

/// Builds the scenario; a pure function of the config (including its seed).
pub fn build_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    use rand::{Rng, SeedableRng};

    if !(config.slot_duration_s > 0.0) || !config.slot_duration_s.is_finite() {
        return Err(Error::Config(format!(
            "slot_duration_s must be positive, got {}",
            config.slot_duration_s
        )));
    }
    if !(config.ue_speed_kmh > 0.0) || !config.ue_speed_kmh.is_finite() {
        return Err(Error::Config(format!(
            "ue_speed_kmh must be positive, got {}",
            config.ue_speed_kmh
        )));
    }
    let layout = &config.layout;
    let bs_list: Vec<BaseStation> = if layout.base_stations.is_empty() {
        if layout.n_bs == 0 {
            return Err(Error::Config("layout needs at least one base station".into()));
        }
        if layout.sector_azimuths_deg.is_empty() {
            return Err(Error::Config("layout needs at least one sector".into()));
        }
        (0..layout.n_bs)
            .map(|i| {
                let side = if i % 2 == 0 { 1.0 } else { -1.0 };
                BaseStation {
                    position: [
                        layout.isd_m * (i as f64 + 0.5),
                        side * layout.lateral_offset_m,
                        layout.bs_height_m,
                    ],
                    sectors: layout
                        .sector_azimuths_deg
                        .iter()
                        .map(|&az| Sector {
                            boresight_deg: az,
                            rows: layout.array_rows,
                            cols: layout.array_cols,
                            spacing: layout.element_spacing,
                            tx_power_dbm: layout.tx_power_dbm,
                        })
                        .collect(),
                }
            })
            .collect()
    } else {
        layout.base_stations.clone()
    };
    if bs_list.iter().any(|b| b.sectors.is_empty()) {
        return Err(Error::Config("every base station needs at least one sector".into()));
    }
    for bs in &bs_list {
        if bs.position.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("base station position must be finite".into()));
        }
        for s in &bs.sectors {
            if s.rows == 0 || s.cols == 0 {
                return Err(Error::Config("sector array needs rows, cols >= 1".into()));
            }
        }
    }

    let track_length_m = config.track_length_m.unwrap_or(layout.isd_m * bs_list.len() as f64);
    if !(track_length_m > 0.0) {
        return Err(Error::Config("track length must be positive".into()));
    }
    let step = speed_mps(config.ue_speed_kmh) * config.slot_duration_s;
    let max_slots = (track_length_m / step + 1e-9).floor() as usize;
    let n_slots = match config.n_slots {
        Some(n) if n > max_slots => {
            return Err(Error::Config(format!(
                "{n} slots at {} km/h leave the {track_length_m} m track (max {max_slots})",
                config.ue_speed_kmh
            )))
        }
        Some(0) => return Err(Error::Config("n_slots must be >= 1".into())),
        Some(n) => n,
        None => max_slots,
    };

    let cells: Vec<CellId> = bs_list
        .iter()
        .enumerate()
        .flat_map(|(b, bs)| (0..bs.sectors.len()).map(move |s| CellId { bs: b, sector: s }))
        .collect();

    // Scatterers sit near the track around their base station so the
    // multipath geometry changes smoothly as the UE passes.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed ^ 0x5CA7_7E25);
    let ch = &config.channel;
    let (lo, hi) = (
        ch.nlos_below_los_db[0].min(ch.nlos_below_los_db[1]),
        ch.nlos_below_los_db[0].max(ch.nlos_below_los_db[1]),
    );
    let scatterers = cells
        .iter()
        .map(|cell| {
            let p = bs_list[cell.bs].position;
            (0..ch.n_nlos)
                .map(|_| Scatterer {
                    position: [
                        p[0] + rng.gen_range(-1.0..1.0) * layout.isd_m.max(1.0),
                        rng.gen_range(-1.0..1.0) * ch.scatterer_spread_m,
                        rng.gen_range(0.0..15.0),
                    ],
                    below_los_db: if hi > lo { rng.gen_range(lo..hi) } else { lo },
                    phase_rad: rng.gen_range(0.0..std::f64::consts::TAU),
                })
                .collect()
        })
        .collect();

    Ok(Scenario {
        config: config.clone(),
        track_length_m,
        ue_speed_kmh: config.ue_speed_kmh,
        slot_duration_s: config.slot_duration_s,
        n_slots,
        bs_list,
        noise_floor_dbm: config.noise_floor_dbm,
        carrier_freq_ghz: config.carrier_freq_ghz,
        seed: config.seed,
        track_start: [0.0, 0.0, config.ue_height_m],
        track_direction: [1.0, 0.0, 0.0],
        cells,
        scatterers,
    })
}

impl Scenario {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn sector(&self, cell: CellId) -> &Sector {
        &self.bs_list[cell.bs].sectors[cell.sector]
    }

    pub fn cell_index(&self, cell: CellId) -> Option<usize> {
        self.cells.iter().position(|c| *c == cell)
    }

    pub fn speed_mps(&self) -> f64 {
        speed_mps(self.ue_speed_kmh)
    }

    pub fn step_m(&self) -> f64 {
        self.speed_mps() * self.slot_duration_s
    }

    pub fn wavelength_m(&self) -> f64 {
        0.299_792_458 / self.carrier_freq_ghz
    }

    /// UE position at `slot`.
    pub fn ue_position(&self, slot: usize) -> Result<Point3> {
        if slot >= self.n_slots {
            return Err(Error::SlotOutOfRange {
                slot,
                n_slots: self.n_slots,
            });
        }
        Ok(self.position_at_distance(self.step_m() * slot as f64))
    }

    pub fn position_at_distance(&self, d: f64) -> Point3 {
        let s = self.track_start;
        let u = self.track_direction;
        [s[0] + u[0] * d, s[1] + u[1] * d, s[2] + u[2] * d]
    }

    /// Slots whose UE x-coordinate lies within `half_len` of `x_center`.
    pub fn slots_near(&self, x_center: f64, half_len: f64) -> std::ops::Range<usize> {
        let step = self.step_m();
        let lo = ((x_center - half_len - self.track_start[0]) / step).ceil().max(0.0) as usize;
        let hi = (((x_center + half_len - self.track_start[0]) / step).floor() + 1.0).max(0.0) as usize;
        lo.min(self.n_slots)..hi.min(self.n_slots)
    }

    /// Hex SHA-256 identifying this scenario.
    pub fn hash(&self) -> String {
        self.config.hash()
    }

    /// Resolved geometry as pretty JSON.
    pub fn dump_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn distance(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_21_cells() {
        let s = build_scenario(&ScenarioConfig::default()).unwrap();
        assert_eq!(s.bs_list.len(), 7);
        assert_eq!(s.n_cells(), 21);
        for bs in &s.bs_list {
            let az: Vec<f64> = bs.sectors.iter().map(|x| x.boresight_deg).collect();
            assert_eq!(az, vec![30.0, 150.0, -90.0]);
            assert!(bs.sectors.iter().all(|x| x.spacing == 0.5));
        }
    }

    #[test]
    fn minimal_single_cell() {
        let mut c = ScenarioConfig::default();
        c.layout.n_bs = 1;
        c.layout.sector_azimuths_deg = vec![-90.0];
        c.n_slots = Some(100);
        let s = build_scenario(&c).unwrap();
        assert_eq!(s.n_cells(), 1);
        assert_eq!(s.n_slots, 100);
    }

    #[test]
    fn deterministic_serialization() {
        let c = ScenarioConfig::default();
        let a = serde_json::to_vec(&build_scenario(&c).unwrap()).unwrap();
        let b = serde_json::to_vec(&build_scenario(&c).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ScenarioConfig::default();
        c.slot_duration_s = 0.0;
        assert!(build_scenario(&c).is_err());
        c.slot_duration_s = -0.01;
        assert!(build_scenario(&c).is_err());

        let mut c = ScenarioConfig::default();
        c.ue_speed_kmh = 0.0;
        assert!(build_scenario(&c).is_err());

        let mut c = ScenarioConfig::default();
        c.layout.n_bs = 0;
        assert!(build_scenario(&c).is_err());

        let mut c = ScenarioConfig::default();
        c.layout.sector_azimuths_deg.clear();
        assert!(build_scenario(&c).is_err());

        let mut c = ScenarioConfig::default();
        c.n_slots = Some(10_000_000);
        assert!(build_scenario(&c).is_err());
    }

    #[test]
    fn ue_position_examples() {
        let mut c = ScenarioConfig::default();
        c.ue_speed_kmh = 360.0;
        let s = build_scenario(&c).unwrap();
        assert_eq!(s.ue_position(0).unwrap(), s.track_start);
        let p = s.ue_position(10).unwrap();
        assert!((distance(&p, &s.track_start) - 10.0).abs() < 1e-9);
        assert!(s.ue_position(s.n_slots).is_err());
    }

    #[test]
    fn ue_never_leaves_track() {
        for &v in &DEFAULT_SPEEDS_KMH {
            let s = build_scenario(&ScenarioConfig::default().with_speed(v)).unwrap();
            let last = s.ue_position(s.n_slots - 1).unwrap();
            assert!(last[0] <= s.track_length_m + 1e-9);
            assert!(s.n_slots as f64 * s.step_m() <= s.track_length_m + 1e-6);
        }
    }

    #[test]
    fn config_parses_partial_toml() {
        let c =
            ScenarioConfig::from_toml("ue_speed_kmh = 500\n[layout]\nn_bs = 2\n[channel]\nshadowing = true\n").unwrap();
        assert_eq!(c.ue_speed_kmh, 500.0);
        assert_eq!(c.layout.n_bs, 2);
        assert!(c.channel.shadowing);
        assert!(ScenarioConfig::from_toml("bogus = 1").is_err());
    }
}
