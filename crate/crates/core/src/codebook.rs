//! DFT narrow-beam codebooks (Set A) and Set B selection patterns.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A positive rational number, used for measurement ratios such as `1/16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ratio {
    pub num: usize,
    pub den: usize,
}

impl Ratio {
    pub fn new(num: usize, den: usize) -> Result<Self> {
        if den == 0 || num == 0 || num > den {
            return Err(Error::Config(format!("ratio {num}/{den} must lie in (0, 1]")));
        }
        let g = gcd(num, den);
        Ok(Ratio {
            num: num / g,
            den: den / g,
        })
    }

    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `size * self` if it is an integer.
    pub fn count_of(&self, size: usize) -> Result<usize> {
        if (size * self.num) % self.den != 0 {
            return Err(Error::NonIntegralCount {
                size,
                num: self.num,
                den: self.den,
            });
        }
        Ok(size * self.num / self.den)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse ratio '{s}'"));
        match s.split_once('/') {
            Some((n, d)) => Ratio::new(
                n.trim().parse().map_err(|_| bad())?,
                d.trim().parse().map_err(|_| bad())?,
            ),
            None if s.trim() == "1" => Ok(Ratio::ONE),
            None => Err(bad()),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Boresight label of one beam, degrees in the sector-local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamLabel {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    /// Spatial frequencies along the row (horizontal) and column (vertical) axes.
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
    pub oversampling: usize,
    /// Beam `b = i_row * beam_grid.1 + i_col`; each of length `rows * cols`.
    pub beams: Vec<Vec<Complex64>>,
    pub labels: Vec<BeamLabel>,
    /// Shape of the beam index space, `(row beams, col beams)`.
    pub beam_grid: (usize, usize),
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }
}

/// Spatial frequency of the `k`-th of `n` oversampled DFT beams, wrapped to
/// the fundamental interval `[-1/(2d), 1/(2d))`.
fn dft_frequency(k: usize, n: usize, spacing: f64) -> f64 {
    let f = k as f64 / n as f64; // cycles per element
    let f = if f >= 0.5 { f - 1.0 } else { f };
    f / spacing
}

fn dft_vector(len: usize, n_beams: usize, k: usize) -> Vec<Complex64> {
    (0..len)
        .map(|i| Complex64::from_polar(1.0, 2.0 * PI * (i * k) as f64 / n_beams as f64))
        .collect()
}

fn label_for(u: f64, v: f64) -> BeamLabel {
    let v_c = v.clamp(-1.0, 1.0);
    let el = v_c.asin();
    let c = el.cos();
    let s = if c > 1e-12 { (u / c).clamp(-1.0, 1.0) } else { 0.0 };
    BeamLabel {
        azimuth_deg: s.asin().to_degrees(),
        elevation_deg: el.to_degrees(),
        u,
        v,
    }
}

/// Kronecker-product DFT codebook with `rows*os x cols*os` unit-norm beams.
pub fn dft_codebook(rows: usize, cols: usize, oversampling: usize) -> Codebook {
    dft_codebook_with_spacing(rows, cols, oversampling, 0.5)
}

pub fn dft_codebook_with_spacing(rows: usize, cols: usize, oversampling: usize, spacing: f64) -> Codebook {
    assert!(
        rows >= 1 && cols >= 1 && oversampling >= 1,
        "codebook dims must be >= 1"
    );
    // a single-element axis has one direction only; oversampling it would
    // just duplicate beams
    let nr = if rows > 1 { rows * oversampling } else { 1 };
    let nc = if cols > 1 { cols * oversampling } else { 1 };
    let norm = 1.0 / ((rows * cols) as f64).sqrt();
    let mut beams = Vec::with_capacity(nr * nc);
    let mut labels = Vec::with_capacity(nr * nc);
    for kr in 0..nr {
        let wr = dft_vector(rows, nr, kr);
        for kc in 0..nc {
            let wc = dft_vector(cols, nc, kc);
            let beam: Vec<Complex64> = wr.iter().flat_map(|a| wc.iter().map(move |b| a * b * norm)).collect();
            beams.push(beam);
            labels.push(label_for(
                dft_frequency(kr, nr, spacing),
                dft_frequency(kc, nc, spacing),
            ));
        }
    }
    Codebook {
        rows,
        cols,
        spacing,
        oversampling,
        beams,
        labels,
        beam_grid: (nr, nc),
    }
}

/// Wide beams from a 2x2-aggregated DFT codebook: each wide beam is a DFT beam
/// of the `ceil(rows/2) x ceil(cols/2)` sub-array, zero elsewhere.
pub fn wide_beam_codebook(rows: usize, cols: usize, spacing: f64) -> Codebook {
    let sr = rows.div_ceil(2);
    let sc = cols.div_ceil(2);
    let sub = dft_codebook_with_spacing(sr, sc, 1, spacing);
    let beams = sub
        .beams
        .iter()
        .map(|b| {
            let mut full = vec![Complex64::new(0.0, 0.0); rows * cols];
            for r in 0..sr {
                for c in 0..sc {
                    full[r * cols + c] = b[r * sc + c];
                }
            }
            full
        })
        .collect();
    Codebook {
        rows,
        cols,
        spacing,
        oversampling: 1,
        beams,
        labels: sub.labels,
        beam_grid: (sr, sc),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPattern {
    Equidistant,
    Random,
}

impl FromStr for SelectionPattern {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equidistant" => Ok(SelectionPattern::Equidistant),
            "random" => Ok(SelectionPattern::Random),
            other => Err(Error::Config(format!("unknown selection pattern '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetBKind {
    SubsetOfA { indices: Vec<usize> },
    WideBeam { count: usize },
    Full,
    Compressed { m: usize },
}

/// Which measurements the predictor sees, and how they relate to Set A.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetB {
    pub set_a_size: usize,
    #[serde(flatten)]
    pub kind: SetBKind,
}

impl SetB {
    pub fn full(set_a_size: usize) -> Self {
        SetB {
            set_a_size,
            kind: SetBKind::Full,
        }
    }

    pub fn compressed(set_a_size: usize, m: usize) -> Self {
        SetB {
            set_a_size,
            kind: SetBKind::Compressed { m },
        }
    }

    /// Number of measurements per instance.
    pub fn count(&self) -> usize {
        match &self.kind {
            SetBKind::SubsetOfA { indices } => indices.len(),
            SetBKind::WideBeam { count } => *count,
            SetBKind::Full => self.set_a_size,
            SetBKind::Compressed { m } => *m,
        }
    }

    /// Measurement ratio `|Set B| / |Set A|`.
    pub fn ratio(&self) -> Ratio {
        Ratio::new(self.count(), self.set_a_size).unwrap_or(Ratio::ONE)
    }

    /// Selected Set A indices (all of them for `Full`).
    pub fn indices(&self) -> Option<Vec<usize>> {
        match &self.kind {
            SetBKind::SubsetOfA { indices } => Some(indices.clone()),
            SetBKind::Full => Some((0..self.set_a_size).collect()),
            _ => None,
        }
    }
}

/// Chooses which Set A beams are measured.
pub fn select_set_b(set_a_size: usize, pattern: SelectionPattern, ratio: Ratio, seed: u64) -> Result<SetB> {
    let count = ratio.count_of(set_a_size)?;
    if count == set_a_size {
        return Ok(SetB {
            set_a_size,
            kind: SetBKind::SubsetOfA {
                indices: (0..set_a_size).collect(),
            },
        });
    }
    let indices = match pattern {
        SelectionPattern::Equidistant => (0..count).map(|j| j * set_a_size / count).collect(),
        SelectionPattern::Random => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let all: Vec<usize> = (0..set_a_size).collect();
            let mut chosen: Vec<usize> = all.choose_multiple(&mut rng, count).copied().collect();
            chosen.sort_unstable();
            chosen
        }
    };
    Ok(SetB {
        set_a_size,
        kind: SetBKind::SubsetOfA { indices },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::array_response;

    fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
    }

    #[test]
    fn degenerate_codebook() {
        let cb = dft_codebook(1, 1, 1);
        assert_eq!(cb.len(), 1);
        assert!((cb.beams[0][0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn dft_8x8_is_orthonormal() {
        let cb = dft_codebook(8, 8, 1);
        assert_eq!(cb.len(), 64);
        for i in 0..64 {
            assert!((inner(&cb.beams[i], &cb.beams[i]).norm() - 1.0).abs() < 1e-9);
            for j in (i + 1)..64 {
                assert!(inner(&cb.beams[i], &cb.beams[j]).norm() < 1e-9, "{i} {j}");
            }
        }
    }

    #[test]
    fn oversampled_neighbours_overlap() {
        let cb = dft_codebook(4, 1, 2);
        assert_eq!(cb.len(), 8);
        for b in 0..8 {
            let next = (b + 1) % 8;
            assert!(inner(&cb.beams[b], &cb.beams[next]).norm() > 0.1);
        }
    }

    #[test]
    fn labels_match_array_factor_peak() {
        // 1-D horizontal array: scan azimuth on a fine grid, elevation 0.
        let cb = dft_codebook(8, 1, 1);
        let grid: Vec<f64> = (0..=1800).map(|i| -90.0 + i as f64 * 0.1).collect();
        for (b, beam) in cb.beams.iter().enumerate() {
            let lab = cb.labels[b];
            if lab.u.abs() >= 1.0 {
                continue; // endfire beam sits on the grid edge
            }
            let best = grid
                .iter()
                .copied()
                .max_by(|&x, &y| {
                    let fx = inner(beam, &array_response(8, 1, 0.5, x, 0.0)).norm();
                    let fy = inner(beam, &array_response(8, 1, 0.5, y, 0.0)).norm();
                    fx.partial_cmp(&fy).unwrap()
                })
                .unwrap();
            assert!(
                (best - lab.azimuth_deg).abs() <= 0.1 + 1e-9,
                "beam {b}: {best} vs {}",
                lab.azimuth_deg
            );
        }
    }

    #[test]
    fn labels_match_peak_2d() {
        let cb = dft_codebook(4, 4, 1);
        for (b, beam) in cb.beams.iter().enumerate() {
            let lab = cb.labels[b];
            if lab.v.abs() >= 1.0 || lab.u.abs() >= lab.elevation_deg.to_radians().cos() - 1e-9 {
                continue;
            }
            let mut best = (f64::MIN, 0.0, 0.0);
            for ia in 0..=180 {
                for ie in 0..=180 {
                    let az = -90.0 + ia as f64;
                    let el = -90.0 + ie as f64;
                    let g = inner(beam, &array_response(4, 4, 0.5, az, el)).norm();
                    if g > best.0 {
                        best = (g, az, el);
                    }
                }
            }
            assert!(
                (best.1 - lab.azimuth_deg).abs() <= 1.0,
                "beam {b} az {} vs {}",
                best.1,
                lab.azimuth_deg
            );
            assert!(
                (best.2 - lab.elevation_deg).abs() <= 1.0,
                "beam {b} el {} vs {}",
                best.2,
                lab.elevation_deg
            );
        }
    }

    #[test]
    fn wide_beams_are_unit_norm_and_fewer() {
        let cb = wide_beam_codebook(8, 8, 0.5);
        assert_eq!(cb.len(), 16);
        for b in &cb.beams {
            assert!((inner(b, b).norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn equidistant_examples() {
        let s = select_set_b(64, SelectionPattern::Equidistant, Ratio::new(1, 16).unwrap(), 0).unwrap();
        assert_eq!(s.indices().unwrap(), vec![0, 16, 32, 48]);
        assert_eq!(s.ratio(), Ratio::new(1, 16).unwrap());

        let s = select_set_b(32, SelectionPattern::Equidistant, Ratio::new(1, 2).unwrap(), 0).unwrap();
        let want: Vec<usize> = (0..16).map(|i| 2 * i).collect();
        assert_eq!(s.indices().unwrap(), want);

        let s = select_set_b(10, SelectionPattern::Random, Ratio::ONE, 3).unwrap();
        assert_eq!(s.indices().unwrap(), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn non_integral_count_rejected() {
        let r = select_set_b(21, SelectionPattern::Equidistant, Ratio::new(1, 2).unwrap(), 0);
        assert!(matches!(r, Err(Error::NonIntegralCount { .. })));
    }

    #[test]
    fn random_selection_is_seeded() {
        let r = Ratio::new(1, 4).unwrap();
        let a = select_set_b(64, SelectionPattern::Random, r, 9).unwrap();
        let b = select_set_b(64, SelectionPattern::Random, r, 9).unwrap();
        assert_eq!(a, b);
        let idx = a.indices().unwrap();
        assert_eq!(idx.len(), 16);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(idx.iter().all(|&i| i < 64));
    }

    #[test]
    fn ratio_parse_and_display() {
        let r: Ratio = "2/32".parse().unwrap();
        assert_eq!(r, Ratio::new(1, 16).unwrap());
        assert_eq!(r.to_string(), "1/16");
        assert!("0/3".parse::<Ratio>().is_err());
        assert!("5/3".parse::<Ratio>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn equidistant_is_sorted_unique_subset(exp in 0u32..6, k in 1usize..5) {
            let size = 64 * k;
            let den = 1usize << exp;
            let s = select_set_b(size, SelectionPattern::Equidistant, Ratio::new(1, den).unwrap(), 0).unwrap();
            let idx = s.indices().unwrap();
            proptest::prop_assert_eq!(idx.len(), size / den);
            proptest::prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            proptest::prop_assert!(idx.iter().all(|&i| i < size));
            let again = select_set_b(size, SelectionPattern::Equidistant, Ratio::new(1, den).unwrap(), 77).unwrap();
            proptest::prop_assert_eq!(s, again);
        }
    }
}
