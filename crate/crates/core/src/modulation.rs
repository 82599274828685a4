//! Constellations, symbol blocks, CI geometry and detection.
//!
//! Point ordering is fixed so that tests and seeded draws are reproducible:
//!
//! * PSK: angle-ascending, point `i` at phase `2πi/M + φ`, with `φ = 0` for
//!   BPSK and `φ = π/M` otherwise (QPSK is then `(±1 ± j)/√2`).
//! * QAM: row-major over the level grid, imaginary level outer, real level
//!   inner, both ascending. Levels are the odd integers `±1, ±3, …` times
//!   `norm_factor`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{CMatrix, Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modulation {
    Psk(usize),
    Qam(usize),
}

impl Modulation {
    pub fn order(self) -> usize {
        match self {
            Modulation::Psk(m) | Modulation::Qam(m) => m,
        }
    }

    pub fn is_psk(self) -> bool {
        matches!(self, Modulation::Psk(_))
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Modulation::Psk(2) => f.write_str("bpsk"),
            Modulation::Psk(4) => f.write_str("qpsk"),
            Modulation::Psk(m) => write!(f, "{m}psk"),
            Modulation::Qam(m) => write!(f, "{m}qam"),
        }
    }
}

impl FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let parse_order = |digits: &str| {
            digits
                .parse::<usize>()
                .map_err(|_| Error::UnsupportedModulation(s.clone()))
        };
        match s.as_str() {
            "bpsk" => Ok(Modulation::Psk(2)),
            "qpsk" => Ok(Modulation::Psk(4)),
            _ => {
                if let Some(d) = s.strip_suffix("psk") {
                    Ok(Modulation::Psk(parse_order(d.trim_end_matches('-'))?))
                } else if let Some(d) = s.strip_suffix("qam") {
                    Ok(Modulation::Qam(parse_order(d.trim_end_matches('-'))?))
                } else {
                    Err(Error::UnsupportedModulation(s.clone()))
                }
            }
        }
    }
}

/// Whether a QAM component can be pushed outward (𝔘) or is pinned (𝔙).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalingSet {
    /// Outermost level: CI can be exploited.
    Exploitable,
    /// Interior level: the scaling is fixed to the margin.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ComponentClass {
    pub real: ScalingSet,
    pub imag: ScalingSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    kind: Modulation,
    points: Vec<C64>,
    theta_t: Option<f64>,
    qam_levels: Vec<f64>,
    norm_factor: f64,
}

/// Builds the constellation with the unnormalized QAM grid.
pub fn make_constellation(kind: Modulation) -> Result<Constellation> {
    Constellation::new(kind, false)
}

impl Constellation {
    /// `normalize_qam` rescales QAM points to unit average energy; PSK points
    /// are always unit modulus.
    pub fn new(kind: Modulation, normalize_qam: bool) -> Result<Self> {
        match kind {
            Modulation::Psk(m) => {
                if m < 2 || !m.is_power_of_two() {
                    return Err(Error::UnsupportedModulation(format!(
                        "PSK order {m} (must be a power of two, at least 2)"
                    )));
                }
                let offset = if m == 2 { 0.0 } else { PI / m as f64 };
                let points = (0..m)
                    .map(|i| C64::from_polar(1.0, 2.0 * PI * i as f64 / m as f64 + offset))
                    .collect();
                Ok(Constellation {
                    kind,
                    points,
                    theta_t: Some(PI / m as f64),
                    qam_levels: Vec::new(),
                    norm_factor: 1.0,
                })
            }
            Modulation::Qam(m) => {
                let side = (m as f64).sqrt().round() as usize;
                if m == 4 {
                    return Err(Error::UnsupportedModulation(
                        "4-QAM: use QPSK instead".to_string(),
                    ));
                }
                if m < 16 || side * side != m || !side.is_power_of_two() {
                    return Err(Error::UnsupportedModulation(format!(
                        "QAM order {m} (must be a square power of two, at least 16)"
                    )));
                }
                let levels: Vec<f64> = (0..side)
                    .map(|i| 2.0 * i as f64 - (side as f64 - 1.0))
                    .collect();
                let norm_factor = if normalize_qam {
                    (1.5 / (m as f64 - 1.0)).sqrt()
                } else {
                    1.0
                };
                let mut points = Vec::with_capacity(m);
                for &im in &levels {
                    for &re in &levels {
                        points.push(C64::new(re, im) * norm_factor);
                    }
                }
                Ok(Constellation {
                    kind,
                    points,
                    theta_t: None,
                    qam_levels: levels,
                    norm_factor,
                })
            }
        }
    }

    pub fn kind(&self) -> Modulation {
        self.kind
    }

    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    /// PSK threshold angle `π/M`; `None` for QAM.
    pub fn theta_t(&self) -> Option<f64> {
        self.theta_t
    }

    /// Unscaled odd-integer levels (QAM only).
    pub fn qam_levels(&self) -> &[f64] {
        &self.qam_levels
    }

    pub fn norm_factor(&self) -> f64 {
        self.norm_factor
    }

    fn max_level(&self) -> f64 {
        self.qam_levels.last().copied().unwrap_or(1.0)
    }

    /// Splits a QAM symbol into `(Re s, j·Im s)` and classifies each
    /// component: outermost level → [`ScalingSet::Exploitable`].
    pub fn qam_decompose(&self, s: C64) -> Result<([C64; 2], ComponentClass)> {
        if self.kind.is_psk() {
            return Err(Error::InvalidParameter(
                "qam_decompose called on a PSK constellation".into(),
            ));
        }
        let scale = self.norm_factor;
        let (re, im) = (s.re / scale, s.im / scale);
        if re.abs() < 1e-9 || im.abs() < 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "symbol {s} has a zero component"
            )));
        }
        let outer = self.max_level();
        let class_of = |v: f64| {
            if (v.abs() - outer).abs() < 1e-6 {
                ScalingSet::Exploitable
            } else {
                ScalingSet::Fixed
            }
        };
        Ok((
            [C64::new(s.re, 0.0), C64::new(0.0, s.im)],
            ComponentClass {
                real: class_of(re),
                imag: class_of(im),
            },
        ))
    }

    /// Index of the detected point for received sample `y`.
    ///
    /// PSK decisions are angular sectors and ignore `t_star`. QAM decisions
    /// use the grid scaled by `t_star`, so boundaries sit at even multiples
    /// of `t_star · norm_factor`. Ties go to the lower index.
    pub fn detect(&self, y: C64, t_star: f64) -> usize {
        match self.kind {
            Modulation::Psk(m) => {
                let width = 2.0 * PI / m as f64;
                let offset = if m == 2 { 0.0 } else { PI / m as f64 };
                // sector i spans [offset + (i - 1/2)·width, offset + (i + 1/2)·width)
                let a = (y.arg() - offset + 0.5 * width).rem_euclid(2.0 * PI);
                ((a / width).floor() as usize) % m
            }
            Modulation::Qam(_) => {
                let side = self.qam_levels.len();
                let unit = t_star * self.norm_factor;
                let level_index = |v: f64| -> usize {
                    let pos = (v / unit + (side as f64 - 1.0)) / 2.0;
                    let idx = (pos - 0.5).ceil();
                    idx.clamp(0.0, (side - 1) as f64) as usize
                };
                level_index(y.im) * side + level_index(y.re)
            }
        }
    }
}

/// Margin pair `(Re λ − Im λ / tan θ_t, Re λ + Im λ / tan θ_t)`.
///
/// A received `λ·s` lies in the CI sector with threshold `t` iff
/// `t <= min(m_minus, m_plus)`.
pub fn psk_margins(lambda: C64, theta_t: f64) -> (f64, f64) {
    let c = 1.0 / theta_t.tan();
    (lambda.re - lambda.im * c, lambda.re + lambda.im * c)
}

/// `K × N` block of constellation points.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBlock {
    symbols: CMatrix,
    indices: Vec<usize>,
}

impl SymbolBlock {
    /// Builds a block from explicit point indices (column-major, `K × N`).
    pub fn from_indices(c: &Constellation, k: usize, n: usize, indices: Vec<usize>) -> Result<Self> {
        if k == 0 || n == 0 {
            return Err(Error::InvalidParameter("K and N must be at least 1".into()));
        }
        if indices.len() != k * n || indices.iter().any(|&i| i >= c.order()) {
            return Err(Error::InvalidParameter("symbol indices do not match the block".into()));
        }
        let symbols = CMatrix::from_fn(k, n, |r, col| c.points[indices[col * k + r]]);
        Ok(SymbolBlock { symbols, indices })
    }

    /// Builds a block from explicit symbols, each of which must be a point of `c`.
    pub fn from_symbols(c: &Constellation, symbols: CMatrix) -> Result<Self> {
        let (k, n) = symbols.shape();
        let mut indices = Vec::with_capacity(k * n);
        for s in symbols.iter() {
            let idx = c
                .points
                .iter()
                .position(|p| (p - s).norm() < 1e-9)
                .ok_or_else(|| Error::InvalidParameter(format!("{s} is not a constellation point")))?;
            indices.push(idx);
        }
        Self::from_indices(c, k, n, indices)
    }

    pub fn users(&self) -> usize {
        self.symbols.nrows()
    }

    pub fn slots(&self) -> usize {
        self.symbols.ncols()
    }

    pub fn symbols(&self) -> &CMatrix {
        &self.symbols
    }

    pub fn symbol(&self, k: usize, n: usize) -> C64 {
        self.symbols[(k, n)]
    }

    pub fn index(&self, k: usize, n: usize) -> usize {
        self.indices[n * self.users() + k]
    }

    /// Column `n` as a vector.
    pub fn slot(&self, n: usize) -> Vec<C64> {
        self.symbols.column(n).iter().copied().collect()
    }

    /// Keeps only the slots in `order` (used for permutation checks and per-slot solves).
    pub fn select_slots(&self, order: &[usize]) -> SymbolBlock {
        let k = self.users();
        let symbols = CMatrix::from_fn(k, order.len(), |r, c| self.symbols[(r, order[c])]);
        let indices = order
            .iter()
            .flat_map(|&c| (0..k).map(move |r| (r, c)))
            .map(|(r, c)| self.indices[c * k + r])
            .collect();
        SymbolBlock { symbols, indices }
    }
}

/// Uniform i.i.d. draw of a `K × N` block, reproducible per seed.
pub fn draw_block(c: &Constellation, k: usize, n: usize, seed: u64) -> Result<SymbolBlock> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = (0..k * n).map(|_| rng.random_range(0..c.order())).collect();
    SymbolBlock::from_indices(c, k, n, indices)
}
