//! Margin rows for the epigraph form of the waveform problems.
//!
//! A block waveform is parametrized as `x^n = Σ_j C[n, j] · Y[:, j]` with a
//! complex decision matrix `Y` (`N_T × r`) and a fixed slot basis `C`
//! (`N × r`). With `C = I` this is the unconstrained waveform `X = Y`; with
//! `C = conj(V_r)` from the SVD of the symbol block it is the set reachable by
//! one fixed precoder. When `C` has orthonormal columns, `‖X‖_F² = ‖Y‖_F²` and
//! the power budget is a plain ball in `w = [Re vec(Y); Im vec(Y)]`.
//!
//! Each user/slot pair contributes two rows:
//! * PSK: the sector margins `Re λ ∓ Im λ / tan θ_t` of `λ = h_kᵀx^n / s_k^n`;
//! * QAM: the component scalings `Re(h_kᵀx^n)/Re s` and `Im(h_kᵀx^n)/Im s`,
//!   as equality rows for inner-level components.
//!
//! Row `2(n·K + k)` is the first member of the pair, row `2(n·K + k) + 1` the
//! second.

use crate::epigraph::EpigraphProblem;
use crate::modulation::{Constellation, ScalingSet, SymbolBlock};
use crate::{CMatrix, Error, RMatrix, RVector, Result, C64};

/// Slot basis `C` (`N × r`).
#[derive(Clone, Debug)]
pub struct SlotBasis {
    coeffs: CMatrix,
}

impl SlotBasis {
    pub fn identity(n: usize) -> Self {
        SlotBasis {
            coeffs: CMatrix::identity(n, n),
        }
    }

    /// `C` must have orthonormal columns for the power ball to be exact.
    pub fn from_coeffs(coeffs: CMatrix) -> Result<Self> {
        let r = coeffs.ncols();
        let gram = coeffs.adjoint() * &coeffs;
        let err = (gram - CMatrix::identity(r, r)).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if r == 0 || err > 1e-8 {
            return Err(Error::InvalidParameter("slot basis must have orthonormal columns".into()));
        }
        Ok(SlotBasis { coeffs })
    }

    pub fn slots(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn rank(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn coeffs(&self) -> &CMatrix {
        &self.coeffs
    }
}

/// An epigraph problem together with the map back to a waveform.
#[derive(Clone, Debug)]
pub struct MarginProblem {
    pub problem: EpigraphProblem,
    basis: SlotBasis,
    antennas: usize,
}

impl MarginProblem {
    /// Decision matrix `Y` from the lifted vector `w`.
    pub fn decision(&self, w: &RVector) -> CMatrix {
        let d = self.antennas * self.basis.rank();
        CMatrix::from_fn(self.antennas, self.basis.rank(), |a, j| {
            let i = j * self.antennas + a;
            C64::new(w[i], w[i + d])
        })
    }

    /// Waveform `X = Y·Cᵀ` (`N_T × N`).
    pub fn waveform(&self, w: &RVector) -> CMatrix {
        self.decision(w) * self.basis.coeffs.transpose()
    }

    pub fn basis(&self) -> &SlotBasis {
        &self.basis
    }
}

/// Complex coefficients of `h_kᵀx^n` in `vec(Y)`.
fn functional(h: &CMatrix, basis: &SlotBasis, k: usize, n: usize) -> Vec<C64> {
    let nt = h.ncols();
    let r = basis.rank();
    let mut a = vec![C64::new(0.0, 0.0); nt * r];
    for j in 0..r {
        let c = basis.coeffs[(n, j)];
        for ant in 0..nt {
            a[j * nt + ant] = h[(k, ant)] * c;
        }
    }
    a
}

/// Adds `re_scale·Re z` to row `re_row` and `im_scale·Im z` to row `im_row`
/// for `z = Σ a_j y_j`.
fn put_rows(rows: &mut RMatrix, re_row: usize, im_row: usize, a: &[C64], re_scale: f64, im_scale: f64) {
    let d = a.len();
    for (j, z) in a.iter().enumerate() {
        rows[(re_row, j)] += z.re * re_scale;
        rows[(re_row, j + d)] -= z.im * re_scale;
        rows[(im_row, j)] += z.im * im_scale;
        rows[(im_row, j + d)] += z.re * im_scale;
    }
}

fn check_shapes(h: &CMatrix, block: &SymbolBlock, basis: &SlotBasis, power: f64) -> Result<()> {
    if h.nrows() != block.users() || basis.slots() != block.slots() {
        return Err(Error::InvalidParameter(format!(
            "shape mismatch: H is {}x{}, block is {}x{}, basis has {} slots",
            h.nrows(),
            h.ncols(),
            block.users(),
            block.slots(),
            basis.slots()
        )));
    }
    if !(power > 0.0) {
        return Err(Error::InvalidParameter("power budget must be positive".into()));
    }
    Ok(())
}

/// PSK sector-margin rows; all inequalities.
pub fn psk_margin_problem(
    h: &CMatrix,
    block: &SymbolBlock,
    theta_t: f64,
    basis: SlotBasis,
    power: f64,
) -> Result<MarginProblem> {
    check_shapes(h, block, &basis, power)?;
    let (k_users, n_slots) = (block.users(), block.slots());
    let d = h.ncols() * basis.rank();
    let cot = 1.0 / theta_t.tan();
    let mut rows = RMatrix::zeros(2 * k_users * n_slots, 2 * d);
    let mut scratch = RMatrix::zeros(2, 2 * d);
    for n in 0..n_slots {
        for k in 0..k_users {
            let s = block.symbol(k, n);
            let a: Vec<C64> = functional(h, &basis, k, n).into_iter().map(|z| z / s).collect();
            scratch.fill(0.0);
            put_rows(&mut scratch, 0, 1, &a, 1.0, 1.0);
            let base = 2 * (n * k_users + k);
            for col in 0..2 * d {
                let (re, im) = (scratch[(0, col)], scratch[(1, col)]);
                rows[(base, col)] = re - im * cot;
                rows[(base + 1, col)] = re + im * cot;
            }
        }
    }
    let eq = vec![false; rows.nrows()];
    Ok(MarginProblem {
        problem: EpigraphProblem::new(rows, eq, power)?,
        basis,
        antennas: h.ncols(),
    })
}

/// QAM component-scaling rows; inner-level components become equality rows.
pub fn qam_margin_problem(
    h: &CMatrix,
    block: &SymbolBlock,
    c: &Constellation,
    basis: SlotBasis,
    power: f64,
) -> Result<MarginProblem> {
    check_shapes(h, block, &basis, power)?;
    let (k_users, n_slots) = (block.users(), block.slots());
    let d = h.ncols() * basis.rank();
    let mut rows = RMatrix::zeros(2 * k_users * n_slots, 2 * d);
    let mut eq = vec![false; rows.nrows()];
    for n in 0..n_slots {
        for k in 0..k_users {
            let s = block.symbol(k, n);
            let (_, class) = c.qam_decompose(s)?;
            let a = functional(h, &basis, k, n);
            let base = 2 * (n * k_users + k);
            put_rows(&mut rows, base, base + 1, &a, 1.0 / s.re, 1.0 / s.im);
            eq[base] = class.real == ScalingSet::Fixed;
            eq[base + 1] = class.imag == ScalingSet::Fixed;
        }
    }
    Ok(MarginProblem {
        problem: EpigraphProblem::new(rows, eq, power)?,
        basis,
        antennas: h.ncols(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::rayleigh_channel;
    use crate::modulation::{draw_block, psk_margins, Constellation, Modulation};

    fn random_w(d: usize, seed: u64) -> RVector {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        RVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn psk_rows_match_direct_margins() {
        let ch = rayleigh_channel(3, 2, 4).unwrap();
        let c = Constellation::new(Modulation::Psk(8), false).unwrap();
        let block = draw_block(&c, 2, 3, 5).unwrap();
        let mp = psk_margin_problem(ch.h(), &block, c.theta_t().unwrap(), SlotBasis::identity(3), 3.0).unwrap();
        let w = random_w(mp.problem.dim(), 1);
        let x = mp.waveform(&w);
        let rx = ch.h() * &x;
        let m = mp.problem.margins(&w);
        for n in 0..3 {
            for k in 0..2 {
                let (lo, hi) = psk_margins(rx[(k, n)] / block.symbol(k, n), c.theta_t().unwrap());
                assert!((m[2 * (n * 2 + k)] - lo).abs() < 1e-12);
                assert!((m[2 * (n * 2 + k) + 1] - hi).abs() < 1e-12);
            }
        }
        assert!((w.norm_squared() - crate::linalg::frobenius_sq(&x)).abs() < 1e-12);
    }

    #[test]
    fn qam_rows_match_component_scalings() {
        let ch = rayleigh_channel(4, 2, 8).unwrap();
        let c = Constellation::new(Modulation::Qam(16), false).unwrap();
        let block = draw_block(&c, 2, 2, 1).unwrap();
        let mp = qam_margin_problem(ch.h(), &block, &c, SlotBasis::identity(2), 2.0).unwrap();
        let w = random_w(mp.problem.dim(), 2);
        let rx = ch.h() * mp.waveform(&w);
        let m = mp.problem.margins(&w);
        for n in 0..2 {
            for k in 0..2 {
                let s = block.symbol(k, n);
                let (_, class) = c.qam_decompose(s).unwrap();
                let i = 2 * (n * 2 + k);
                assert!((m[i] - rx[(k, n)].re / s.re).abs() < 1e-12);
                assert!((m[i + 1] - rx[(k, n)].im / s.im).abs() < 1e-12);
                assert_eq!(mp.problem.equality[i], class.real == ScalingSet::Fixed);
                assert_eq!(mp.problem.equality[i + 1], class.imag == ScalingSet::Fixed);
            }
        }
    }

    #[test]
    fn non_orthonormal_basis_is_rejected() {
        let c = CMatrix::from_element(2, 1, C64::new(1.0, 0.0));
        assert!(SlotBasis::from_coeffs(c).is_err());
    }
}
