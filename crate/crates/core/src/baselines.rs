//! Comparison precoders: ZF, RZF, symbol-level CI and block-level CI.

use crate::epigraph::{solve_epigraph, EpigraphOptions};
use crate::linalg::{frobenius_sq, right_inverse};
use crate::margins::{psk_margin_problem, qam_margin_problem, SlotBasis};
use crate::modulation::{Constellation, SymbolBlock};
use crate::psk::{build_psk_dual, min_margin, scalings_of};
use crate::qam::{achieved_margin, scalings_of as qam_scalings_of, solve_qam};
use crate::simplex_qp::{solve_simplex_qp_reference, QuadraticForm, SignMask, SimplexQp};
use crate::waveform::SolveOptions;
use crate::{CMatrix, Error, RMatrix, RVector, Result, C64};

fn normalize_block(x: &mut CMatrix, power: f64) -> Result<()> {
    let e = frobenius_sq(x);
    if !(e > 0.0) {
        return Err(Error::Solver("precoded block has zero energy".into()));
    }
    *x *= C64::new((power / e).sqrt(), 0.0);
    Ok(())
}

/// `X = c·Hᴴ(HHᴴ)⁻¹S` with one scalar `c` for the whole block.
pub fn zf_precode(h: &CMatrix, s: &CMatrix, p0: f64, max_cond: f64) -> Result<CMatrix> {
    let ri = right_inverse(h, max_cond)?;
    let mut x = &ri.g * s;
    normalize_block(&mut x, s.ncols() as f64 * p0)?;
    Ok(x)
}

/// `X = c·Hᴴ(HHᴴ + (Kσ²/p0)·I)⁻¹S` with one scalar `c` for the whole block.
pub fn rzf_precode(h: &CMatrix, s: &CMatrix, p0: f64, sigma2: f64) -> Result<CMatrix> {
    if sigma2 < 0.0 || !(p0 > 0.0) {
        return Err(Error::InvalidParameter("RZF needs sigma2 >= 0 and p0 > 0".into()));
    }
    let k = h.nrows();
    let reg = C64::new(k as f64 * sigma2 / p0, 0.0);
    let m = h * h.adjoint() + CMatrix::identity(k, k) * reg;
    let inv = m
        .try_inverse()
        .ok_or_else(|| Error::IllConditioned { what: "H·Hᴴ + αI", cond: f64::INFINITY })?;
    let mut x = h.adjoint() * inv * s;
    normalize_block(&mut x, s.ncols() as f64 * p0)?;
    Ok(x)
}

/// Per-slot CI precoder and its dual certificate.
#[derive(Clone, Debug)]
pub struct SlpClosedForm {
    /// Optimal simplex point of the slot dual.
    pub u: RVector,
    /// Slot dual form `V_n` (`2K × 2K`).
    pub v: RMatrix,
    /// `(1/s_1, …, 1/s_K)`.
    pub s_hat: Vec<C64>,
    /// `N_T × K` precoder with `P_n s^n = x_n`.
    pub p: CMatrix,
    pub x: CMatrix,
    pub t: f64,
}

/// Symbol-level CI precoding for one PSK slot under `‖x‖² ≤ p0`.
///
/// The slot dual uses the threshold-aware form
/// `V_n = M·lift(diag(s̄)(HHᴴ)⁻¹diag(s))⁻¹·Mᵀ`, so the sector margins are
/// measured exactly as in the block design.
pub fn cislp_psk_slot(h: &CMatrix, s: &[C64], p0: f64, c: &Constellation, max_cond: f64) -> Result<SlpClosedForm> {
    let theta_t = c
        .theta_t()
        .ok_or_else(|| Error::UnsupportedModulation(format!("{} is not PSK", c.kind())))?;
    let block = SymbolBlock::from_symbols(c, CMatrix::from_column_slice(s.len(), 1, s))?;
    let dual = build_psk_dual(h, &block, theta_t, max_cond)?;
    let qp = SimplexQp::new(QuadraticForm::Dense(dual.v.clone()), SignMask::all_nonnegative(dual.dim()))?;
    let u = solve_simplex_qp_reference(&qp, 1e-12)?.u;
    let (lambda_hat, _, _) = dual.recover(&u, p0)?;
    let k = s.len();
    let lambda: Vec<C64> = (0..k).map(|i| C64::new(lambda_hat[i], lambda_hat[k + i])).collect();
    let x = dual.waveform(&lambda);
    let s_hat: Vec<C64> = s.iter().map(|z| z.inv()).collect();
    // P_n = (1/K)·G·diag(λ ∘ s)·1·ŝ, so that P_n s = G(λ ∘ s) = x_n
    let col = x.column(0).into_owned();
    let row = CMatrix::from_row_slice(1, k, &s_hat);
    let p = &col * row / C64::new(k as f64, 0.0);
    let t = min_margin(&lambda, theta_t);
    Ok(SlpClosedForm {
        u,
        v: dual.v,
        s_hat,
        p,
        x,
        t,
    })
}

/// Symbol-level CI over a PSK block, one slot at a time with budget `p0` each.
/// Returns the block waveform and per-slot margins.
pub fn cislp_psk(h: &CMatrix, block: &SymbolBlock, p0: f64, c: &Constellation, max_cond: f64) -> Result<(CMatrix, Vec<f64>)> {
    let mut x = CMatrix::zeros(h.ncols(), block.slots());
    let mut t = Vec::with_capacity(block.slots());
    for n in 0..block.slots() {
        let slot = cislp_psk_slot(h, &block.slot(n), p0, c, max_cond)?;
        x.set_column(n, &slot.x.column(0));
        t.push(slot.t);
    }
    Ok((x, t))
}

/// Symbol-level CI for QAM: the block QAM design run on each slot alone.
pub fn cislp_qam(h: &CMatrix, block: &SymbolBlock, p0: f64, c: &Constellation, opts: &SolveOptions) -> Result<(CMatrix, Vec<f64>)> {
    let mut x = CMatrix::zeros(h.ncols(), block.slots());
    let mut t = Vec::with_capacity(block.slots());
    for n in 0..block.slots() {
        let slot = block.select_slots(&[n]);
        let sol = solve_qam(h, &slot, p0, c, opts)?;
        x.set_column(n, &sol.x.column(0));
        t.push(sol.t_star);
    }
    Ok((x, t))
}

#[derive(Clone, Debug)]
pub struct CiBlpSolution {
    /// Fixed `N_T × K` precoder; `X = P·S`.
    pub p: CMatrix,
    pub x: CMatrix,
    pub t: f64,
    /// The pinned QAM scalings admit only `t = 0`.
    pub degenerate: bool,
    pub iterations: usize,
}

/// Block-level CI: one precoder `P` for the whole block, `Σ‖P s^n‖² ≤ N·p0`.
///
/// With `S = UΣVᴴ` of rank `r`, every `P·S` equals `Y·V_rᴴ` for
/// `Y = P·U_r·Σ_r`, and `‖P·S‖_F = ‖Y‖_F`. The problem is solved over `Y`
/// and mapped back with `P = Y·Σ_r⁻¹·U_rᴴ`.
pub fn ciblp(
    h: &CMatrix,
    block: &SymbolBlock,
    p0: f64,
    c: &Constellation,
    opts: &EpigraphOptions,
    max_cond: f64,
) -> Result<CiBlpSolution> {
    right_inverse(h, max_cond)?;
    let s = block.symbols();
    let svd = s.clone().svd(true, true);
    let (u, v_t) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let sv = &svd.singular_values;
    let smax = sv.max();
    let rank_idx: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > 1e-10 * smax).collect();
    let r = rank_idx.len();
    let n = block.slots();
    // C[n, j] = conj(V_r[n, j]) = (Vᴴ)[j, n]
    let coeffs = CMatrix::from_fn(n, r, |slot, j| v_t[(rank_idx[j], slot)]);
    let basis = SlotBasis::from_coeffs(coeffs)?;
    let power = n as f64 * p0;
    let mp = match c.theta_t() {
        Some(theta_t) => psk_margin_problem(h, block, theta_t, basis, power)?,
        None => qam_margin_problem(h, block, c, basis, power)?,
    };
    let sol = solve_epigraph(&mp.problem, opts)?;
    let mut y = mp.decision(&sol.w);
    let e = frobenius_sq(&y);
    if e > 0.0 && sol.t > 0.0 {
        y *= C64::new((power / e).sqrt(), 0.0);
    }
    let sigma_inv_uh = CMatrix::from_fn(r, block.users(), |j, k| u[(k, rank_idx[j])].conj() / sv[rank_idx[j]]);
    let p = &y * sigma_inv_uh;
    let x = &p * s;
    let t = if sol.degenerate {
        0.0
    } else {
        match c.theta_t() {
            Some(theta_t) => min_margin(&scalings_of(h, block, &x), theta_t),
            None => {
                let classes: Vec<_> = (0..block.slots())
                    .flat_map(|n| (0..block.users()).map(move |k| (k, n)))
                    .map(|(k, n)| c.qam_decompose(block.symbol(k, n)).map(|(_, cl)| [cl.real, cl.imag]))
                    .collect::<Result<Vec<_>>>()?
                    .concat();
                achieved_margin(&qam_scalings_of(h, block, &x), &classes)
            }
        }
    };
    Ok(CiBlpSolution {
        p,
        x,
        t,
        degenerate: sol.degenerate,
        iterations: sol.iterations,
    })
}

/// Nonlinear PSK `t*` via the epigraph form, used as an oracle in tests.
pub fn nonlinear_psk_epigraph(h: &CMatrix, block: &SymbolBlock, p0: f64, theta_t: f64) -> Result<f64> {
    let mp = psk_margin_problem(h, block, theta_t, SlotBasis::identity(block.slots()), block.slots() as f64 * p0)?;
    Ok(solve_epigraph(&mp.problem, &EpigraphOptions::default())?.t)
}
