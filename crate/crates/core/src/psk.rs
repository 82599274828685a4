//! Block-level CI waveform design for PSK.
//!
//! With `G = Hᴴ(HHᴴ)⁻¹` and per-slot `Ḡ_n = G·diag(s^n)`, the waveform that
//! delivers scalings `λ_{k,n}` with least energy is `x^n = Ḡ_n λ_n`, whose
//! energy is `λ̂ᵀĜλ̂` in the real lift `λ̂ = [Re λ; Im λ]`. Maximizing the
//! smallest sector margin `M λ̂` under `λ̂ᵀĜλ̂ ≤ N·p0` has the dual
//!
//! ```text
//! minimize uᵀVu  over the probability simplex,   V = M Ĝ⁻¹ Mᵀ
//! ```
//!
//! and the primal is recovered in closed form:
//! `α₀ = sqrt(uᵀVu / (4Np0))`, `λ̂ = Ĝ⁻¹Mᵀu / (2α₀)`, `t* = sqrt(N·p0·uᵀVu)`.
//!
//! Scalings are indexed `n·K + k`.

use std::time::Instant;

use crate::admm::{admm_solve, AdmmConfig};
use crate::epigraph::solve_epigraph;
use crate::linalg::{frobenius_sq, real_lift, right_inverse, symmetrize, SpdFactor};
use crate::margins::{psk_margin_problem, SlotBasis};
use crate::modulation::{psk_margins, SymbolBlock};
use crate::simplex_qp::{solve_simplex_qp_reference, QuadraticForm, SignMask, SimplexQp};
use crate::waveform::{Diagnostics, SolveOptions};
use crate::{CMatrix, Error, RMatrix, RVector, Result, SolveMethod, C64};

/// Dual data of one PSK block.
#[derive(Clone, Debug)]
pub struct PskDualData {
    /// `Hᴴ(HHᴴ)⁻¹` (`N_T × K`).
    pub g: CMatrix,
    /// `Ḡ_n = G·diag(s^n)` per slot.
    pub gbar: Vec<CMatrix>,
    /// Factor of the lifted Gram matrix `Ĝ` (`2NK × 2NK`).
    pub ghat: SpdFactor,
    /// Sector map `[[I, −cot θ_t·I], [I, cot θ_t·I]]`.
    pub m: RMatrix,
    /// `M Ĝ⁻¹ Mᵀ`, symmetrized.
    pub v: RMatrix,
    pub theta_t: f64,
}

impl PskDualData {
    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn users(&self) -> usize {
        self.g.ncols()
    }

    pub fn slots(&self) -> usize {
        self.gbar.len()
    }

    /// Closed-form primal from a simplex point `u`: `(λ̂, α₀, uᵀVu)`.
    pub fn recover(&self, u: &RVector, power: f64) -> Result<(RVector, f64, f64)> {
        let quad = u.dot(&(&self.v * u));
        if !(quad > 0.0) {
            return Err(Error::Solver(format!("degenerate dual point (uᵀVu = {quad:.3e})")));
        }
        let alpha0 = (quad / (4.0 * power)).sqrt();
        let lambda_hat = self.ghat.solve(&(self.m.transpose() * u)) / (2.0 * alpha0);
        Ok((lambda_hat, alpha0, quad))
    }

    /// Waveform `x^n = Ḡ_n λ_n` for complex scalings indexed `n·K + k`.
    pub fn waveform(&self, lambda: &[C64]) -> CMatrix {
        let k = self.users();
        let mut x = CMatrix::zeros(self.g.nrows(), self.slots());
        for (n, gb) in self.gbar.iter().enumerate() {
            let l = nalgebra::DVector::from_column_slice(&lambda[n * k..(n + 1) * k]);
            x.set_column(n, &(gb * l));
        }
        x
    }
}

/// Sector map `M` for `nk` complex scalings.
pub fn sector_map(nk: usize, theta_t: f64) -> RMatrix {
    let cot = 1.0 / theta_t.tan();
    let mut m = RMatrix::zeros(2 * nk, 2 * nk);
    for i in 0..nk {
        m[(i, i)] = 1.0;
        m[(i, nk + i)] = -cot;
        m[(nk + i, i)] = 1.0;
        m[(nk + i, nk + i)] = cot;
    }
    m
}

pub fn build_psk_dual(h: &CMatrix, block: &SymbolBlock, theta_t: f64, max_cond: f64) -> Result<PskDualData> {
    if h.nrows() != block.users() {
        return Err(Error::InvalidParameter("channel and block disagree on the user count".into()));
    }
    if !(theta_t > 0.0 && theta_t <= std::f64::consts::FRAC_PI_2) {
        return Err(Error::InvalidParameter(format!("threshold angle {theta_t} outside (0, π/2]")));
    }
    let ri = right_inverse(h, max_cond)?;
    let (k, n) = (block.users(), block.slots());
    let nk = n * k;

    let mut gram = CMatrix::zeros(nk, nk);
    let mut gbar = Vec::with_capacity(n);
    for slot in 0..n {
        let s = block.slot(slot);
        let gb = CMatrix::from_fn(ri.g.nrows(), k, |a, j| ri.g[(a, j)] * s[j]);
        for i in 0..k {
            for j in 0..k {
                // Ḡ_nᴴḠ_n = diag(s̄) (HHᴴ)⁻¹ diag(s)
                gram[(slot * k + i, slot * k + j)] = s[i].conj() * ri.gram_inv[(i, j)] * s[j];
            }
        }
        gbar.push(gb);
    }
    let mut ghat_m = real_lift(&gram);
    symmetrize(&mut ghat_m);
    let ghat = SpdFactor::new(ghat_m, "Ĝ", max_cond * max_cond)?;
    let m = sector_map(nk, theta_t);
    let mut v = &m * ghat.solve_mat(&m.transpose());
    symmetrize(&mut v);
    Ok(PskDualData {
        g: ri.g,
        gbar,
        ghat,
        m,
        v,
        theta_t,
    })
}

#[derive(Clone, Debug)]
pub struct PskSolution {
    /// Dual simplex point; absent on the epigraph path.
    pub u_star: Option<RVector>,
    pub alpha0: Option<f64>,
    pub lambda_hat: RVector,
    /// Complex scalings indexed `n·K + k`.
    pub lambda: Vec<C64>,
    /// `N_T × N` waveform.
    pub x: CMatrix,
    /// Smallest sector margin achieved by `x`.
    pub t_star: f64,
    pub diagnostics: Diagnostics,
    pub solve_seconds: f64,
}

/// Smallest sector margin of a scaling set.
pub fn min_margin(lambda: &[C64], theta_t: f64) -> f64 {
    lambda
        .iter()
        .map(|&l| {
            let (a, b) = psk_margins(l, theta_t);
            a.min(b)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Scalings `λ_{k,n} = h_kᵀx^n / s_k^n`.
pub fn scalings_of(h: &CMatrix, block: &SymbolBlock, x: &CMatrix) -> Vec<C64> {
    let rx = h * x;
    let (k, n) = (block.users(), block.slots());
    let mut out = Vec::with_capacity(n * k);
    for slot in 0..n {
        for user in 0..k {
            out.push(rx[(user, slot)] / block.symbol(user, slot));
        }
    }
    out
}

fn lift_to_complex(lambda_hat: &RVector) -> Vec<C64> {
    let nk = lambda_hat.len() / 2;
    (0..nk).map(|i| C64::new(lambda_hat[i], lambda_hat[nk + i])).collect()
}

/// Solves the PSK waveform problem with per-slot budget `p0` (block budget `N·p0`).
pub fn solve_psk(h: &CMatrix, block: &SymbolBlock, p0: f64, theta_t: f64, opts: &SolveOptions) -> Result<PskSolution> {
    if !(p0 > 0.0) {
        return Err(Error::InvalidParameter(format!("p0 must be positive, got {p0}")));
    }
    let start = Instant::now();
    let power = block.slots() as f64 * p0;

    if opts.method == SolveMethod::Epigraph {
        right_inverse(h, opts.max_cond)?;
        let mp = psk_margin_problem(h, block, theta_t, SlotBasis::identity(block.slots()), power)?;
        let sol = solve_epigraph(&mp.problem, &opts.epigraph)?;
        let mut x = mp.waveform(&sol.w);
        let e = frobenius_sq(&x);
        if e > 0.0 {
            // margins are homogeneous in x: move the interior point onto the ball
            x *= C64::new((power / e).sqrt(), 0.0);
        }
        let lambda = scalings_of(h, block, &x);
        let lambda_hat = RVector::from_iterator(
            2 * lambda.len(),
            lambda.iter().map(|l| l.re).chain(lambda.iter().map(|l| l.im)),
        );
        let t_star = min_margin(&lambda, theta_t);
        let diagnostics = finish_diagnostics(
            SolveMethod::Epigraph,
            sol.iterations,
            true,
            sol.kkt_residual,
            None,
            &x,
            power,
            t_star,
            &lambda,
            theta_t,
        );
        return Ok(PskSolution {
            u_star: None,
            alpha0: None,
            lambda_hat,
            lambda,
            x,
            t_star,
            diagnostics,
            solve_seconds: start.elapsed().as_secs_f64(),
        });
    }

    let dual = build_psk_dual(h, block, theta_t, opts.max_cond)?;
    let qp = SimplexQp::new(QuadraticForm::Dense(dual.v.clone()), SignMask::all_nonnegative(dual.dim()))?;
    let (u, iterations, converged, residual) = match opts.method {
        SolveMethod::QpReference => {
            let s = solve_simplex_qp_reference(&qp, opts.qp_tol)?;
            (s.u, s.iterations, true, s.kkt_residual)
        }
        _ => {
            let cfg = opts.admm.clone().unwrap_or_else(AdmmConfig::psk_default);
            let out = admm_solve(&qp, &cfg)?;
            (out.solution().clone(), out.iterations, out.converged, out.delta)
        }
    };
    let (lambda_hat, alpha0, quad) = dual.recover(&u, power)?;
    let lambda = lift_to_complex(&lambda_hat);
    let x = dual.waveform(&lambda);
    let t_star = min_margin(&lambda, theta_t);
    let dual_value = (power * quad).sqrt();
    let diagnostics = finish_diagnostics(
        opts.method,
        iterations,
        converged,
        residual,
        Some(dual_value),
        &x,
        power,
        t_star,
        &lambda,
        theta_t,
    );
    Ok(PskSolution {
        u_star: Some(u),
        alpha0: Some(alpha0),
        lambda_hat,
        lambda,
        x,
        t_star,
        diagnostics,
        solve_seconds: start.elapsed().as_secs_f64(),
    })
}

#[allow(clippy::too_many_arguments)]
fn finish_diagnostics(
    method: SolveMethod,
    iterations: usize,
    converged: bool,
    residual: f64,
    dual_value: Option<f64>,
    x: &CMatrix,
    power: f64,
    t_star: f64,
    lambda: &[C64],
    theta_t: f64,
) -> Diagnostics {
    let e = frobenius_sq(x);
    let margin_viol = (t_star - min_margin(lambda, theta_t)).max(0.0);
    let power_viol = (e - power).max(0.0);
    let max_violation = margin_viol.max(power_viol);
    let power_ok = ((e - power) / power).abs() <= 1e-6;
    let dual_ok = dual_value.is_none_or(|d| (d - t_star).abs() <= 1e-3 * d.abs().max(1e-12));
    Diagnostics {
        method,
        iterations,
        converged,
        residual,
        dual_value,
        power: e,
        max_violation,
        valid: converged && power_ok && dual_ok && max_violation <= 1e-6,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::rayleigh_channel;
    use crate::modulation::{draw_block, Constellation, Modulation};

    fn qpsk() -> Constellation {
        Constellation::new(Modulation::Psk(4), false).unwrap()
    }

    #[test]
    fn scalar_instance_has_identity_lift() {
        let c = Constellation::new(Modulation::Psk(2), false).unwrap();
        let h = CMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        let block = SymbolBlock::from_symbols(&c, CMatrix::from_element(1, 1, C64::new(1.0, 0.0))).unwrap();
        let d = build_psk_dual(&h, &block, c.theta_t().unwrap(), 1e8).unwrap();
        assert!((d.g[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((d.ghat.matrix() - RMatrix::identity(2, 2)).amax() < 1e-14);
        assert!((&d.v - &d.m * d.m.transpose()).amax() < 1e-14);
    }

    #[test]
    fn dimensions_are_two_nk() {
        let ch = rayleigh_channel(4, 4, 1).unwrap();
        let block = draw_block(&qpsk(), 4, 8, 2).unwrap();
        let d = build_psk_dual(ch.h(), &block, std::f64::consts::FRAC_PI_4, 1e8).unwrap();
        assert_eq!(d.v.shape(), (64, 64));
    }

    #[test]
    fn lifted_gram_is_positive_definite() {
        for seed in 0..100u64 {
            let ch = rayleigh_channel(3, 2, seed).unwrap();
            let block = draw_block(&qpsk(), 2, 2, seed + 1000).unwrap();
            let d = build_psk_dual(ch.h(), &block, std::f64::consts::FRAC_PI_4, 1e8).unwrap();
            assert!(crate::linalg::min_eigenvalue(&d.ghat.matrix()) > 0.0);
        }
    }

    #[test]
    fn single_user_single_slot_is_matched_filter() {
        let ch = rayleigh_channel(4, 1, 9).unwrap();
        let block = draw_block(&qpsk(), 1, 1, 3).unwrap();
        let expected = ch.h().row(0).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() * 2f64.sqrt();
        for method in [SolveMethod::Epigraph, SolveMethod::QpReference, SolveMethod::Admm] {
            let sol = solve_psk(ch.h(), &block, 2.0, std::f64::consts::FRAC_PI_4, &SolveOptions::new(method)).unwrap();
            assert!((sol.t_star - expected).abs() < 1e-6 * expected, "{method}: {} vs {expected}", sol.t_star);
        }
    }

    #[test]
    fn received_block_matches_scalings() {
        let ch = rayleigh_channel(4, 3, 5).unwrap();
        let block = draw_block(&qpsk(), 3, 4, 6).unwrap();
        let sol = solve_psk(ch.h(), &block, 1.0, std::f64::consts::FRAC_PI_4, &SolveOptions::new(SolveMethod::QpReference)).unwrap();
        let rx = ch.h() * &sol.x;
        for n in 0..4 {
            for k in 0..3 {
                let want = sol.lambda[n * 3 + k] * block.symbol(k, n);
                assert!((rx[(k, n)] - want).norm() < 1e-8);
            }
        }
        assert!((frobenius_sq(&sol.x) - 4.0).abs() < 1e-9);
        assert!(sol.diagnostics.valid);
    }

    #[test]
    fn power_scaling_leaves_dual_unchanged() {
        let ch = rayleigh_channel(4, 4, 12).unwrap();
        let block = draw_block(&qpsk(), 4, 3, 13).unwrap();
        let opts = SolveOptions::new(SolveMethod::QpReference);
        let a = solve_psk(ch.h(), &block, 1.0, std::f64::consts::FRAC_PI_4, &opts).unwrap();
        let b = solve_psk(ch.h(), &block, 9.0, std::f64::consts::FRAC_PI_4, &opts).unwrap();
        assert!((b.t_star - 3.0 * a.t_star).abs() < 1e-9 * b.t_star);
        assert!((a.u_star.unwrap() - b.u_star.unwrap()).amax() < 1e-12);
    }

    #[test]
    fn per_slot_precoder_round_trip() {
        let ch = rayleigh_channel(4, 4, 21).unwrap();
        let block = draw_block(&qpsk(), 4, 3, 22).unwrap();
        let sol = solve_psk(ch.h(), &block, 1.0, std::f64::consts::FRAC_PI_4, &SolveOptions::new(SolveMethod::QpReference)).unwrap();
        for n in 0..3 {
            let s = CMatrix::from_column_slice(4, 1, &block.slot(n));
            let x = sol.x.column(n).into_owned();
            let p = &x * s.adjoint() / C64::new(s.norm_squared(), 0.0);
            assert!((&p * &s - &x).norm() < 1e-12);
        }
    }
}
