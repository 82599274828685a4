//! Block-level CI waveform design for QAM via symbol scaling.
//!
//! Each symbol is split into `s̃ = (Re s, j·Im s)` and the received component
//! pair is required to be `(γ^ℜ Re s, j·γ^ℑ Im s)`. Outer-level components
//! may be pushed outward (`γ ≥ t`); inner-level ones are pinned (`γ = t`).
//!
//! With `G̃_n = G·Ū·diag(s̃^n)` the least-energy waveform for given scalings is
//! `x^n = G̃_n γ^n` with energy `γᵀT̃γ`, `T̃ = Re(G̃ᴴG̃)`. After reordering the
//! scalings outer-first (`Ṽ = E T̃ Eᵀ`), the dual is
//!
//! ```text
//! minimize φᵀṼ⁻¹φ   subject to 1ᵀφ = 1,  φ_i ≥ 0 for outer-level i
//! ```
//!
//! and `ρ₀ = sqrt(φᵀṼ⁻¹φ / (4Np0))`, `γ = Eᵀ Ṽ⁻¹φ / (2ρ₀)`.
//!
//! Scalings are indexed `n·2K + 2k + c` with `c = 0` for the real component.

use std::time::Instant;

use crate::admm::{admm_solve, AdmmConfig};
use crate::epigraph::solve_epigraph;
use crate::linalg::{frobenius_sq, right_inverse, symmetrize, SpdFactor};
use crate::margins::{qam_margin_problem, SlotBasis};
use crate::modulation::{Constellation, ScalingSet, SymbolBlock};
use crate::simplex_qp::{solve_simplex_qp_reference, QuadraticForm, SignMask, SimplexQp};
use crate::waveform::{Diagnostics, SignMode, SolveOptions};
use crate::{CMatrix, Error, RMatrix, RVector, Result, SolveMethod, C64};

/// Where one scaling sits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScalingEntry {
    pub user: usize,
    pub slot: usize,
    /// `0` real, `1` imaginary.
    pub component: usize,
    pub class: ScalingSet,
    /// Position in the reordered dual vector.
    pub position: usize,
}

#[derive(Clone, Debug)]
pub struct QamDualData {
    pub g: CMatrix,
    /// `G̃_n` per slot (`N_T × 2K`).
    pub gtilde: Vec<CMatrix>,
    /// `T̃` in natural order.
    pub ttilde: RMatrix,
    /// `perm[i]` is the natural index of dual entry `i`.
    pub perm: Vec<usize>,
    /// Factor of `Ṽ = E T̃ Eᵀ`.
    pub vtilde: SpdFactor,
    /// Indexed naturally.
    pub entries: Vec<ScalingEntry>,
}

impl QamDualData {
    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn users(&self) -> usize {
        self.g.ncols()
    }

    pub fn slots(&self) -> usize {
        self.gtilde.len()
    }

    /// Sign mask over the reordered dual vector.
    pub fn sign_mask(&self, mode: SignMode) -> SignMask {
        SignMask::from_flags(
            self.perm
                .iter()
                .map(|&i| mode == SignMode::Strict || self.entries[i].class == ScalingSet::Exploitable)
                .collect(),
        )
    }

    /// Closed-form scalings (natural order) from a dual point: `(γ, ρ₀, φᵀṼ⁻¹φ)`.
    pub fn recover(&self, phi: &RVector, power: f64) -> Result<(RVector, f64, f64)> {
        let vphi = self.vtilde.solve(phi);
        let quad = phi.dot(&vphi);
        if !(quad > 0.0) {
            return Err(Error::Solver(format!("degenerate dual point (φᵀṼ⁻¹φ = {quad:.3e})")));
        }
        let rho0 = (quad / (4.0 * power)).sqrt();
        let mut gamma = RVector::zeros(self.dim());
        for (i, &nat) in self.perm.iter().enumerate() {
            gamma[nat] = vphi[i] / (2.0 * rho0);
        }
        Ok((gamma, rho0, quad))
    }

    /// `x^n = G̃_n γ^n`.
    pub fn waveform(&self, gamma: &RVector) -> CMatrix {
        let k2 = 2 * self.users();
        let mut x = CMatrix::zeros(self.g.nrows(), self.slots());
        for (n, gt) in self.gtilde.iter().enumerate() {
            let gn = nalgebra::DVector::from_iterator(k2, (0..k2).map(|i| C64::new(gamma[n * k2 + i], 0.0)));
            x.set_column(n, &(gt * gn));
        }
        x
    }
}

/// Builds the QAM dual data. `locater_order = false` keeps the natural order.
pub fn build_qam_dual(
    h: &CMatrix,
    block: &SymbolBlock,
    c: &Constellation,
    max_cond: f64,
    locater_order: bool,
) -> Result<QamDualData> {
    if c.kind().is_psk() {
        return Err(Error::UnsupportedModulation(format!("{} is not a QAM constellation", c.kind())));
    }
    if h.nrows() != block.users() {
        return Err(Error::InvalidParameter("channel and block disagree on the user count".into()));
    }
    let ri = right_inverse(h, max_cond)?;
    let (k, n) = (block.users(), block.slots());
    let dim = 2 * k * n;
    let mut entries = Vec::with_capacity(dim);
    let mut gtilde = Vec::with_capacity(n);
    let mut ttilde = RMatrix::zeros(dim, dim);
    for slot in 0..n {
        let mut comps = Vec::with_capacity(2 * k);
        for user in 0..k {
            let (st, class) = c.qam_decompose(block.symbol(user, slot))?;
            comps.push(st[0]);
            comps.push(st[1]);
            for (component, cl) in [(0, class.real), (1, class.imag)] {
                entries.push(ScalingEntry {
                    user,
                    slot,
                    component,
                    class: cl,
                    position: 0,
                });
            }
        }
        let gt = CMatrix::from_fn(ri.g.nrows(), 2 * k, |a, j| ri.g[(a, j / 2)] * comps[j]);
        let block_gram = gt.adjoint() * &gt;
        let base = slot * 2 * k;
        for i in 0..2 * k {
            for j in 0..2 * k {
                ttilde[(base + i, base + j)] = block_gram[(i, j)].re;
            }
        }
        gtilde.push(gt);
    }
    symmetrize(&mut ttilde);

    let mut perm: Vec<usize> = (0..dim).collect();
    if locater_order {
        let key = |i: &usize| {
            let e = &entries[*i];
            (e.class != ScalingSet::Exploitable, e.user, e.slot, e.component)
        };
        perm.sort_by_key(key);
    }
    for (pos, &nat) in perm.iter().enumerate() {
        entries[nat].position = pos;
    }
    // T̃ is block diagonal by slot; Ṽ keeps that structure behind the permutation
    let k2 = 2 * k;
    let blocks = (0..n).map(|slot| ttilde.view((slot * k2, slot * k2), (k2, k2)).into_owned()).collect();
    let vtilde = SpdFactor::block_diagonal(blocks, Some(perm.clone()), "Ṽ", max_cond * max_cond)?;
    Ok(QamDualData {
        g: ri.g,
        gtilde,
        ttilde,
        perm,
        vtilde,
        entries,
    })
}

#[derive(Clone, Debug)]
pub struct QamSolution {
    /// Dual point in the reordered coordinates; absent on the epigraph path.
    pub phi_star: Option<RVector>,
    pub rho0: Option<f64>,
    /// Scalings in natural order.
    pub gamma: RVector,
    pub x: CMatrix,
    pub t_star: f64,
    pub diagnostics: Diagnostics,
    pub solve_seconds: f64,
}

impl QamSolution {
    pub fn gamma_at(&self, k_users: usize, user: usize, slot: usize, component: usize) -> f64 {
        self.gamma[slot * 2 * k_users + 2 * user + component]
    }
}

/// Scalings `γ` read back from the received block.
pub fn scalings_of(h: &CMatrix, block: &SymbolBlock, x: &CMatrix) -> RVector {
    let rx = h * x;
    let (k, n) = (block.users(), block.slots());
    let mut g = RVector::zeros(2 * k * n);
    for slot in 0..n {
        for user in 0..k {
            let s = block.symbol(user, slot);
            g[slot * 2 * k + 2 * user] = rx[(user, slot)].re / s.re;
            g[slot * 2 * k + 2 * user + 1] = rx[(user, slot)].im / s.im;
        }
    }
    g
}

fn classes(block: &SymbolBlock, c: &Constellation) -> Result<Vec<ScalingSet>> {
    let mut out = Vec::with_capacity(2 * block.users() * block.slots());
    for slot in 0..block.slots() {
        for user in 0..block.users() {
            let (_, cl) = c.qam_decompose(block.symbol(user, slot))?;
            out.push(cl.real);
            out.push(cl.imag);
        }
    }
    Ok(out)
}

/// Common value of the pinned scalings, or the smallest outer scaling when
/// nothing is pinned.
pub fn achieved_margin(gamma: &RVector, classes: &[ScalingSet]) -> f64 {
    let fixed: Vec<f64> = gamma
        .iter()
        .zip(classes)
        .filter(|(_, c)| **c == ScalingSet::Fixed)
        .map(|(g, _)| *g)
        .collect();
    if fixed.is_empty() {
        gamma.iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        fixed.iter().sum::<f64>() / fixed.len() as f64
    }
}

fn violation(gamma: &RVector, classes: &[ScalingSet], t: f64) -> f64 {
    gamma
        .iter()
        .zip(classes)
        .map(|(g, c)| match c {
            ScalingSet::Fixed => (g - t).abs(),
            ScalingSet::Exploitable => (t - g).max(0.0),
        })
        .fold(0.0, f64::max)
}

pub fn solve_qam(
    h: &CMatrix,
    block: &SymbolBlock,
    p0: f64,
    c: &Constellation,
    opts: &SolveOptions,
) -> Result<QamSolution> {
    if !(p0 > 0.0) {
        return Err(Error::InvalidParameter(format!("p0 must be positive, got {p0}")));
    }
    let start = Instant::now();
    let power = block.slots() as f64 * p0;
    let cls = classes(block, c)?;

    if opts.method == SolveMethod::Epigraph {
        right_inverse(h, opts.max_cond)?;
        let mp = qam_margin_problem(h, block, c, SlotBasis::identity(block.slots()), power)?;
        let sol = solve_epigraph(&mp.problem, &opts.epigraph)?;
        let mut x = mp.waveform(&sol.w);
        let e = frobenius_sq(&x);
        if e > 0.0 && sol.t > 0.0 {
            x *= C64::new((power / e).sqrt(), 0.0);
        }
        let gamma = scalings_of(h, block, &x);
        let t_star = achieved_margin(&gamma, &cls);
        let diagnostics = diagnose(SolveMethod::Epigraph, sol.iterations, true, sol.kkt_residual, None, &x, power, &gamma, &cls, t_star);
        return Ok(QamSolution {
            phi_star: None,
            rho0: None,
            gamma,
            x,
            t_star,
            diagnostics,
            solve_seconds: start.elapsed().as_secs_f64(),
        });
    }

    let dual = build_qam_dual(h, block, c, opts.max_cond, opts.locater_order)?;
    let qp = SimplexQp::new(QuadraticForm::InverseOf(dual.vtilde.clone()), dual.sign_mask(opts.sign_mode))?;
    let (phi, iterations, converged, residual) = match opts.method {
        SolveMethod::QpReference => {
            let s = solve_simplex_qp_reference(&qp, opts.qp_tol)?;
            (s.u, s.iterations, true, s.kkt_residual)
        }
        _ => {
            let cfg = opts.admm.clone().unwrap_or_else(AdmmConfig::qam_default);
            let out = admm_solve(&qp, &cfg)?;
            (out.solution().clone(), out.iterations, out.converged, out.delta)
        }
    };
    let (gamma, rho0, quad) = dual.recover(&phi, power)?;
    let x = dual.waveform(&gamma);
    let t_star = achieved_margin(&gamma, &cls);
    let dual_value = (power * quad).sqrt();
    let diagnostics = diagnose(opts.method, iterations, converged, residual, Some(dual_value), &x, power, &gamma, &cls, t_star);
    Ok(QamSolution {
        phi_star: Some(phi),
        rho0: Some(rho0),
        gamma,
        x,
        t_star,
        diagnostics,
        solve_seconds: start.elapsed().as_secs_f64(),
    })
}

#[allow(clippy::too_many_arguments)]
fn diagnose(
    method: SolveMethod,
    iterations: usize,
    converged: bool,
    residual: f64,
    dual_value: Option<f64>,
    x: &CMatrix,
    power: f64,
    gamma: &RVector,
    cls: &[ScalingSet],
    t_star: f64,
) -> Diagnostics {
    let e = frobenius_sq(x);
    let tol = 1e-6 * t_star.abs().max(1.0);
    let max_violation = violation(gamma, cls, t_star).max((e - power).max(0.0));
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
        valid: converged && power_ok && dual_ok && max_violation <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::rayleigh_channel;
    use crate::modulation::{draw_block, Modulation};

    fn qam16() -> Constellation {
        Constellation::new(Modulation::Qam(16), false).unwrap()
    }

    fn block_of(c: &Constellation, k: usize, syms: &[C64]) -> SymbolBlock {
        let n = syms.len() / k;
        SymbolBlock::from_symbols(c, CMatrix::from_column_slice(k, n, syms)).unwrap()
    }

    #[test]
    fn corner_symbol_needs_no_reordering() {
        let c = qam16();
        let ch = rayleigh_channel(2, 1, 1).unwrap();
        let b = block_of(&c, 1, &[C64::new(3.0, 3.0)]);
        let d = build_qam_dual(ch.h(), &b, &c, 1e8, true).unwrap();
        assert_eq!(d.perm, vec![0, 1]);
        assert!(d.entries.iter().all(|e| e.class == ScalingSet::Exploitable));
    }

    #[test]
    fn inner_symbol_is_fixed() {
        let c = qam16();
        let ch = rayleigh_channel(2, 1, 1).unwrap();
        let b = block_of(&c, 1, &[C64::new(1.0, 1.0)]);
        let d = build_qam_dual(ch.h(), &b, &c, 1e8, true).unwrap();
        assert!(d.entries.iter().all(|e| e.class == ScalingSet::Fixed));
    }

    #[test]
    fn dimensions_and_permutation() {
        let c = qam16();
        let ch = rayleigh_channel(2, 2, 4).unwrap();
        let b = draw_block(&c, 2, 4, 5).unwrap();
        let d = build_qam_dual(ch.h(), &b, &c, 1e8, true).unwrap();
        assert_eq!(d.vtilde.dim(), 16);
        let mut sorted = d.perm.clone();
        sorted.sort();
        assert_eq!(sorted, (0..16).collect::<Vec<_>>());
        // outer-level entries first
        let first_fixed = d.perm.iter().position(|&i| d.entries[i].class == ScalingSet::Fixed).unwrap_or(16);
        assert!(d.perm[first_fixed..].iter().all(|&i| d.entries[i].class == ScalingSet::Fixed));
    }

    #[test]
    fn all_inner_block_pins_every_scaling() {
        let c = qam16();
        let ch = rayleigh_channel(3, 2, 7).unwrap();
        let b = block_of(&c, 2, &[C64::new(1.0, 1.0), C64::new(-1.0, 1.0), C64::new(1.0, -1.0), C64::new(-1.0, -1.0)]);
        let sol = solve_qam(ch.h(), &b, 1.0, &c, &SolveOptions::new(SolveMethod::QpReference)).unwrap();
        assert!(sol.gamma.iter().all(|g| (g - sol.t_star).abs() < 1e-9));
        let rx = ch.h() * &sol.x;
        for n in 0..2 {
            for k in 0..2 {
                assert!((rx[(k, n)] - b.symbol(k, n) * sol.t_star).norm() < 1e-9);
            }
        }
        assert!((frobenius_sq(&sol.x) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn received_block_follows_scalings() {
        let c = qam16();
        let ch = rayleigh_channel(4, 3, 3).unwrap();
        let b = draw_block(&c, 3, 3, 8).unwrap();
        let sol = solve_qam(ch.h(), &b, 1.0, &c, &SolveOptions::new(SolveMethod::QpReference)).unwrap();
        let rx = ch.h() * &sol.x;
        for n in 0..3 {
            for k in 0..3 {
                let s = b.symbol(k, n);
                let want = C64::new(sol.gamma_at(3, k, n, 0) * s.re, sol.gamma_at(3, k, n, 1) * s.im);
                assert!((rx[(k, n)] - want).norm() < 1e-8);
            }
        }
        assert!(sol.diagnostics.valid, "{:?}", sol.diagnostics);
    }

    #[test]
    fn ordering_does_not_change_the_waveform() {
        let c = qam16();
        let ch = rayleigh_channel(3, 3, 14).unwrap();
        let b = draw_block(&c, 3, 2, 15).unwrap();
        let mut opts = SolveOptions::new(SolveMethod::QpReference);
        let a = solve_qam(ch.h(), &b, 1.0, &c, &opts).unwrap();
        opts.locater_order = false;
        let n = solve_qam(ch.h(), &b, 1.0, &c, &opts).unwrap();
        assert!((&a.x - &n.x).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-8);
    }
}
