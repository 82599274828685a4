//! Dense log-barrier interior-point solver for
//!
//! ```text
//! maximize t   subject to   F_i w ≥ t  (inequality rows)
//!                           F_j w = t  (equality rows)
//!                           ‖w‖² ≤ P
//! ```
//!
//! This is the shared shape of the nonlinear PSK/QAM waveform problems and of
//! block-level CI precoding once the decision variable is real-lifted.
//!
//! Equality rows are eliminated first: `(w, t)` is written in an orthonormal
//! basis of the subspace they define, so they hold exactly throughout.
//! Inequality rows that vanish identically on that subspace are dropped.
//! The rest follow the central path of
//! `−τ t − Σ log(F_i w − t) − log(P − ‖w‖²)` with damped Newton steps from a
//! strictly interior start (`w = 0, t = −1` without equalities, otherwise a
//! short phase-one solve). On return the duality gap `m/τ` is below
//! `tol · max(1, |t|)`.

use crate::{Error, RMatrix, RVector, Result};

#[derive(Clone, Debug)]
pub struct EpigraphProblem {
    /// `R × D` margin map.
    pub rows: RMatrix,
    /// `true` marks an equality row.
    pub equality: Vec<bool>,
    /// Power budget `P` on `‖w‖²`.
    pub power: f64,
}

impl EpigraphProblem {
    pub fn new(rows: RMatrix, equality: Vec<bool>, power: f64) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::InvalidParameter("epigraph problem needs at least one row and one variable".into()));
        }
        if equality.len() != rows.nrows() {
            return Err(Error::InvalidParameter("equality mask length must match row count".into()));
        }
        if !(power > 0.0) {
            return Err(Error::InvalidParameter(format!("power budget must be positive, got {power}")));
        }
        if rows.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("margin rows must be finite".into()));
        }
        Ok(EpigraphProblem { rows, equality, power })
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// Margins `F w`.
    pub fn margins(&self, w: &RVector) -> RVector {
        &self.rows * w
    }

    /// Largest violation of the constraints at `(w, t)`.
    pub fn violation(&self, w: &RVector, t: f64) -> f64 {
        let m = self.margins(w);
        let mut worst = (w.norm_squared() - self.power).max(0.0);
        for (i, &v) in m.iter().enumerate() {
            let viol = if self.equality[i] { (v - t).abs() } else { (t - v).max(0.0) };
            worst = worst.max(viol);
        }
        worst
    }
}

#[derive(Clone, Debug)]
pub struct EpigraphSolution {
    pub w: RVector,
    pub t: f64,
    /// Newton steps taken.
    pub iterations: usize,
    /// Duality gap bound `m/τ` at exit.
    pub kkt_residual: f64,
    /// The equality rows admit only `t = 0`; the returned point is `w = 0`.
    pub degenerate: bool,
}

#[derive(Clone, Debug)]
pub struct EpigraphOptions {
    /// Relative duality-gap target.
    pub tol: f64,
    /// Factor by which the gap shrinks per centering round.
    pub centering: f64,
    pub max_newton: usize,
}

impl Default for EpigraphOptions {
    fn default() -> Self {
        EpigraphOptions {
            tol: 1e-8,
            centering: 0.1,
            max_newton: 200,
        }
    }
}

impl EpigraphOptions {
    pub fn with_tol(tol: f64) -> Self {
        EpigraphOptions { tol, ..Default::default() }
    }
}

/// `max cᵀv  s.t.  G v > 0,  vᵀMv < P` on the central path.
struct Barrier {
    c: RVector,
    g: RMatrix,
    m: RMatrix,
    power: f64,
}

enum Stop {
    Optimal,
    /// Return as soon as `cᵀv > 0`.
    Positive,
}

impl Barrier {
    fn interior(&self, v: &RVector) -> bool {
        v.dot(&(&self.m * v)) < self.power && (&self.g * v).iter().all(|&x| x > 0.0)
    }

    fn value(&self, v: &RVector, tau: f64) -> f64 {
        let slack = self.power - v.dot(&(&self.m * v));
        -tau * self.c.dot(v) - (&self.g * v).iter().map(|x| x.ln()).sum::<f64>() - slack.ln()
    }

    fn derivatives(&self, v: &RVector, tau: f64) -> (RVector, RMatrix) {
        let mv = &self.m * v;
        let slack = self.power - v.dot(&mv);
        let inv_r = (&self.g * v).map(|x| 1.0 / x);
        let grad = -&self.c * tau - self.g.transpose() * &inv_r + &mv * (2.0 / slack);
        let mut scaled = self.g.clone();
        for (mut row, &ir) in scaled.row_iter_mut().zip(inv_r.iter()) {
            row *= ir;
        }
        let hess = scaled.transpose() * &scaled + &self.m * (2.0 / slack) + &mv * mv.transpose() * (4.0 / (slack * slack));
        (grad, hess)
    }

    /// Follows the central path from the strictly interior `v`. `steps` is
    /// shared with earlier phases so the Newton cap covers the whole solve.
    fn run(&self, mut v: RVector, opts: &EpigraphOptions, steps: &mut usize, stop: Stop) -> std::result::Result<(RVector, f64), (RVector, f64)> {
        let m = (self.g.nrows() + 1) as f64;
        let mut tau = m / self.power.sqrt().max(1e-12);
        loop {
            // near the end the decrement can sit at the roundoff floor; a
            // round that stops making progress hands over to the next τ
            for _ in 0..50 {
                if *steps >= opts.max_newton {
                    return Err((v, m / tau));
                }
                let (grad, hess) = self.derivatives(&v, tau);
                let dv = newton_direction(hess, &grad);
                let slope = grad.dot(&dv);
                if -slope * 0.5 <= 1e-9 {
                    break;
                }
                let f0 = self.value(&v, tau);
                let mut s = 1.0;
                while !self.interior(&(&v + &dv * s)) && s > 1e-14 {
                    s *= 0.5;
                }
                while s > 1e-14 && self.value(&(&v + &dv * s), tau) > f0 + 0.01 * s * slope {
                    s *= 0.5;
                }
                if s <= 1e-14 {
                    break;
                }
                v += &dv * s;
                *steps += 1;
                if matches!(stop, Stop::Positive) && self.c.dot(&v) > 0.0 {
                    return Ok((v, m / tau));
                }
            }
            let gap = m / tau;
            if gap <= opts.tol * self.c.dot(&v).abs().max(1.0) {
                return Ok((v, gap));
            }
            tau /= opts.centering;
        }
    }
}

fn newton_direction(hess: RMatrix, grad: &RVector) -> RVector {
    let n = hess.nrows();
    if let Some(ch) = hess.clone().cholesky() {
        return ch.solve(&(-grad));
    }
    let shift = 1e-12 * hess.diagonal().amax().max(1e-300);
    let reg = hess + RMatrix::identity(n, n) * shift;
    match reg.clone().cholesky() {
        Some(ch) => ch.solve(&(-grad)),
        None => reg.lu().solve(&(-grad)).unwrap_or_else(|| RVector::zeros(n)),
    }
}

/// Orthonormal basis of `{(w, t) : F_E w = t·1}` as columns.
fn equality_subspace(p: &EpigraphProblem, eq: &[usize]) -> RMatrix {
    let d = p.dim();
    if eq.is_empty() {
        return RMatrix::identity(d + 1, d + 1);
    }
    // pad with zero rows so the SVD returns a complete right basis
    let mut a = RMatrix::zeros(eq.len().max(d + 1), d + 1);
    for (r, &i) in eq.iter().enumerate() {
        a.view_mut((r, 0), (1, d)).copy_from(&p.rows.row(i));
        a[(r, d)] = -1.0;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let tol = 1e-9 * svd.singular_values.max().max(1e-300);
    let null: Vec<usize> = (0..d + 1).filter(|&j| svd.singular_values[j] <= tol).collect();
    RMatrix::from_fn(d + 1, null.len(), |i, j| v_t[(null[j], i)])
}

pub fn solve_epigraph(p: &EpigraphProblem, opts: &EpigraphOptions) -> Result<EpigraphSolution> {
    let d = p.dim();
    let mut eq: Vec<usize> = (0..p.rows.nrows()).filter(|&i| p.equality[i]).collect();
    let mut steps = 0usize;

    // Each pass either finds a strictly interior start or moves at least one
    // implicitly tight row into the equality set, so it terminates.
    loop {
        // (w, t) = B v keeps every equality row exact
        let basis = equality_subspace(p, &eq);
        let q = basis.ncols();
        let c: RVector = basis.row(d).transpose();
        if q == 0 || c.amax() <= 1e-12 {
            return Ok(EpigraphSolution {
                w: RVector::zeros(d),
                t: 0.0,
                iterations: steps,
                kkt_residual: 0.0,
                degenerate: true,
            });
        }
        let bw = basis.rows(0, d);
        let mut kept = Vec::new();
        let mut origin = Vec::new();
        for i in (0..p.rows.nrows()).filter(|i| !eq.contains(i)) {
            let row = p.rows.row(i) * &bw - basis.row(d);
            // rows that vanish on the subspace hold with equality everywhere
            if row.norm() > 1e-9 * (p.rows.row(i).norm() + 1.0) {
                kept.push(row);
                origin.push(i);
            }
        }
        let g = if kept.is_empty() { RMatrix::zeros(0, q) } else { RMatrix::from_rows(&kept) };
        let core = Barrier {
            c,
            g,
            m: bw.transpose() * bw,
            power: p.power,
        };
        let cap = |v: &RVector, gap: f64, steps: usize| {
            let wt = &basis * v;
            Error::EpigraphIterationCap {
                iterations: steps,
                best_t: wt[d],
                best_w: wt.rows(0, d).iter().copied().collect(),
                gap,
            }
        };

        let v0 = if eq.is_empty() {
            let mut v = RVector::zeros(q);
            v[d] = -1.0;
            v
        } else if core.g.nrows() == 0 {
            RVector::zeros(q)
        } else {
            match phase_one(&core, opts, &mut steps) {
                Ok(v) => v,
                Err(PhaseOne::Tight(rows)) => {
                    eq.extend(rows.into_iter().map(|r| origin[r]));
                    eq.sort_unstable();
                    continue;
                }
                Err(PhaseOne::Cap(v, gap)) => return Err(cap(&v, gap, steps)),
            }
        };
        let (v, gap) = core.run(v0, opts, &mut steps, Stop::Optimal).map_err(|(v, gap)| cap(&v, gap, steps))?;
        let wt = &basis * v;
        return Ok(EpigraphSolution {
            w: wt.rows(0, d).into_owned(),
            t: wt[d],
            iterations: steps,
            kkt_residual: gap,
            degenerate: false,
        });
    }
}

enum PhaseOne {
    /// No strictly positive point exists; these rows vanish on every
    /// feasible point and act as equalities.
    Tight(Vec<usize>),
    Cap(RVector, f64),
}

/// Strictly feasible start for `core`: maximizes the smallest row value over
/// the unit ball until it turns positive, then scales into the power ball.
///
/// When the best value is zero the central path ends at the analytic center
/// of the optimal face, where only the implicitly tight rows have vanishing
/// slack. Those rows are reported instead.
fn phase_one(core: &Barrier, opts: &EpigraphOptions, steps: &mut usize) -> std::result::Result<RVector, PhaseOne> {
    let q = core.g.ncols();
    let mut g = RMatrix::zeros(core.g.nrows(), q + 1);
    g.view_mut((0, 0), (core.g.nrows(), q)).copy_from(&core.g);
    g.column_mut(q).fill(-1.0);
    let mut m = RMatrix::zeros(q + 1, q + 1);
    m.view_mut((0, 0), (q, q)).fill_with_identity();
    let mut c = RVector::zeros(q + 1);
    c[q] = 1.0;
    let aux = Barrier { c, g, m, power: 1.0 };
    let mut start = RVector::zeros(q + 1);
    start[q] = -1.0;
    let (x, gap) = aux
        .run(start, opts, steps, Stop::Positive)
        .map_err(|(x, gap)| PhaseOne::Cap(x.rows(0, q).into_owned(), gap))?;
    let mut v = x.rows(0, q).into_owned();
    if x[q] <= 0.0 {
        // tight rows keep a slack of the order of the gap; every other row
        // keeps one comparable to its norm since v stays inside the unit ball
        let slack = &aux.g * &x;
        let tol = gap.max(1e-12).sqrt();
        let tight: Vec<usize> = (0..slack.len()).filter(|&i| slack[i] <= tol * core.g.row(i).norm()).collect();
        return Err(if tight.is_empty() { PhaseOne::Cap(v, gap) } else { PhaseOne::Tight(tight) });
    }
    let e = v.dot(&(&core.m * &v));
    if e > 0.0 {
        v *= (0.5 * core.power / e).sqrt();
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_two_variable_problem() {
        let p = EpigraphProblem::new(RMatrix::identity(2, 2), vec![false, false], 1.0).unwrap();
        let sol = solve_epigraph(&p, &EpigraphOptions::default()).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((sol.t - h).abs() < 1e-7, "t = {}", sol.t);
        assert!((sol.w[0] - h).abs() < 1e-6 && (sol.w[1] - h).abs() < 1e-6);
    }

    #[test]
    fn single_row() {
        let p = EpigraphProblem::new(RMatrix::from_element(1, 1, 1.0), vec![false], 4.0).unwrap();
        let sol = solve_epigraph(&p, &EpigraphOptions::default()).unwrap();
        assert!((sol.t - 2.0).abs() < 1e-7);
        assert!((sol.w[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn equality_rows_are_met() {
        // maximize t with w1 >= t, w2 = t, w3 free, ‖w‖² <= 2  →  w = (1, 1, 0), t = 1
        let rows = RMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let p = EpigraphProblem::new(rows, vec![false, true], 2.0).unwrap();
        let sol = solve_epigraph(&p, &EpigraphOptions::default()).unwrap();
        assert!((sol.t - 1.0).abs() < 1e-7);
        assert!(p.violation(&sol.w, sol.t) < 1e-7);
        assert!((sol.w[1] - sol.t).abs() < 1e-9);
    }

    #[test]
    fn only_equality_rows() {
        // w1 = t, w1 + w2 = t, ‖w‖² <= 1  →  w = (1, 0), t = 1
        let rows = RMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let p = EpigraphProblem::new(rows, vec![true, true], 1.0).unwrap();
        let sol = solve_epigraph(&p, &EpigraphOptions::default()).unwrap();
        assert!((sol.t - 1.0).abs() < 1e-7, "t = {}", sol.t);
    }

    #[test]
    fn inconsistent_equalities_pin_zero() {
        let rows = RMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let p = EpigraphProblem::new(rows, vec![true, true], 1.0).unwrap();
        let sol = solve_epigraph(&p, &EpigraphOptions::default()).unwrap();
        assert!(sol.degenerate);
        assert_eq!(sol.t, 0.0);
    }

    #[test]
    fn implicitly_tight_rows_are_found() {
        // with w1 = t the rows w1 + w2 ≥ t and w1 − w2 ≥ t leave only w2 = 0
        let rows = RMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, -1.0]);
        let p = EpigraphProblem::new(rows, vec![true, false, false], 4.0).unwrap();
        let sol = solve_epigraph(&p, &EpigraphOptions::default()).unwrap();
        assert!(!sol.degenerate);
        assert!((sol.t - 2.0).abs() < 1e-7, "t = {}", sol.t);
        assert!(sol.w[1].abs() < 1e-7);
    }

    #[test]
    fn homogeneity_in_power() {
        let rows = RMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.3, 1.0, 0.5, 0.5]);
        let p1 = EpigraphProblem::new(rows.clone(), vec![false; 3], 1.0).unwrap();
        let p9 = EpigraphProblem::new(rows, vec![false; 3], 9.0).unwrap();
        let a = solve_epigraph(&p1, &EpigraphOptions::default()).unwrap();
        let b = solve_epigraph(&p9, &EpigraphOptions::default()).unwrap();
        assert!((b.t - 3.0 * a.t).abs() < 1e-7);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(EpigraphProblem::new(RMatrix::identity(2, 2), vec![false], 1.0).is_err());
        assert!(EpigraphProblem::new(RMatrix::identity(2, 2), vec![false; 2], 0.0).is_err());
    }
}
