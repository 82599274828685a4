//! Simplex-constrained quadratic programs and the exact active-set reference
//! solver.
//!
//! Both dual problems have the form
//!
//! ```text
//! minimize uᵀ Q u   subject to   1ᵀu = 1,   u_i ≥ 0 for masked i
//! ```
//!
//! with `Q = V` for PSK and `Q = Ṽ⁻¹` for QAM.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{min_eigenvalue, SpdFactor};
use crate::{Error, RMatrix, RVector, Result};

/// Handle to a symmetric positive semidefinite quadratic form.
#[derive(Clone, Debug)]
pub enum QuadraticForm {
    /// `Q` stored explicitly.
    Dense(RMatrix),
    /// `Q = A⁻¹` for a factored SPD `A`; `Q` is never formed on the ADMM path.
    InverseOf(SpdFactor),
}

impl QuadraticForm {
    pub fn dim(&self) -> usize {
        match self {
            QuadraticForm::Dense(q) => q.nrows(),
            QuadraticForm::InverseOf(f) => f.dim(),
        }
    }

    pub fn apply(&self, u: &RVector) -> RVector {
        match self {
            QuadraticForm::Dense(q) => q * u,
            QuadraticForm::InverseOf(f) => f.solve(u),
        }
    }

    pub fn value(&self, u: &RVector) -> f64 {
        u.dot(&self.apply(u))
    }

    /// Group label per coordinate when `Q` is block diagonal up to a
    /// permutation; entries in different groups never interact.
    pub fn groups(&self) -> Option<Vec<usize>> {
        match self {
            QuadraticForm::InverseOf(f) if f.block_count() > 1 => Some(f.block_labels()),
            _ => None,
        }
    }

    /// Explicit `Q`. Forms the inverse for [`QuadraticForm::InverseOf`].
    pub fn to_dense(&self) -> RMatrix {
        match self {
            QuadraticForm::Dense(q) => q.clone(),
            QuadraticForm::InverseOf(f) => {
                let mut q = f.inverse();
                crate::linalg::symmetrize(&mut q);
                q
            }
        }
    }
}

/// Which entries of `u` carry a nonnegativity constraint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignMask(Vec<bool>);

impl SignMask {
    pub fn all_nonnegative(n: usize) -> Self {
        SignMask(vec![true; n])
    }

    pub fn from_flags(flags: Vec<bool>) -> Self {
        SignMask(flags)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_nonnegative(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn flags(&self) -> &[bool] {
        &self.0
    }

    pub fn is_all_nonnegative(&self) -> bool {
        self.0.iter().all(|&b| b)
    }
}

/// A quadratic form over the (possibly partially signed) probability simplex.
#[derive(Clone, Debug)]
pub struct SimplexQp {
    pub form: QuadraticForm,
    pub mask: SignMask,
}

impl SimplexQp {
    pub fn new(form: QuadraticForm, mask: SignMask) -> Result<Self> {
        if form.dim() != mask.len() || mask.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "sign mask length {} does not match form dimension {}",
                mask.len(),
                form.dim()
            )));
        }
        Ok(SimplexQp { form, mask })
    }

    pub fn dim(&self) -> usize {
        self.form.dim()
    }

    pub fn objective(&self, u: &RVector) -> f64 {
        self.form.value(u)
    }

    /// KKT residual of a candidate: stationarity on the support, dual
    /// feasibility on the active bounds, and primal feasibility.
    pub fn kkt_residual(&self, u: &RVector) -> f64 {
        let g = self.form.apply(u) * 2.0;
        let n = u.len();
        let active_tol = 1e-12;
        let free: Vec<usize> = (0..n)
            .filter(|&i| !self.mask.is_nonnegative(i) || u[i] > active_tol)
            .collect();
        let nu = if free.is_empty() {
            g.min()
        } else {
            free.iter().map(|&i| g[i]).sum::<f64>() / free.len() as f64
        };
        let mut res = (u.sum() - 1.0).abs();
        for i in 0..n {
            let r = if free.contains(&i) {
                (g[i] - nu).abs()
            } else {
                (nu - g[i]).max(0.0)
            };
            res = res.max(r);
            if self.mask.is_nonnegative(i) {
                res = res.max((-u[i]).max(0.0));
            }
        }
        res
    }
}

#[derive(Clone, Debug)]
pub struct SimplexQpSolution {
    pub u: RVector,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// Exact primal active-set method.
///
/// Starts at the barycenter with an empty working set, solves the
/// equality-constrained subproblem on the free coordinates exactly, and adds
/// or drops one bound per iteration.
pub fn solve_simplex_qp_reference(qp: &SimplexQp, tol: f64) -> Result<SimplexQpSolution> {
    let q = qp.form.to_dense();
    let n = q.nrows();
    // an inverse of a factored SPD matrix is positive definite already
    if let QuadraticForm::Dense(_) = qp.form {
        let lmin = min_eigenvalue(&q);
        if lmin < -1e-9 * q.amax().max(1.0) {
            return Err(Error::NotPsd(lmin));
        }
    }
    active_set(qp, &q, RVector::from_element(n, 1.0 / n as f64), vec![false; n], tol)
}

/// Active-set refinement warm-started at a feasible point, typically an ADMM
/// iterate. Bounds that are exactly zero at `start` begin in the working set,
/// so a correct support guess finishes in one linear solve.
pub fn polish_simplex_qp(qp: &SimplexQp, start: &RVector, tol: f64) -> Result<SimplexQpSolution> {
    let n = qp.dim();
    if start.len() != n || (start.sum() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter("polish start must lie on the simplex".into()));
    }
    let working: Vec<bool> = (0..n).map(|i| qp.mask.is_nonnegative(i) && start[i] <= 0.0).collect();
    let mut u = start.clone();
    for i in (0..n).filter(|&i| qp.mask.is_nonnegative(i)) {
        u[i] = u[i].max(0.0);
    }
    let q = qp.form.to_dense();
    active_set(qp, &q, u, working, tol)
}

fn active_set(qp: &SimplexQp, q: &RMatrix, mut u: RVector, mut working: Vec<bool>, tol: f64) -> Result<SimplexQpSolution> {
    let n = q.nrows();
    let groups = qp.form.groups();
    let groups = groups.as_deref();
    let scale = q.amax().max(1.0);
    let max_iter = 20 * n + 100;

    for iter in 0..max_iter {
        let free: Vec<usize> = (0..n).filter(|&i| !working[i]).collect();
        let g = q * &u * 2.0;
        let p = equality_step(q, groups, &free, &g);

        let step_norm = p.iter().map(|x| x.abs()).fold(0.0f64, f64::max);
        if step_norm <= 1e-13 * (1.0 + u.amax()) {
            // multiplier of the sum constraint from the free gradient
            let nu = free.iter().map(|&i| g[i]).sum::<f64>() / free.len().max(1) as f64;
            let mut worst: Option<(usize, f64)> = None;
            for i in (0..n).filter(|&i| working[i]) {
                let lambda = g[i] - nu;
                if lambda < -tol * scale && worst.is_none_or(|(_, w)| lambda < w) {
                    worst = Some((i, lambda));
                }
            }
            match worst {
                Some((i, _)) => working[i] = false,
                None => {
                    for i in (0..n).filter(|&i| working[i]) {
                        u[i] = 0.0;
                    }
                    let objective = u.dot(&(q * &u));
                    let kkt_residual = qp.kkt_residual(&u);
                    return Ok(SimplexQpSolution {
                        u,
                        objective,
                        iterations: iter + 1,
                        kkt_residual,
                    });
                }
            }
        } else {
            let mut alpha = 1.0;
            let mut blocking = None;
            for (idx, &i) in free.iter().enumerate() {
                if qp.mask.is_nonnegative(i) && p[idx] < 0.0 {
                    let ratio = -u[i] / p[idx];
                    if ratio < alpha {
                        alpha = ratio;
                        blocking = Some(i);
                    }
                }
            }
            for (idx, &i) in free.iter().enumerate() {
                u[i] += alpha * p[idx];
            }
            if let Some(i) = blocking {
                u[i] = 0.0;
                working[i] = true;
            }
        }
    }
    Err(Error::NotConverged {
        solver: "active-set simplex QP",
        iterations: max_iter,
        residual: qp.kkt_residual(&u),
    })
}

/// Minimizes `(u+p)ᵀQ(u+p)` over steps `p` supported on `free` with `Σp = 0`.
fn equality_step(q: &RMatrix, groups: Option<&[usize]>, free: &[usize], g: &RVector) -> RVector {
    if let Some(step) = groups.and_then(|gr| grouped_step(q, gr, free, g)) {
        return step;
    }
    let m = free.len();
    let mut kkt = DMatrix::<f64>::zeros(m + 1, m + 1);
    let mut rhs = DVector::<f64>::zeros(m + 1);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            kkt[(a, b)] = 2.0 * q[(i, j)];
        }
        kkt[(a, m)] = -1.0;
        kkt[(m, a)] = 1.0;
        rhs[a] = -g[i];
    }
    let sol = match kkt.clone().lu().solve(&rhs) {
        Some(s) if s.iter().all(|x| x.is_finite()) => s,
        // singular reduced Hessian (PSD but not PD): minimum-norm step
        _ => kkt
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .unwrap_or_else(|_| DVector::zeros(m + 1)),
    };
    sol.rows(0, m).into_owned()
}

/// As [`equality_step`] when `Q` has no coupling across groups: each group
/// is solved on its own and the sum constraint fixes one scalar multiplier.
/// `None` if a group block is not positive definite.
fn grouped_step(q: &RMatrix, groups: &[usize], free: &[usize], g: &RVector) -> Option<RVector> {
    let mut members: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (a, &i) in free.iter().enumerate() {
        members.entry(groups[i]).or_default().push(a);
    }
    let m = free.len();
    let (mut ones_part, mut grad_part) = (RVector::zeros(m), RVector::zeros(m));
    for local in members.values() {
        let k = local.len();
        let block = RMatrix::from_fn(k, k, |r, c| 2.0 * q[(free[local[r]], free[local[c]])]);
        let chol = block.cholesky()?;
        let a = chol.solve(&RVector::from_element(k, 1.0));
        let b = chol.solve(&RVector::from_iterator(k, local.iter().map(|&l| -g[free[l]])));
        for (r, &l) in local.iter().enumerate() {
            ones_part[l] = a[r];
            grad_part[l] = b[r];
        }
    }
    let nu = -grad_part.sum() / ones_part.sum();
    nu.is_finite().then(|| grad_part + ones_part * nu)
}
