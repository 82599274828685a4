//! ADMM for simplex-constrained QPs.
//!
//! Splits `min uᵀQu + 𝕀_𝒞(z)  s.t. u = z` and iterates
//!
//! ```text
//! u ← (2Q + ρI)⁻¹ (ρ z − η)
//! z ← Π_𝒞(u + η/ρ)
//! η ← η + ρ (u − z)
//! ```
//!
//! until `δ = ‖u − z‖² ≤ ε` or `t_max` iterations. The linear operator in the
//! u-update is factored once per solve.

use std::io::Write;

use crate::linalg::SpdFactor;
use crate::simplex_qp::{polish_simplex_qp, QuadraticForm, SignMask, SimplexQp};
use crate::{Error, RMatrix, RVector, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdmmConfig {
    pub rho: f64,
    pub t_max: usize,
    pub epsilon: f64,
    pub record_trace: bool,
    /// Optional extra stop condition on the dual residual `ρ‖z − z_prev‖`.
    /// Off by default; the primal `δ` test alone is used otherwise.
    pub dual_tolerance: Option<f64>,
    /// Finish with active-set iterations warm-started at the final `z`.
    /// The recovered margin is far more sensitive to the dual point than the
    /// objective is, so the raw iterate is rarely accurate enough to use.
    pub polish: bool,
}

impl AdmmConfig {
    /// Defaults for PSK forms (`ρ = 1`).
    pub fn psk_default() -> Self {
        AdmmConfig {
            rho: 1.0,
            t_max: 500,
            epsilon: 1e-8,
            record_trace: false,
            dual_tolerance: None,
            polish: true,
        }
    }

    /// Defaults for QAM forms (`ρ = 10`).
    pub fn qam_default() -> Self {
        AdmmConfig {
            rho: 10.0,
            ..Self::psk_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || self.t_max == 0 || !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ADMM needs rho > 0, t_max >= 1, epsilon > 0 (got {}, {}, {})",
                self.rho, self.t_max, self.epsilon
            )));
        }
        Ok(())
    }
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self::psk_default()
    }
}

/// Iterate of the ADMM loop.
#[derive(Clone, Debug)]
pub struct AdmmState {
    pub u: RVector,
    pub z: RVector,
    pub eta: RVector,
    pub q: RVector,
    pub iteration: usize,
    pub delta: f64,
}

impl AdmmState {
    fn initial(n: usize) -> Self {
        let bary = RVector::from_element(n, 1.0 / n as f64);
        AdmmState {
            u: bary.clone(),
            z: bary.clone(),
            eta: RVector::zeros(n),
            q: bary,
            iteration: 0,
            delta: f64::INFINITY,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    /// `uᵀQu` at the current `u`.
    pub objective: f64,
    pub delta: f64,
}

#[derive(Clone, Debug)]
pub struct AdmmOutput {
    /// Final `u`, as returned by the iteration.
    pub u: RVector,
    /// Final projected `z`; exactly feasible.
    pub z: RVector,
    pub iterations: usize,
    pub delta: f64,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
    /// Exact optimum from the polishing pass, when it was run and succeeded.
    pub polished: Option<RVector>,
    pub polish_iterations: usize,
}

impl AdmmOutput {
    /// Polished point if available, otherwise `z`.
    pub fn solution(&self) -> &RVector {
        self.polished.as_ref().unwrap_or(&self.z)
    }
}

/// `(2Q + ρI)⁻¹ v`, realized without forming `Q` when `Q = A⁻¹`:
/// `(2A⁻¹ + ρI)⁻¹ = A (2I + ρA)⁻¹`.
enum UpdateOperator {
    Dense(SpdFactor),
    Inverse { a: SpdFactor, shifted: SpdFactor },
}

impl UpdateOperator {
    fn new(form: &QuadraticForm, rho: f64) -> Result<Self> {
        match form {
            QuadraticForm::Dense(q) => {
                let n = q.nrows();
                let m = q * 2.0 + RMatrix::identity(n, n) * rho;
                Ok(UpdateOperator::Dense(SpdFactor::new(m, "2Q + ρI", f64::INFINITY)?))
            }
            QuadraticForm::InverseOf(f) => Ok(UpdateOperator::Inverse {
                shifted: f.shifted(2.0, rho, "2I + ρA")?,
                a: f.clone(),
            }),
        }
    }

    fn apply(&self, v: &RVector) -> RVector {
        match self {
            UpdateOperator::Dense(f) => f.solve(v),
            UpdateOperator::Inverse { a, shifted } => a.apply(&shifted.solve(v)),
        }
    }
}

/// Runs the ADMM iteration on `qp`.
///
/// Hitting `t_max` is not an error: the output carries `converged = false`.
pub fn admm_solve(qp: &SimplexQp, cfg: &AdmmConfig) -> Result<AdmmOutput> {
    admm_solve_traced(qp, cfg, |_| {})
}

/// As [`admm_solve`], calling `observe` with the state after every iteration.
pub fn admm_solve_traced<F: FnMut(&AdmmState)>(
    qp: &SimplexQp,
    cfg: &AdmmConfig,
    mut observe: F,
) -> Result<AdmmOutput> {
    cfg.validate()?;
    let n = qp.dim();
    let op = UpdateOperator::new(&qp.form, cfg.rho)?;
    let mut st = AdmmState::initial(n);
    let mut trace = Vec::new();
    let mut converged = false;

    while st.iteration < cfg.t_max {
        let rhs = &st.z * cfg.rho - &st.eta;
        st.u = op.apply(&rhs);
        st.q = &st.u + &st.eta / cfg.rho;
        let z_prev = std::mem::replace(&mut st.z, project_masked(st.q.as_slice(), &qp.mask).into());
        st.eta += (&st.u - &st.z) * cfg.rho;
        st.delta = (&st.u - &st.z).norm_squared();
        st.iteration += 1;

        if cfg.record_trace {
            trace.push(TraceRow {
                iteration: st.iteration,
                objective: qp.objective(&st.u),
                delta: st.delta,
            });
        }
        observe(&st);

        let dual_ok = cfg
            .dual_tolerance
            .is_none_or(|tol| cfg.rho * (&st.z - &z_prev).norm() <= tol);
        if st.delta <= cfg.epsilon && dual_ok {
            converged = true;
            break;
        }
    }

    let (polished, polish_iterations) = if cfg.polish {
        match polish_simplex_qp(qp, &st.z, 1e-12) {
            Ok(s) => (Some(s.u), s.iterations),
            Err(_) => (None, 0),
        }
    } else {
        (None, 0)
    };

    Ok(AdmmOutput {
        u: st.u,
        z: st.z,
        iterations: st.iteration,
        delta: st.delta,
        converged,
        trace,
        polished,
        polish_iterations,
    })
}

/// ADMM on `Q = Ṽ⁻¹` given the factorization of `Ṽ`.
pub fn solve_qam_form(vtilde: &SpdFactor, mask: SignMask, cfg: &AdmmConfig) -> Result<AdmmOutput> {
    let qp = SimplexQp::new(QuadraticForm::InverseOf(vtilde.clone()), mask)?;
    admm_solve(&qp, cfg)
}

/// Writes a trace as `method,rho,iteration,objective,delta` CSV rows.
pub fn write_trace_csv<W: Write>(
    out: &mut csv::Writer<W>,
    method: &str,
    rho: f64,
    trace: &[TraceRow],
) -> csv::Result<()> {
    for row in trace {
        out.write_record([
            method.to_string(),
            rho.to_string(),
            row.iteration.to_string(),
            format!("{:.12e}", row.objective),
            format!("{:.12e}", row.delta),
        ])?;
    }
    Ok(())
}

/// Euclidean projection onto the probability simplex `{z : 1ᵀz = 1, z ≥ 0}`.
///
/// Sort-based: sort descending, take the largest `L` with
/// `q_[L] − (Σ_{j≤L} q_[j] − 1)/L > 0`, threshold `θ = (Σ_{j≤L} q_[j] − 1)/L`,
/// and `z_i = max(q_i − θ, 0)`. Cost is `O(n log n)` from the sort.
pub fn project_simplex(q: &[f64]) -> Vec<f64> {
    assert!(!q.is_empty(), "cannot project an empty vector");
    let mut sorted = q.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let candidate = (cumsum - 1.0) / (i + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
        }
    }
    q.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Projection onto `{z : 1ᵀz = 1, z_i ≥ 0 for masked i}`.
///
/// With every entry masked this is [`project_simplex`]. Unmasked entries
/// shift by the threshold without clipping: `z_i = q_i − θ`.
pub fn project_masked(q: &[f64], mask: &SignMask) -> Vec<f64> {
    if mask.is_all_nonnegative() {
        return project_simplex(q);
    }
    let n_free = mask.flags().iter().filter(|&&b| !b).count() as f64;
    let free_sum: f64 = q
        .iter()
        .zip(mask.flags())
        .filter(|(_, &b)| !b)
        .map(|(&v, _)| v)
        .sum();
    let mut signed: Vec<f64> = q
        .iter()
        .zip(mask.flags())
        .filter(|(_, &b)| b)
        .map(|(&v, _)| v)
        .collect();
    signed.sort_unstable_by(|a, b| b.total_cmp(a));

    // g(θ) = Σ_signed max(q_i − θ, 0) + free_sum − n_free·θ is strictly
    // decreasing; with the top-L signed entries active, g(θ) = 1 gives
    // θ = (S_L + free_sum − 1) / (L + n_free). Pick the L consistent with
    // q_[L] > θ ≥ q_[L+1].
    let mut cumsum = 0.0;
    let mut theta = (free_sum - 1.0) / n_free;
    for (i, &v) in signed.iter().enumerate() {
        if v <= theta {
            break;
        }
        cumsum += v;
        theta = (cumsum + free_sum - 1.0) / (i as f64 + 1.0 + n_free);
    }
    q.iter()
        .zip(mask.flags())
        .map(|(&v, &nonneg)| if nonneg { (v - theta).max(0.0) } else { v - theta })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn qp(q: RMatrix) -> SimplexQp {
        let n = q.nrows();
        SimplexQp::new(QuadraticForm::Dense(q), SignMask::all_nonnegative(n)).unwrap()
    }

    #[test]
    fn projection_hand_cases() {
        assert_eq!(project_simplex(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let z = project_simplex(&[0.3, 0.3, 0.3]);
        for v in z {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn admm_identity_converges_to_barycenter() {
        for rho in [0.1, 1.0, 10.0] {
            let out = admm_solve(&qp(RMatrix::identity(4, 4)), &AdmmConfig { rho, ..Default::default() }).unwrap();
            assert!(out.converged);
            for &v in out.z.iter() {
                assert!((v - 0.25).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn admm_diag_one_two() {
        let q = RMatrix::from_diagonal(&RVector::from_vec(vec![1.0, 2.0]));
        // δ ≤ ε only bounds ‖u − z‖ by √ε, so tighten ε for 1e-6 accuracy
        let cfg = AdmmConfig {
            epsilon: 1e-14,
            ..AdmmConfig::psk_default()
        };
        let out = admm_solve(&qp(q), &cfg).unwrap();
        assert!(out.converged);
        assert!(out.iterations < 200);
        assert!((out.u[0] - 2.0 / 3.0).abs() < 1e-6);
        assert!((out.u[1] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let q = RMatrix::from_diagonal(&RVector::from_vec(vec![1.0, 2.0, 50.0]));
        let cfg = AdmmConfig {
            t_max: 2,
            epsilon: 1e-30,
            ..Default::default()
        };
        let out = admm_solve(&qp(q), &cfg).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);
    }

    #[test]
    fn inverse_form_of_identity_matches_dense_identity() {
        let n = 5;
        let f = SpdFactor::new(RMatrix::identity(n, n), "I", 1e12).unwrap();
        let cfg = AdmmConfig {
            record_trace: true,
            ..AdmmConfig::qam_default()
        };
        let a = solve_qam_form(&f, SignMask::all_nonnegative(n), &cfg).unwrap();
        let b = admm_solve(&qp(RMatrix::identity(n, n)), &cfg).unwrap();
        assert_eq!(a.iterations, b.iterations);
        for (x, y) in a.trace.iter().zip(&b.trace) {
            assert!((x.objective - y.objective).abs() < 1e-14);
        }
    }

    #[test]
    fn masked_projection_satisfies_kkt() {
        let mask = SignMask::from_flags(vec![true, false, true, false]);
        let q = [0.9, -0.4, -2.0, 0.3];
        let z = project_masked(&q, &mask);
        assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert_eq!(z[2], 0.0);
        // unmasked entries shift by the same θ as active masked entries
        let theta = q[1] - z[1];
        assert!((q[3] - z[3] - theta).abs() < 1e-14);
        assert!((q[0] - z[0] - theta).abs() < 1e-14);
        assert!(q[2] <= theta);
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_translation_invariant(
            v in prop::collection::vec(-5.0f64..5.0, 1..40),
            c in -10.0f64..10.0,
        ) {
            let z = project_simplex(&v);
            let zz = project_simplex(&z);
            for (a, b) in z.iter().zip(&zz) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let zs = project_simplex(&shifted);
            for (a, b) in z.iter().zip(&zs) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            prop_assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(z.iter().all(|&x| x >= 0.0));
        }
    }
}
